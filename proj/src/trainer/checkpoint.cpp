#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "tsscale/io/json_io.hpp"
#include "tsscale/trainer/trainer.hpp"

namespace tsscale::trainer {

void save_checkpoint(const std::string& path, const model::Transformer& model, std::size_t step) {
  io::Json j;
  j["format"] = "tsscale-checkpoint";
  j["version"] = 1;
  j["step"] = step;
  j["model"] = io::to_json(model.config());
  io::Json weights = io::Json::object();
  for (const auto& p : model.parameters()) {
    weights[p.name] = std::vector<double>(p.tensor.data().begin(), p.tensor.data().end());
  }
  j["weights"] = std::move(weights);
  // Write then rename so a crash never leaves a torn checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + tmp + "'");
    out << j.dump() << '\n';
    if (!out) throw std::runtime_error("failed writing checkpoint '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

model::Transformer load_checkpoint(const std::string& path, std::size_t* step) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  io::Json j;
  try {
    j = io::Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  io::ObjectReader rd(j, "checkpoint");
  std::string format;
  int version = 0;
  std::size_t saved_step = 0;
  rd.require("format", format);
  rd.require("version", version);
  rd.require("step", saved_step);
  if (format != "tsscale-checkpoint" || version != 1) {
    throw std::invalid_argument("checkpoint '" + path + "' has an unsupported format");
  }
  model::Transformer model(io::model_config_from_json(rd.child("model"), "checkpoint.model"), 0);
  const io::Json& weights = rd.child("weights");
  rd.finish();
  if (!weights.is_object() || weights.size() != model.parameters().size()) {
    throw std::invalid_argument("checkpoint '" + path + "' does not match its model config");
  }
  for (auto& p : model.parameters()) {
    if (!weights.contains(p.name)) throw std::invalid_argument("checkpoint is missing weight '" + p.name + "'");
    const auto values = weights.at(p.name).get<std::vector<double>>();
    auto dst = p.tensor.mutable_data();
    if (values.size() != dst.size()) throw std::invalid_argument("checkpoint weight '" + p.name + "' has the wrong size");
    std::copy(values.begin(), values.end(), dst.begin());
  }
  if (step) *step = saved_step;
  return model;
}

}  // namespace tsscale::trainer
