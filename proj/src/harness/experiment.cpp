#include "tsscale/harness/experiment.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include "tsscale/util/hash.hpp"

namespace tsscale::harness {

namespace {

// Library parsers throw std::invalid_argument; the harness reports them as data errors.
template <typename F>
auto as_data_error(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("config: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
}

GeneratorGroup group_from_json(const io::Json& j, const std::string& path) {
  GeneratorGroup g;
  io::ObjectReader rd(j, path);
  rd.require("count", g.count);
  g.spec = io::generator_from_json(rd.child("generator"), path + ".generator");
  rd.finish();
  if (g.count == 0) throw std::invalid_argument(path + ".count must be >= 1");
  return g;
}

}  // namespace

ExperimentConfig parse_experiment(const io::Json& j) {
  return as_data_error([&] {
    ExperimentConfig c;
    io::ObjectReader rd(j, "config");
    rd.require("version", c.version);
    if (c.version != kConfigVersion) {
      throw std::invalid_argument("unsupported config version " + std::to_string(c.version));
    }
    rd.get("seed", c.seed);
    rd.get("output_dir", c.output_dir);
    rd.get("parallelism", c.parallelism);
    if (c.parallelism == 0) throw std::invalid_argument("config.parallelism must be >= 1");

    {
      const auto& cj = rd.child("corpus");
      io::ObjectReader cr(cj, "config.corpus");
      cr.get("series_length", c.corpus.series_length);
      const auto& gens = cr.child("generators");
      if (!gens.is_array() || gens.empty()) throw std::invalid_argument("config.corpus.generators must be a non-empty list");
      std::set<std::string> domains;
      for (std::size_t i = 0; i < gens.size(); ++i) {
        auto g = group_from_json(gens[i], "config.corpus.generators[" + std::to_string(i) + "]");
        if (!domains.insert(g.spec.domain).second) {
          throw std::invalid_argument("config.corpus.generators: duplicate domain '" + g.spec.domain + "'");
        }
        c.corpus.generators.push_back(std::move(g));
      }
      if (cj.contains("held_out")) {
        const auto& held = cr.child("held_out");
        if (!held.is_array()) throw std::invalid_argument("config.corpus.held_out must be a list");
        std::set<std::string> names;
        for (std::size_t i = 0; i < held.size(); ++i) {
          const std::string path = "config.corpus.held_out[" + std::to_string(i) + "]";
          io::ObjectReader hr(held[i], path);
          HeldOutSet h;
          hr.require("name", h.name);
          hr.require("count", h.count);
          h.spec = io::generator_from_json(hr.child("generator"), path + ".generator");
          hr.finish();
          if (h.name.empty() || h.count == 0) throw std::invalid_argument(path + " needs a name and count >= 1");
          if (!names.insert(h.name).second) throw std::invalid_argument(path + ": duplicate name '" + h.name + "'");
          if (domains.count(h.spec.domain)) {
            throw std::invalid_argument(path + " reuses training domain '" + h.spec.domain + "'");
          }
          c.corpus.held_out.push_back(std::move(h));
        }
      }
      if (cj.contains("curation")) c.corpus.curation = io::curation_from_json(cr.child("curation"), "config.corpus.curation");
      cr.get("subsets", c.corpus.subsets);
      cr.get("validation_fraction", c.corpus.validation_fraction);
      cr.finish();
      if (c.corpus.series_length == 0) throw std::invalid_argument("config.corpus.series_length must be >= 1");
      if (!(c.corpus.validation_fraction > 0.0 && c.corpus.validation_fraction < 1.0)) {
        throw std::invalid_argument("config.corpus.validation_fraction must lie in (0, 1)");
      }
    }

    {
      const auto& models = rd.child("models");
      if (!models.is_array() || models.empty()) throw std::invalid_argument("config.models must be a non-empty list");
      std::set<std::string> names;
      for (std::size_t i = 0; i < models.size(); ++i) {
        const std::string path = "config.models[" + std::to_string(i) + "]";
        if (!models[i].is_object() || !models[i].contains("name")) throw std::invalid_argument(path + ".name is required");
        NamedModel m;
        m.name = models[i].at("name").get<std::string>();
        io::Json rest = models[i];
        rest.erase("name");
        m.config = io::model_config_from_json(rest, path);
        if (m.name.empty() || m.name.find_first_of("/\\ ") != std::string::npos) {
          throw std::invalid_argument(path + ".name must be non-empty without spaces or slashes");
        }
        if (!names.insert(m.name).second) throw std::invalid_argument(path + ": duplicate name '" + m.name + "'");
        c.models.push_back(std::move(m));
      }
    }
    if (j.contains("train")) c.train = io::train_config_from_json(rd.child("train"), "config.train");
    if (j.contains("protocol")) c.protocol = io::protocol_from_json(rd.child("protocol"), "config.protocol");
    if (j.contains("analysis")) {
      io::ObjectReader ar(rd.child("analysis"), "config.analysis");
      ar.get("metrics", c.analysis.metrics);
      ar.get("buckets_per_decade", c.analysis.buckets_per_decade);
      ar.get("min_r_squared", c.analysis.min_r_squared);
      ar.finish();
      if (c.analysis.metrics.empty()) throw std::invalid_argument("config.analysis.metrics must not be empty");
      if (c.analysis.buckets_per_decade == 0) throw std::invalid_argument("config.analysis.buckets_per_decade must be >= 1");
    }
    rd.finish();
    return c;
  });
}

io::Json to_json(const ExperimentConfig& c) {
  io::Json j;
  j["version"] = c.version;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["parallelism"] = c.parallelism;
  io::Json corpus;
  corpus["series_length"] = c.corpus.series_length;
  corpus["generators"] = io::Json::array();
  for (const auto& g : c.corpus.generators) {
    corpus["generators"].push_back(io::Json{{"count", g.count}, {"generator", io::to_json(g.spec)}});
  }
  corpus["held_out"] = io::Json::array();
  for (const auto& h : c.corpus.held_out) {
    corpus["held_out"].push_back(io::Json{{"name", h.name}, {"count", h.count}, {"generator", io::to_json(h.spec)}});
  }
  corpus["curation"] = io::to_json(c.corpus.curation);
  corpus["subsets"] = c.corpus.subsets;
  corpus["validation_fraction"] = c.corpus.validation_fraction;
  j["corpus"] = std::move(corpus);
  j["models"] = io::Json::array();
  for (const auto& m : c.models) {
    io::Json mj{{"name", m.name}};
    const auto cj = io::to_json(m.config);
    for (const auto& [k, v] : cj.items()) mj[k] = v;
    j["models"].push_back(std::move(mj));
  }
  j["train"] = io::to_json(c.train);
  j["protocol"] = io::to_json(c.protocol);
  j["analysis"] = io::Json{{"metrics", c.analysis.metrics},
                           {"buckets_per_decade", c.analysis.buckets_per_decade},
                           {"min_r_squared", c.analysis.min_r_squared}};
  return j;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path + "'");
  io::Json j;
  try {
    j = io::Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_experiment(j);
}

void apply_environment(ExperimentConfig& c) {
  if (const char* dir = std::getenv("TSSCALE_OUTPUT_DIR"); dir && *dir) c.output_dir = dir;
  if (const char* par = std::getenv("TSSCALE_PARALLELISM"); par && *par) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(par, &end, 10);
    if (*end != '\0' || v == 0) throw UsageError("TSSCALE_PARALLELISM must be a positive integer");
    c.parallelism = v;
  }
}

std::uint64_t run_seed(std::uint64_t global_seed, const std::string& run_id) {
  return util::fnv1a(run_id, global_seed);
}

std::uint64_t generator_seed(std::uint64_t global_seed, const std::string& role, const corpus::GeneratorSpec& spec) {
  return util::fnv1a(role + ":" + spec.domain + ":" + std::to_string(spec.seed), global_seed);
}

std::string fingerprint(const model::ModelConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(util::fnv1a(io::to_json(c).dump())));
  return buf;
}

}  // namespace tsscale::harness
