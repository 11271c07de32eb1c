#pragma once

#include <set>
#include <string>

#include "json.hpp"
#include "tsscale/corpus/corpus.hpp"
#include "tsscale/metrics/metrics.hpp"
#include "tsscale/model/config.hpp"
#include "tsscale/scaling/scaling.hpp"
#include "tsscale/trainer/trainer.hpp"

namespace tsscale::io {

using Json = nlohmann::ordered_json;

/// Strict object reader: every key must be consumed, or finish() throws
/// std::invalid_argument naming the first unknown key and its path.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path);

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument(path_ + "." + key + " has the wrong type");
    }
  }
  template <typename T>
  void require(const char* key, T& out) {
    if (!j_.contains(key)) throw std::invalid_argument(path_ + "." + key + " is required");
    get(key, out);
  }
  bool has(const char* key) const { return j_.contains(key); }
  const Json& child(const char* key);
  const std::string& path() const { return path_; }
  void finish() const;

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const Json& j, const std::string& path = "model");

Json to_json(const corpus::WindowLimits& w);
corpus::WindowLimits window_limits_from_json(const Json& j, const std::string& path = "windows");

Json to_json(const trainer::TrainConfig& c);
trainer::TrainConfig train_config_from_json(const Json& j, const std::string& path = "train");

Json to_json(const corpus::GeneratorSpec& g);
corpus::GeneratorSpec generator_from_json(const Json& j, const std::string& path = "generator");

Json to_json(const corpus::CurationRules& r);
corpus::CurationRules curation_from_json(const Json& j, const std::string& path = "curation");

Json to_json(const metrics::Protocol& p);
metrics::Protocol protocol_from_json(const Json& j, const std::string& path = "protocol");

Json to_json(const scaling::RunRecord& r);
scaling::RunRecord run_record_from_json(const Json& j);

Json to_json(const scaling::PowerLawFit& f);
scaling::PowerLawFit power_law_fit_from_json(const Json& j);
Json to_json(const trainer::TrainEvent& e, bool with_wall_time);

}  // namespace tsscale::io
