#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsscale/corpus/corpus.hpp"
#include "tsscale/io/json_io.hpp"
#include "tsscale/metrics/metrics.hpp"
#include "tsscale/model/config.hpp"
#include "tsscale/trainer/trainer.hpp"

namespace tsscale::harness {

// Errors mapped to CLI exit codes: usage 1, data 2, run failure 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RunFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kConfigVersion = 1;

struct GeneratorGroup {
  std::size_t count = 0;
  corpus::GeneratorSpec spec;
};

/// A family kept out of training entirely and scored as split "ood:<name>".
struct HeldOutSet {
  std::string name;
  std::size_t count = 0;
  corpus::GeneratorSpec spec;
};

struct CorpusPlan {
  std::size_t series_length = 1024;
  std::vector<GeneratorGroup> generators;
  std::vector<HeldOutSet> held_out;
  corpus::CurationRules curation;
  /// Nested subset sizes in points; empty means one subset of the whole corpus.
  std::vector<std::size_t> subsets;
  double validation_fraction = 0.05;
};

struct NamedModel {
  std::string name;
  model::ModelConfig config;
};

struct AnalysisOptions {
  std::vector<std::string> metrics{"nll", "mape"};
  std::size_t buckets_per_decade = 4;
  double min_r_squared = 0.8;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 0;
  std::string output_dir = "tsscale-out";
  CorpusPlan corpus;
  std::vector<NamedModel> models;
  trainer::TrainConfig train;
  metrics::Protocol protocol;
  AnalysisOptions analysis;
  std::size_t parallelism = 1;
};

/// Throws DataError on schema violations (unknown keys included).
ExperimentConfig parse_experiment(const io::Json& j);
io::Json to_json(const ExperimentConfig& c);
ExperimentConfig load_experiment(const std::string& path);

/// Applies TSSCALE_OUTPUT_DIR and TSSCALE_PARALLELISM when set.
void apply_environment(ExperimentConfig& c);

/// Seed of one run: FNV-1a of the run id, seeded with the global seed.
std::uint64_t run_seed(std::uint64_t global_seed, const std::string& run_id);
/// Generator seed: FNV-1a of "<role>:<domain>:<spec seed>" under the global seed.
std::uint64_t generator_seed(std::uint64_t global_seed, const std::string& role, const corpus::GeneratorSpec& spec);

/// Stable fingerprint of a model config (hex FNV-1a of its canonical JSON).
std::string fingerprint(const model::ModelConfig& c);

}  // namespace tsscale::harness
