#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsscale/corpus/corpus.hpp"
#include "tsscale/harness/experiment.hpp"
#include "tsscale/harness/store.hpp"
#include "tsscale/trainer/trainer.hpp"

namespace tsscale::harness {

// ---------------------------------------------------------------------------
// Corpus on disk: <out>/corpus/{corpus.jsonl, heldout-<name>.jsonl, subsets.json}

struct LoadedCorpus {
  corpus::CorpusManifest curated;
  std::vector<corpus::Subset> subsets;  // ascending size
  std::vector<std::pair<std::string, corpus::CorpusManifest>> held_out;
};

std::filesystem::path corpus_dir(const ExperimentConfig& cfg);
LoadedCorpus load_corpus(const ExperimentConfig& cfg);

/// "id_validation" from the largest subset's validation series, then one
/// "ood:<name>" set per held-out family.
std::vector<trainer::EvalSet> build_eval_sets(const ExperimentConfig& cfg, const LoadedCorpus& lc);

struct PlannedRun {
  std::string run_id;
  std::size_t model_index = 0;
  std::size_t subset_index = 0;
  std::uint64_t seed = 0;
};

/// Model grid x subset grid, model-major. Ids are the model name when there
/// is at most one subset and "<model>_D<target points>" otherwise.
std::vector<PlannedRun> plan_runs(const ExperimentConfig& cfg);

/// Subset sizes in ascending order; empty when the whole corpus is one subset.
std::vector<std::size_t> subset_sizes(const ExperimentConfig& cfg);

/// Points used to fit one axis: N uses the runs at the largest D, D the runs
/// at the largest N, C the compute frontier.
std::vector<scaling::Point> axis_points(std::span<const scaling::RunRecord> records, scaling::Axis axis,
                                        const std::string& metric, const std::string& split,
                                        std::size_t buckets_per_decade);

/// Records of every complete run in the store.
std::vector<scaling::RunRecord> complete_records(const RunStore& store);

// ---------------------------------------------------------------------------
// Commands. Each writes a human-readable summary to `out`.

void cmd_generate(const ExperimentConfig& cfg, std::ostream& out);

struct SweepOptions {
  bool resume = false;
  /// Overrides cfg.parallelism when nonzero.
  std::size_t parallelism = 0;
  /// Stop after starting this many runs (0: no limit). Used to emulate an
  /// interrupted sweep.
  std::size_t max_runs = 0;
};

void cmd_sweep(const ExperimentConfig& cfg, const SweepOptions& opts, std::ostream& out);

struct FitOptions {
  std::optional<scaling::Axis> axis;
  std::optional<std::string> metric;
  std::optional<std::string> split;
};

void cmd_fit(const ExperimentConfig& cfg, const FitOptions& opts, std::ostream& out);

/// Returns the written files.
std::vector<std::filesystem::path> cmd_plot(const ExperimentConfig& cfg, std::ostream& out);

struct EvaluateCmdOptions {
  std::string run_id;
  /// Explicit checkpoint file; defaults to the run's checkpoint.
  std::string checkpoint;
  /// CSV (one series) or JSONL corpus files; empty means the store's splits.
  std::vector<std::string> datasets;
};

/// Returns the report path.
std::filesystem::path cmd_evaluate(const ExperimentConfig& cfg, const EvaluateCmdOptions& opts, std::ostream& out);

std::filesystem::path cmd_report(const ExperimentConfig& cfg, std::ostream& out);

/// File-name-safe form of a split name ("ood:x" -> "ood-x").
std::string file_token(const std::string& s);

}  // namespace tsscale::harness
