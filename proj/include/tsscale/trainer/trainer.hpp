#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tsscale/corpus/corpus.hpp"
#include "tsscale/metrics/metrics.hpp"
#include "tsscale/model/transformer.hpp"
#include "tsscale/scaling/scaling.hpp"

namespace tsscale::trainer {

struct TrainConfig {
  std::size_t batch_size = 32;
  double max_lr = 1e-3;
  std::size_t total_steps = 2000;
  std::size_t warmup_steps = 200;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 1.0;
  std::size_t eval_every = 200;
  double eval_subsample = 0.10;
  /// Probability cap per series when sampling training windows.
  double sampling_cap = 0.05;
  /// Packed row length in patches; 0 means windows.max_patches.
  std::size_t tokens_per_row = 0;
  corpus::WindowLimits windows;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Linear warmup from 0 to max_lr, then cosine decay to 0 at total_steps.
double lr_at(std::size_t step, const TrainConfig& cfg);

/// C = 6 N tokens.
double compute_cost(std::size_t n_params, std::size_t tokens);

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

/// One AdamW update of a single array. `t` is the 1-based step used for bias
/// correction; decay (if any) is decoupled and applied before the moment step.
void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::size_t t, double lr, const AdamW& opt, bool decay);

/// Updates every parameter from its accumulated gradient. Weight decay only
/// touches parameters flagged `decay`. Non-finite gradients throw
/// std::domain_error naming the parameter.
void adamw_step(std::vector<model::NamedParameter>& params, OptimizerState& state, double lr, const AdamW& opt);

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_grad_norm(std::vector<model::NamedParameter>& params, double max_norm);

// ---------------------------------------------------------------------------
// Evaluation sets with an access audit

/// Windows of one split. Reads are counted by phase so a run can prove it
/// never touched held-out data while training.
class EvalSet {
 public:
  enum class Phase { training, evaluation };

  EvalSet(std::string split, std::vector<metrics::EvalWindow> windows);

  const std::string& split() const { return split_; }
  bool held_out() const { return split_.rfind("ood:", 0) == 0; }
  std::size_t size() const { return windows_.size(); }
  std::span<const metrics::EvalWindow> read(Phase phase) const;
  std::size_t reads(Phase phase) const { return phase == Phase::training ? training_reads_ : evaluation_reads_; }

 private:
  std::string split_;
  std::vector<metrics::EvalWindow> windows_;
  mutable std::size_t training_reads_ = 0;
  mutable std::size_t evaluation_reads_ = 0;
};

/// Windows evaluated at one event: a seeded subsample for periodic events,
/// the full set when `fraction` is 1.
std::vector<std::size_t> eval_subset(std::size_t n, double fraction, std::uint64_t seed, std::size_t step,
                                     const std::string& split);

// ---------------------------------------------------------------------------
// Training runs

struct TrainEvent {
  std::size_t step = 0;
  double train_loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::size_t tokens = 0;
  double wall_time = 0.0;  // seconds since the run started
};

struct RunInfo {
  std::string run_id;
  /// Core parameter count used for N and C.
  std::size_t N = 0;
  /// Training points available to the run.
  std::size_t D = 0;
};

struct RunHooks {
  std::function<void(const TrainEvent&)> on_event;
  std::function<void(const scaling::RunRecord&)> on_record;
  /// Written at every evaluation and at the end; empty disables.
  std::string checkpoint_path;
};

struct RunResult {
  std::vector<TrainEvent> events;
  std::vector<scaling::RunRecord> records;
  bool failed = false;
  std::string failure;
  std::size_t steps_completed = 0;
  /// Tokens counted as rows x row length, and independently as segment
  /// tokens plus padding.
  std::size_t tokens = 0;
  std::size_t tokens_check = 0;
  /// Reads of held-out sets outside evaluation (must stay 0).
  std::size_t held_out_training_reads = 0;
};

/// Trains `model` in place. Each step samples batch_size series by capped
/// length weights, draws one window per series, packs them, minimizes the
/// mean mixture NLL and applies clip + AdamW. Every eval_every steps and at
/// the end every eval set is scored (subsampled, except the final event).
/// A non-finite loss halts the run, restores the last evaluated weights and
/// marks it failed.
RunResult train_run(model::Transformer& model, const TrainConfig& cfg, const corpus::CorpusManifest& train,
                    std::span<const EvalSet> eval_sets, const RunInfo& info, const RunHooks& hooks = {});

/// Scores one split at one step into a record (nll, mape, smape, mase).
scaling::RunRecord evaluate_split(const model::Transformer& model, std::span<const metrics::EvalWindow> windows,
                                  const RunInfo& info, const std::string& split, std::size_t step,
                                  std::size_t tokens);

// ---------------------------------------------------------------------------
// Checkpoints

/// JSON file holding the model config, step and all weights.
void save_checkpoint(const std::string& path, const model::Transformer& model, std::size_t step);
/// Rebuilds the model; throws std::invalid_argument on malformed content.
model::Transformer load_checkpoint(const std::string& path, std::size_t* step = nullptr);

}  // namespace tsscale::trainer
