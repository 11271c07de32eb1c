#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsscale/corpus/corpus.hpp"
#include "tsscale/model/transformer.hpp"

namespace tsscale::metrics {

struct EvalWindow {
  std::string dataset;
  std::string series_id;
  std::vector<double> context;
  std::vector<double> horizon;
};

/// Point forecast plus optional quantile curves, quantiles[l][j] at levels[l].
struct ForecastResult {
  std::vector<double> point;
  std::vector<double> levels;
  std::vector<std::vector<double>> quantiles;

  /// Sorts each time step's quantiles so the curves never cross.
  void sort_quantiles();
  /// Quantile curve at `level` (matched within 1e-9); throws if absent.
  const std::vector<double>& at_level(double level) const;
};

// Per-window metrics return nullopt when the window must be skipped.

std::optional<double> mape(const EvalWindow& w, std::span<const double> point);
std::optional<double> smape(const EvalWindow& w, std::span<const double> point);
std::optional<double> mase(const EvalWindow& w, std::span<const double> point);
double pinball(double q, double y, double alpha);

/// Levels k / (K + 1), k = 1..K.
std::vector<double> quantile_levels(std::size_t K);

/// 2 * sum pinball / sum |y| over all windows at one level.
std::optional<double> weighted_quantile_loss(std::span<const EvalWindow> windows,
                                             std::span<const ForecastResult> forecasts, double alpha);
/// Mean wQL over the K levels. nullopt when sum |y| = 0.
std::optional<double> crps(std::span<const EvalWindow> windows, std::span<const ForecastResult> forecasts,
                           std::size_t K = 19);

/// Mean per-point negative log density of the horizon.
double nll_eval(const model::MixtureParams& params, std::span<const double> targets);

struct MetricSummary {
  std::map<std::string, double> values;
  std::map<std::string, std::size_t> skipped;
  std::size_t windows = 0;
};

struct EtsFit {
  double alpha = 0.0;
  double level = 0.0;
  double sigma = 0.0;
  double sse = 0.0;
};

/// Simple exponential smoothing with the coefficient chosen on a grid.
EtsFit fit_ses(std::span<const double> context, double grid_step = 0.05);
/// In-sample one-step squared error of SES at one coefficient.
double ses_sse(std::span<const double> context, double alpha, double* final_level = nullptr);

/// Flat SES forecast; quantiles from a Gaussian residual model whose spread
/// grows as sigma * sqrt(1 + (h - 1) alpha^2).
ForecastResult ets_forecast(std::span<const double> context, std::size_t H, std::span<const double> levels = {});

/// Mean NLL of the horizon under the ETS Gaussian predictive, in the same
/// context-standardized units as the model NLL.
double ets_nll(const EvalWindow& w);

/// ETS point forecasts and NLL for every window, aggregated like the model.
MetricSummary ets_summary(std::span<const EvalWindow> windows);

// ---------------------------------------------------------------------------
// Model forecasts

struct PredictOptions {
  /// Windows packed per forward pass.
  std::size_t batch_windows = 64;
  std::size_t tokens_per_row = 0;  // 0: fit the longest window
  /// Quantile levels to produce from mixture samples (empty: point only).
  std::vector<double> levels;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
};

struct WindowPrediction {
  /// Mean NLL over the horizon in context-standardized units.
  double nll = 0.0;
  ForecastResult forecast;  // original units
};

/// Forecasts each window's horizon. Contexts are trimmed from the front to
/// whole patches; horizons are padded to whole patches and truncated back.
/// Encoders predict all horizon patches at once. Decoders score NLL with
/// teacher forcing and roll the point forecast (mixture median) forward
/// patch by patch.
std::vector<WindowPrediction> predict(const model::Transformer& model, std::span<const EvalWindow> windows,
                                      const PredictOptions& options = {});

// ---------------------------------------------------------------------------
// Evaluation

struct Dataset {
  std::string name;
  std::vector<corpus::TimeSeries> series;
};

struct Protocol {
  enum class Kind { rolling, single_window };
  Kind kind = Kind::rolling;
  std::size_t horizon = 64;
  std::size_t context = 128;
};

std::string to_string(Protocol::Kind k);
Protocol::Kind parse_protocol(const std::string& s);

/// Rolling: non-overlapping windows with stride H starting at the first
/// full context. Single window: the last context + H points.
std::vector<EvalWindow> make_windows(const Dataset& dataset, const Protocol& protocol);

/// Aggregates per-window metrics: mean over a series' windows, then over
/// series. Point-metric names: mape, smape, mase, and nll when given.
MetricSummary summarize(std::span<const EvalWindow> windows, std::span<const ForecastResult> forecasts,
                        std::span<const double> nll = {});

struct EvalReport {
  std::map<std::string, MetricSummary> model;
  std::map<std::string, MetricSummary> ets;
  MetricSummary overall;
  MetricSummary overall_ets;
  /// CRPS pooled over all datasets' windows (per-dataset values are primary).
  double crps_pooled = 0.0;
  double crps_pooled_ets = 0.0;
  std::vector<std::string> skipped_datasets;
};

struct EvaluateOptions {
  std::size_t K = 19;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
};

EvalReport evaluate(const model::Transformer& model, std::span<const Dataset> datasets, const Protocol& protocol,
                    const EvaluateOptions& options = {});

}  // namespace tsscale::metrics
