#include "tsscale/metrics/metrics.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace tsscale::metrics {

void ForecastResult::sort_quantiles() {
  if (quantiles.empty()) return;
  const std::size_t H = quantiles.front().size();
  std::vector<double> column(quantiles.size());
  for (std::size_t j = 0; j < H; ++j) {
    for (std::size_t l = 0; l < quantiles.size(); ++l) column[l] = quantiles[l][j];
    std::sort(column.begin(), column.end());
    for (std::size_t l = 0; l < quantiles.size(); ++l) quantiles[l][j] = column[l];
  }
}

const std::vector<double>& ForecastResult::at_level(double level) const {
  for (std::size_t l = 0; l < levels.size(); ++l) {
    if (std::abs(levels[l] - level) < 1e-9) return quantiles.at(l);
  }
  throw std::invalid_argument("forecast has no quantile at level " + std::to_string(level));
}

namespace {

void check_lengths(const EvalWindow& w, std::span<const double> point) {
  if (w.horizon.empty()) throw std::invalid_argument("evaluation window has an empty horizon");
  if (point.size() != w.horizon.size()) {
    throw std::invalid_argument("forecast length " + std::to_string(point.size()) + " differs from horizon " +
                                std::to_string(w.horizon.size()));
  }
}

}  // namespace

std::optional<double> mape(const EvalWindow& w, std::span<const double> point) {
  check_lengths(w, point);
  double total = 0.0;
  for (std::size_t j = 0; j < point.size(); ++j) {
    if (w.horizon[j] == 0.0) return std::nullopt;
    total += std::abs(w.horizon[j] - point[j]) / std::abs(w.horizon[j]);
  }
  return 100.0 * total / static_cast<double>(point.size());
}

std::optional<double> smape(const EvalWindow& w, std::span<const double> point) {
  check_lengths(w, point);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t j = 0; j < point.size(); ++j) {
    const double denom = std::abs(w.horizon[j]) + std::abs(point[j]);
    if (denom == 0.0) continue;
    total += std::abs(w.horizon[j] - point[j]) / denom;
    ++used;
  }
  if (used == 0) return std::nullopt;
  return 200.0 * total / static_cast<double>(used);
}

std::optional<double> mase(const EvalWindow& w, std::span<const double> point) {
  check_lengths(w, point);
  std::vector<double> truth(w.context);
  truth.insert(truth.end(), w.horizon.begin(), w.horizon.end());
  if (truth.size() < 2) return std::nullopt;
  double naive = 0.0;
  for (std::size_t k = 1; k < truth.size(); ++k) naive += std::abs(truth[k] - truth[k - 1]);
  naive /= static_cast<double>(truth.size() - 1);
  if (naive == 0.0) return std::nullopt;
  double err = 0.0;
  for (std::size_t j = 0; j < point.size(); ++j) err += std::abs(w.horizon[j] - point[j]);
  return err / static_cast<double>(point.size()) / naive;
}

double pinball(double q, double y, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("pinball level must lie in (0, 1)");
  return (alpha - (y < q ? 1.0 : 0.0)) * (y - q);
}

std::vector<double> quantile_levels(std::size_t K) {
  if (K == 0) throw std::invalid_argument("need at least one quantile level");
  std::vector<double> levels(K);
  for (std::size_t k = 0; k < K; ++k) levels[k] = static_cast<double>(k + 1) / static_cast<double>(K + 1);
  return levels;
}

std::optional<double> weighted_quantile_loss(std::span<const EvalWindow> windows,
                                             std::span<const ForecastResult> forecasts, double alpha) {
  if (windows.size() != forecasts.size()) throw std::invalid_argument("one forecast per window is required");
  double loss = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& q = forecasts[i].at_level(alpha);
    check_lengths(windows[i], q);
    for (std::size_t j = 0; j < q.size(); ++j) {
      loss += pinball(q[j], windows[i].horizon[j], alpha);
      scale += std::abs(windows[i].horizon[j]);
    }
  }
  if (scale == 0.0) return std::nullopt;
  return 2.0 * loss / scale;
}

std::optional<double> crps(std::span<const EvalWindow> windows, std::span<const ForecastResult> forecasts,
                           std::size_t K) {
  const auto levels = quantile_levels(K);
  double total = 0.0;
  for (double a : levels) {
    const auto w = weighted_quantile_loss(windows, forecasts, a);
    if (!w) return std::nullopt;
    total += *w;
  }
  return total / static_cast<double>(K);
}

double nll_eval(const model::MixtureParams& params, std::span<const double> targets) {
  return model::mixture_nll(params, targets);
}

double ses_sse(std::span<const double> context, double alpha, double* final_level) {
  if (context.empty()) throw std::invalid_argument("ses needs a non-empty context");
  double level = context[0], sse = 0.0;
  for (std::size_t t = 1; t < context.size(); ++t) {
    const double e = context[t] - level;
    sse += e * e;
    level += alpha * e;
  }
  if (final_level) *final_level = level;
  return sse;
}

EtsFit fit_ses(std::span<const double> context, double grid_step) {
  if (context.size() < 3) throw std::invalid_argument("ETS needs a context of at least 3 points");
  if (!(grid_step > 0.0 && grid_step < 1.0)) throw std::invalid_argument("ETS grid step must lie in (0, 1)");
  EtsFit best;
  best.sse = std::numeric_limits<double>::infinity();
  const auto steps = static_cast<std::size_t>(std::floor(1.0 / grid_step + 1e-9));
  for (std::size_t i = 1; i < steps; ++i) {
    const double a = static_cast<double>(i) * grid_step;
    double level = 0.0;
    const double sse = ses_sse(context, a, &level);
    if (sse < best.sse) {
      best.alpha = a;
      best.level = level;
      best.sse = sse;
    }
  }
  best.sigma = std::sqrt(best.sse / static_cast<double>(context.size() - 1));
  return best;
}

ForecastResult ets_forecast(std::span<const double> context, std::size_t H, std::span<const double> levels) {
  if (H == 0) throw std::invalid_argument("ETS horizon must be >= 1");
  const EtsFit fit = fit_ses(context);
  ForecastResult out;
  out.point.assign(H, fit.level);
  out.levels.assign(levels.begin(), levels.end());
  for (double a : levels) {
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("quantile level must lie in (0, 1)");
    const double z = std::numbers::sqrt2 * boost::math::erf_inv(2.0 * a - 1.0);
    std::vector<double> q(H);
    for (std::size_t h = 1; h <= H; ++h) {
      const double spread = fit.sigma * std::sqrt(1.0 + static_cast<double>(h - 1) * fit.alpha * fit.alpha);
      q[h - 1] = fit.level + z * spread;
    }
    out.quantiles.push_back(std::move(q));
  }
  return out;
}

double ets_nll(const EvalWindow& w) {
  if (w.horizon.empty()) throw std::invalid_argument("evaluation window has an empty horizon");
  const EtsFit fit = fit_ses(w.context);
  const auto scaler = model::WindowScaler::fit(w.context);
  double total = 0.0;
  for (std::size_t h = 1; h <= w.horizon.size(); ++h) {
    const double sd =
        fit.sigma * std::sqrt(1.0 + static_cast<double>(h - 1) * fit.alpha * fit.alpha) / scaler.scale;
    const double z = (scaler.forward(w.horizon[h - 1]) - scaler.forward(fit.level)) / sd;
    total += 0.5 * z * z + std::log(sd) + 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return total / static_cast<double>(w.horizon.size());
}

MetricSummary ets_summary(std::span<const EvalWindow> windows) {
  std::vector<ForecastResult> forecasts;
  std::vector<double> nll;
  for (const auto& w : windows) {
    forecasts.push_back(ets_forecast(w.context, w.horizon.size()));
    nll.push_back(ets_nll(w));
  }
  return summarize(windows, forecasts, nll);
}

}  // namespace tsscale::metrics
