#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "tsscale/metrics/metrics.hpp"

namespace tsscale::metrics {

using model::Architecture;
using model::MixtureParams;
using model::Targets;

namespace {

struct Prepared {
  corpus::WindowSample sample;  // context trimmed, horizon padded
  std::size_t horizon = 0;      // true horizon length
};

Prepared prepare(const EvalWindow& w, std::size_t P) {
  if (w.horizon.empty()) throw std::invalid_argument("evaluation window of '" + w.series_id + "' has no horizon");
  const std::size_t ctx = (w.context.size() / P) * P;
  if (ctx == 0) {
    throw std::invalid_argument("context of '" + w.series_id + "' is shorter than one patch");
  }
  Prepared p;
  p.horizon = w.horizon.size();
  p.sample.source_id = w.series_id;
  p.sample.context.assign(w.context.end() - static_cast<std::ptrdiff_t>(ctx), w.context.end());
  p.sample.horizon = w.horizon;
  const std::size_t padded = (w.horizon.size() + P - 1) / P * P;
  p.sample.horizon.resize(padded, w.horizon.back());
  return p;
}

struct PassOutput {
  corpus::PackedBatch batch;
  model::ModelInput input;
  std::vector<model::WindowScaler> scalers;
  MixtureParams params;
};

PassOutput run_pass(const model::Transformer& model, std::span<const corpus::WindowSample> samples,
                    std::size_t tokens_per_row) {
  const auto& cfg = model.config();
  std::size_t longest = 0;
  for (const auto& s : samples) longest = std::max(longest, (s.context.size() + s.horizon.size()) / cfg.patch_len);
  PassOutput out;
  out.batch = corpus::pack(samples, std::max(tokens_per_row, longest), cfg.patch_len);
  out.input = model::build_input(cfg, out.batch, Targets::horizon, &out.scalers);
  NoGradGuard no_grad;
  out.params = model.forward(out.input).values();
  return out;
}

}  // namespace

std::vector<WindowPrediction> predict(const model::Transformer& model, std::span<const EvalWindow> windows,
                                      const PredictOptions& options) {
  const auto& cfg = model.config();
  const std::size_t P = cfg.patch_len;
  const bool decoder = cfg.architecture == Architecture::decoder_only;
  if (options.batch_windows == 0) throw std::invalid_argument("batch_windows must be >= 1");
  std::mt19937_64 rng(options.seed);
  std::vector<WindowPrediction> out(windows.size());

  for (std::size_t begin = 0; begin < windows.size(); begin += options.batch_windows) {
    const std::size_t end = std::min(windows.size(), begin + options.batch_windows);
    std::vector<Prepared> prepared;
    std::vector<corpus::WindowSample> samples;
    for (std::size_t i = begin; i < end; ++i) {
      prepared.push_back(prepare(windows[i], P));
      samples.push_back(prepared.back().sample);
    }

    // Teacher-forced pass: NLL for both architectures, full forecast for encoders.
    PassOutput pass = run_pass(model, samples, options.tokens_per_row);
    std::vector<double> nll_sum(samples.size(), 0.0);
    auto visit_rows = [&](const PassOutput& po, auto&& fn) {
      for (std::size_t r = 0; r < po.input.predict_rows.size(); ++r) {
        const auto& seg = po.batch.segments[po.input.predict_segment[r]];
        const std::size_t j = po.input.predict_patch[r] - seg.n_context;
        fn(r, seg.window_index, po.input.predict_segment[r], j);
      }
    };
    visit_rows(pass, [&](std::size_t r, std::size_t w, std::size_t, std::size_t j) {
      for (std::size_t i = 0; i < P; ++i) {
        const std::size_t h = j * P + i;
        if (h >= prepared[w].horizon) continue;
        nll_sum[w] -= pass.params.log_density(r * P + i, pass.input.targets[r * P + i]);
      }
    });

    for (std::size_t w = 0; w < samples.size(); ++w) {
      auto& pred = out[begin + w];
      pred.nll = nll_sum[w] / static_cast<double>(prepared[w].horizon);
      pred.forecast.point.assign(prepared[w].horizon, 0.0);
      pred.forecast.levels = options.levels;
      pred.forecast.quantiles.assign(options.levels.size(), std::vector<double>(prepared[w].horizon, 0.0));
    }

    // Writes the forecasts of the finished windows from one pass's distributions.
    auto fill = [&](const PassOutput& po, const std::vector<std::size_t>& local_to_window,
                    const std::vector<char>& finished) {
      visit_rows(po, [&](std::size_t r, std::size_t local, std::size_t seg_index, std::size_t j) {
        const std::size_t w = local_to_window[local];
        if (!finished[w]) return;
        const auto& scaler = po.scalers[seg_index];
        auto& pred = out[begin + w];
        for (std::size_t i = 0; i < P; ++i) {
          const std::size_t h = j * P + i;
          if (h >= prepared[w].horizon) continue;
          const std::size_t point = r * P + i;
          pred.forecast.point[h] = scaler.inverse(po.params.quantile(point, 0.5));
          if (options.levels.empty()) continue;
          auto sorted = model::sample_point(po.params, point, options.n_samples, rng);
          std::sort(sorted.begin(), sorted.end());
          for (std::size_t l = 0; l < options.levels.size(); ++l) {
            const double pos = options.levels[l] * static_cast<double>(sorted.size() - 1);
            const auto lo = static_cast<std::size_t>(std::floor(pos));
            const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
            const double q = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
            pred.forecast.quantiles[l][h] = scaler.inverse(q);
          }
        }
      });
    };

    if (!decoder) {
      std::vector<std::size_t> identity(samples.size());
      for (std::size_t w = 0; w < samples.size(); ++w) identity[w] = w;
      fill(pass, identity, std::vector<char>(samples.size(), 1));
      continue;
    }

    // Decoder rollout: the horizon fed at step k holds the medians of patches
    // 0..k-1 followed by a placeholder patch that no prediction reads. A
    // window's forecast is taken from the step producing its last patch, where
    // every horizon patch is conditioned on the median path.
    std::size_t max_patches = 0;
    for (const auto& s : samples) max_patches = std::max(max_patches, s.horizon.size() / P);
    std::vector<std::vector<double>> medians(samples.size());
    for (std::size_t k = 0; k < max_patches; ++k) {
      std::vector<corpus::WindowSample> step_samples;
      std::vector<std::size_t> which;
      std::vector<char> finished(samples.size(), 0);
      for (std::size_t w = 0; w < samples.size(); ++w) {
        const std::size_t patches = samples[w].horizon.size() / P;
        if (k >= patches) continue;
        auto s = samples[w];
        s.horizon = medians[w];
        s.horizon.resize((k + 1) * P, medians[w].empty() ? s.context.back() : medians[w].back());
        step_samples.push_back(std::move(s));
        which.push_back(w);
        finished[w] = k + 1 == patches;
      }
      const PassOutput step = run_pass(model, step_samples, options.tokens_per_row);
      visit_rows(step, [&](std::size_t r, std::size_t local, std::size_t seg_index, std::size_t j) {
        if (j != k) return;
        for (std::size_t i = 0; i < P; ++i)
          medians[which[local]].push_back(step.scalers[seg_index].inverse(step.params.quantile(r * P + i, 0.5)));
      });
      fill(step, which, finished);
    }
  }
  return out;
}

std::string to_string(Protocol::Kind k) { return k == Protocol::Kind::rolling ? "rolling" : "single_window"; }

Protocol::Kind parse_protocol(const std::string& s) {
  if (s == "rolling") return Protocol::Kind::rolling;
  if (s == "single_window") return Protocol::Kind::single_window;
  throw std::invalid_argument("unknown protocol '" + s + "' (expected rolling or single_window)");
}

std::vector<EvalWindow> make_windows(const Dataset& dataset, const Protocol& protocol) {
  if (protocol.horizon == 0 || protocol.context == 0) {
    throw std::invalid_argument("protocol horizon and context must be positive");
  }
  const std::size_t C = protocol.context, H = protocol.horizon;
  std::vector<EvalWindow> out;
  for (const auto& s : dataset.series) {
    const auto& v = s.values;
    if (v.size() < C + H) continue;
    auto emit = [&](std::size_t start) {
      EvalWindow w;
      w.dataset = dataset.name;
      w.series_id = s.id;
      w.context.assign(v.begin() + static_cast<std::ptrdiff_t>(start - C), v.begin() + static_cast<std::ptrdiff_t>(start));
      w.horizon.assign(v.begin() + static_cast<std::ptrdiff_t>(start),
                       v.begin() + static_cast<std::ptrdiff_t>(start + H));
      out.push_back(std::move(w));
    };
    if (protocol.kind == Protocol::Kind::single_window) {
      emit(v.size() - H);
    } else {
      for (std::size_t start = C; start + H <= v.size(); start += H) emit(start);
    }
  }
  return out;
}

MetricSummary summarize(std::span<const EvalWindow> windows, std::span<const ForecastResult> forecasts,
                        std::span<const double> nll) {
  if (windows.size() != forecasts.size() || (!nll.empty() && nll.size() != windows.size())) {
    throw std::invalid_argument("summarize: windows, forecasts and nll must align");
  }
  MetricSummary out;
  out.windows = windows.size();
  // metric -> series -> (sum, count); std::map keeps the reduction order fixed.
  std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> acc;
  auto add = [&](const std::string& name, const EvalWindow& w, std::optional<double> v) {
    if (!v || !std::isfinite(*v)) {
      ++out.skipped[name];
      return;
    }
    auto& slot = acc[name][w.dataset + "/" + w.series_id];
    slot.first += *v;
    ++slot.second;
  };
  for (std::size_t i = 0; i < windows.size(); ++i) {
    add("mape", windows[i], mape(windows[i], forecasts[i].point));
    add("smape", windows[i], smape(windows[i], forecasts[i].point));
    add("mase", windows[i], mase(windows[i], forecasts[i].point));
    if (!nll.empty()) add("nll", windows[i], nll[i]);
  }
  for (const auto& [name, series] : acc) {
    double total = 0.0;
    for (const auto& [id, slot] : series) total += slot.first / static_cast<double>(slot.second);
    out.values[name] = total / static_cast<double>(series.size());
  }
  return out;
}

EvalReport evaluate(const model::Transformer& model, std::span<const Dataset> datasets, const Protocol& protocol,
                    const EvaluateOptions& options) {
  EvalReport report;
  const auto levels = quantile_levels(options.K);
  std::vector<EvalWindow> all_windows;
  std::vector<ForecastResult> all_model, all_ets;
  std::vector<double> all_nll, all_nll_ets;
  double crps_sum = 0.0, crps_sum_ets = 0.0;
  std::size_t crps_count = 0, crps_count_ets = 0;
  for (const auto& ds : datasets) {
    auto windows = make_windows(ds, protocol);
    if (windows.empty()) {
      report.skipped_datasets.push_back(ds.name);
      continue;
    }
    PredictOptions popts;
    popts.levels = levels;
    popts.n_samples = options.n_samples;
    popts.seed = options.seed;
    const auto preds = predict(model, windows, popts);
    std::vector<ForecastResult> model_fc, ets_fc;
    std::vector<double> nll, nll_ets;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      model_fc.push_back(preds[i].forecast);
      model_fc.back().sort_quantiles();
      nll.push_back(preds[i].nll);
      ets_fc.push_back(ets_forecast(windows[i].context, windows[i].horizon.size(), levels));
      nll_ets.push_back(ets_nll(windows[i]));
    }
    auto m = summarize(windows, model_fc, nll);
    auto e = summarize(windows, ets_fc, nll_ets);
    if (auto c = crps(windows, model_fc, options.K)) {
      m.values["crps"] = *c;
      crps_sum += *c;
      ++crps_count;
    } else {
      ++m.skipped["crps"];
    }
    if (auto c = crps(windows, ets_fc, options.K)) {
      e.values["crps"] = *c;
      crps_sum_ets += *c;
      ++crps_count_ets;
    } else {
      ++e.skipped["crps"];
    }
    report.model[ds.name] = std::move(m);
    report.ets[ds.name] = std::move(e);
    all_windows.insert(all_windows.end(), windows.begin(), windows.end());
    all_model.insert(all_model.end(), model_fc.begin(), model_fc.end());
    all_ets.insert(all_ets.end(), ets_fc.begin(), ets_fc.end());
    all_nll.insert(all_nll.end(), nll.begin(), nll.end());
    all_nll_ets.insert(all_nll_ets.end(), nll_ets.begin(), nll_ets.end());
  }
  if (all_windows.empty()) return report;
  report.overall = summarize(all_windows, all_model, all_nll);
  report.overall_ets = summarize(all_windows, all_ets, all_nll_ets);
  if (crps_count) report.overall.values["crps"] = crps_sum / static_cast<double>(crps_count);
  if (crps_count_ets) report.overall_ets.values["crps"] = crps_sum_ets / static_cast<double>(crps_count_ets);
  report.crps_pooled = crps(all_windows, all_model, options.K).value_or(std::nan(""));
  report.crps_pooled_ets = crps(all_windows, all_ets, options.K).value_or(std::nan(""));
  return report;
}

}  // namespace tsscale::metrics
