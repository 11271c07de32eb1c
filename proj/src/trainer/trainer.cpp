#include "tsscale/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "tsscale/util/hash.hpp"

namespace tsscale::trainer {

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (total_steps == 0) throw std::invalid_argument("total_steps must be >= 1");
  if (warmup_steps >= total_steps) throw std::invalid_argument("warmup_steps must be < total_steps");
  if (!(max_lr > 0.0) || !std::isfinite(max_lr)) throw std::invalid_argument("max_lr must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("AdamW betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("AdamW eps must be positive");
  if (clip_norm < 0.0) throw std::invalid_argument("clip_norm must be >= 0");
  if (eval_every == 0) throw std::invalid_argument("eval_every must be >= 1");
  if (!(eval_subsample > 0.0 && eval_subsample <= 1.0)) throw std::invalid_argument("eval_subsample must lie in (0, 1]");
  if (!(sampling_cap > 0.0 && sampling_cap <= 1.0)) throw std::invalid_argument("sampling_cap must lie in (0, 1]");
  if (tokens_per_row != 0 && tokens_per_row < windows.max_patches) {
    throw std::invalid_argument("tokens_per_row must fit the longest window");
  }
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step > cfg.total_steps) {
    throw std::invalid_argument("step " + std::to_string(step) + " is beyond total_steps");
  }
  if (step < cfg.warmup_steps) {
    return cfg.max_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.max_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double compute_cost(std::size_t n_params, std::size_t tokens) {
  if (n_params == 0) throw std::invalid_argument("compute cost needs N > 0");
  return 6.0 * static_cast<double>(n_params) * static_cast<double>(tokens);
}

void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::size_t t, double lr, const AdamW& opt, bool decay) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw std::invalid_argument("AdamW buffers must match the parameter size");
  }
  if (t == 0) throw std::invalid_argument("AdamW step counter starts at 1");
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  const double shrink = decay ? 1.0 - lr * opt.weight_decay : 1.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
    param[i] = param[i] * shrink - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.eps);
  }
}

void adamw_step(std::vector<model::NamedParameter>& params, OptimizerState& state, double lr, const AdamW& opt) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("optimizer state does not match the parameters");
  for (auto& p : params) {
    for (double g : p.tensor.mutable_grad()) {
      if (!std::isfinite(g)) throw std::domain_error("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++state.step;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    adamw_update(p.tensor.mutable_data(), p.tensor.mutable_grad(), state.m[k], state.v[k], state.step, lr, opt,
                 p.decay);
  }
}

double clip_grad_norm(std::vector<model::NamedParameter>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    for (double g : p.tensor.mutable_grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.tensor.mutable_grad()) g *= s;
  }
  return norm;
}

EvalSet::EvalSet(std::string split, std::vector<metrics::EvalWindow> windows)
    : split_(std::move(split)), windows_(std::move(windows)) {
  if (split_.empty()) throw std::invalid_argument("evaluation split needs a name");
}

std::span<const metrics::EvalWindow> EvalSet::read(Phase phase) const {
  ++(phase == Phase::training ? training_reads_ : evaluation_reads_);
  return windows_;
}

std::vector<std::size_t> eval_subset(std::size_t n, double fraction, std::uint64_t seed, std::size_t step,
                                     const std::string& split) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("subsample fraction must lie in (0, 1]");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (fraction >= 1.0 || n == 0) return idx;
  const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))), 1, n);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(util::fnv1a(split))};
  std::mt19937_64 rng(seq);
  // Partial Fisher-Yates: the first k entries are a uniform draw.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

scaling::RunRecord evaluate_split(const model::Transformer& model, std::span<const metrics::EvalWindow> windows,
                                  const RunInfo& info, const std::string& split, std::size_t step,
                                  std::size_t tokens) {
  scaling::RunRecord rec;
  rec.run_id = info.run_id;
  rec.N = info.N;
  rec.D = info.D;
  rec.tokens = tokens;
  rec.C = compute_cost(info.N, tokens);
  rec.step = step;
  rec.split = split;
  if (windows.empty()) return rec;
  const auto preds = metrics::predict(model, windows);
  std::vector<metrics::ForecastResult> forecasts;
  std::vector<double> nll;
  for (const auto& p : preds) {
    forecasts.push_back(p.forecast);
    nll.push_back(p.nll);
  }
  rec.metrics = metrics::summarize(windows, forecasts, nll).values;
  return rec;
}

namespace {

std::vector<std::pair<std::string, std::vector<double>>> snapshot(const model::Transformer& model) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (const auto& p : model.parameters())
    out.emplace_back(p.name, std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()));
  return out;
}

// Overflowing activations show up as non-finite or collapsed head outputs.
bool head_is_valid(const model::MixtureTensors& head) {
  auto finite = [](const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
  };
  auto positive = [](const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v > 0.0; });
  };
  if (!finite(head.weights) || !finite(head.loc) || !finite(head.scale) || !positive(head.scale)) return false;
  return head.family != model::HeadFamily::student_t || (finite(head.df) && positive(head.df));
}

void restore(model::Transformer& model, const std::vector<std::pair<std::string, std::vector<double>>>& snap) {
  auto& params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::copy(snap[k].second.begin(), snap[k].second.end(), params[k].tensor.mutable_data().begin());
  }
}

}  // namespace

RunResult train_run(model::Transformer& model, const TrainConfig& cfg, const corpus::CorpusManifest& train,
                    std::span<const EvalSet> eval_sets, const RunInfo& info, const RunHooks& hooks) {
  cfg.validate();
  if (train.series.empty()) throw std::invalid_argument("training corpus is empty");
  if (info.N == 0) throw std::invalid_argument("run needs a positive parameter count");
  const auto& mcfg = model.config();
  auto limits = cfg.windows;
  limits.patch_len = mcfg.patch_len;
  const std::size_t row_tokens = cfg.tokens_per_row == 0 ? limits.max_patches : cfg.tokens_per_row;

  std::vector<std::size_t> lengths;
  for (const auto& s : train.series) {
    if (s.values.size() < 2 * mcfg.patch_len) {
      throw std::invalid_argument("training series '" + s.id + "' is shorter than two patches");
    }
    lengths.push_back(s.values.size());
  }
  const auto weights = corpus::sampling_weights(lengths, cfg.sampling_cap);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::mt19937_64 rng(cfg.seed);

  const AdamW opt{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
  OptimizerState state;
  RunResult result;
  auto last_good = snapshot(model);
  std::size_t last_good_step = 0;
  const auto started = std::chrono::steady_clock::now();

  auto evaluate_all = [&](std::size_t step, bool full) {
    for (const auto& set : eval_sets) {
      const auto all = set.read(EvalSet::Phase::evaluation);
      std::vector<metrics::EvalWindow> chosen;
      for (std::size_t i : eval_subset(all.size(), full ? 1.0 : cfg.eval_subsample, cfg.seed, step, set.split())) {
        chosen.push_back(all[i]);
      }
      auto rec = evaluate_split(model, chosen, info, set.split(), step, result.tokens);
      if (hooks.on_record) hooks.on_record(rec);
      result.records.push_back(std::move(rec));
    }
    last_good = snapshot(model);
    last_good_step = step;
    if (!hooks.checkpoint_path.empty()) save_checkpoint(hooks.checkpoint_path, model, step);
  };

  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    std::vector<corpus::WindowSample> windows;
    windows.reserve(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      windows.push_back(corpus::draw_window(train.series[pick(rng)], rng, limits));
    }
    const auto batch = corpus::pack(windows, row_tokens, mcfg.patch_len);
    const auto input = model::build_input(mcfg, batch, model::Targets::training);

    for (auto& p : model.parameters()) p.tensor.zero_grad();
    const auto head = model.forward(input);
    Tensor loss;
    double value = std::numeric_limits<double>::quiet_NaN();
    if (head_is_valid(head)) {
      loss = model::mixture_nll(head, input.targets);
      value = loss.item();
    }
    double norm = 0.0;
    bool diverged = !std::isfinite(value);
    if (!diverged) {
      loss.backward();
      norm = clip_grad_norm(model.parameters(), cfg.clip_norm);
      diverged = !std::isfinite(norm);
    }
    std::string what = "loss";
    if (diverged) {
      what = std::isfinite(value) ? "gradient" : "loss";
    } else {
      adamw_step(model.parameters(), state, lr_at(step, cfg), opt);
      for (const auto& p : model.parameters()) {
        if (!std::all_of(p.tensor.data().begin(), p.tensor.data().end(), [](double v) { return std::isfinite(v); })) {
          diverged = true;
          what = "weights";
          break;
        }
      }
    }
    if (diverged) {
      restore(model, last_good);
      if (!hooks.checkpoint_path.empty()) save_checkpoint(hooks.checkpoint_path, model, last_good_step);
      result.failed = true;
      result.failure = "non-finite " + what + " at step " + std::to_string(step) + "; weights restored to step " +
                       std::to_string(last_good_step);
      break;
    }
    const double lr = lr_at(step, cfg);

    result.tokens += batch.rows * batch.tokens_per_row;
    std::size_t segment_tokens = 0;
    for (const auto& seg : batch.segments) segment_tokens += seg.n_tokens();
    result.tokens_check += segment_tokens + batch.padding_tokens();
    result.steps_completed = step;

    TrainEvent ev;
    ev.step = step;
    ev.train_loss = value;
    ev.lr = lr;
    ev.grad_norm = norm;
    ev.tokens = result.tokens;
    ev.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (hooks.on_event) hooks.on_event(ev);
    result.events.push_back(ev);

    if (step == cfg.total_steps) {
      evaluate_all(step, true);
    } else if (step % cfg.eval_every == 0) {
      evaluate_all(step, false);
    }
  }

  for (const auto& set : eval_sets) {
    if (set.held_out()) result.held_out_training_reads += set.reads(EvalSet::Phase::training);
  }
  return result;
}

}  // namespace tsscale::trainer
