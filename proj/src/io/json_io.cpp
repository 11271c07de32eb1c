#include "tsscale/io/json_io.hpp"

#include <cmath>
#include <stdexcept>

namespace tsscale::io {

ObjectReader::ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) throw std::invalid_argument(path_ + " must be a JSON object");
}

const Json& ObjectReader::child(const char* key) {
  seen_.insert(key);
  if (!j_.contains(key)) throw std::invalid_argument(path_ + "." + key + " is required");
  return j_.at(key);
}

void ObjectReader::finish() const {
  for (const auto& [key, value] : j_.items()) {
    if (!seen_.count(key)) throw std::invalid_argument("unknown key '" + path_ + "." + key + "'");
  }
}

namespace {

Json range_json(const corpus::Range& r) { return Json::array({r.lo, r.hi}); }

void get_range(ObjectReader& rd, const char* key, corpus::Range& out) {
  if (!rd.has(key)) return;
  const Json& v = rd.child(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw std::invalid_argument(rd.path() + "." + key + " must be a [lo, hi] pair");
  }
  out = {v[0].get<double>(), v[1].get<double>()};
}

template <typename Enum, typename Parse>
void get_enum(ObjectReader& rd, const char* key, Enum& out, Parse parse) {
  std::string text;
  rd.get(key, text);
  if (!text.empty()) out = parse(text);
}

}  // namespace

Json to_json(const model::ModelConfig& c) {
  Json j;
  j["architecture"] = model::to_string(c.architecture);
  j["n_layer"] = c.n_layer;
  j["d_m"] = c.d_m;
  j["n_heads"] = c.n_heads;
  j["d_head"] = c.d_head;
  j["d_ff"] = c.d_ff;
  j["patch_len"] = c.patch_len;
  j["components"] = c.components;
  j["head_family"] = model::to_string(c.head_family);
  j["df_floor"] = c.df_floor;
  j["rope_base"] = c.rope_base;
  return j;
}

model::ModelConfig model_config_from_json(const Json& j, const std::string& path) {
  model::ModelConfig c;
  ObjectReader rd(j, path);
  get_enum(rd, "architecture", c.architecture, model::parse_architecture);
  rd.get("n_layer", c.n_layer);
  rd.get("d_m", c.d_m);
  // Standard shapes may omit the derived sizes.
  c.n_heads = 1;
  c.d_head = 0;
  c.d_ff = 0;
  rd.get("n_heads", c.n_heads);
  rd.get("d_head", c.d_head);
  rd.get("d_ff", c.d_ff);
  if (c.n_heads == 0) throw std::invalid_argument(path + ".n_heads must be >= 1");
  if (c.d_head == 0) c.d_head = c.d_m / c.n_heads;
  if (c.d_ff == 0) c.d_ff = 4 * c.d_m;
  rd.get("patch_len", c.patch_len);
  rd.get("components", c.components);
  get_enum(rd, "head_family", c.head_family, model::parse_head_family);
  rd.get("df_floor", c.df_floor);
  rd.get("rope_base", c.rope_base);
  rd.finish();
  c.validate();
  return c;
}

Json to_json(const corpus::WindowLimits& w) {
  Json j;
  j["min_patches"] = w.min_patches;
  j["max_patches"] = w.max_patches;
  j["min_horizon_fraction"] = w.min_horizon_fraction;
  j["max_horizon_fraction"] = w.max_horizon_fraction;
  return j;
}

corpus::WindowLimits window_limits_from_json(const Json& j, const std::string& path) {
  corpus::WindowLimits w;
  ObjectReader rd(j, path);
  rd.get("min_patches", w.min_patches);
  rd.get("max_patches", w.max_patches);
  rd.get("min_horizon_fraction", w.min_horizon_fraction);
  rd.get("max_horizon_fraction", w.max_horizon_fraction);
  rd.finish();
  return w;
}

Json to_json(const trainer::TrainConfig& c) {
  Json j;
  j["batch_size"] = c.batch_size;
  j["max_lr"] = c.max_lr;
  j["total_steps"] = c.total_steps;
  j["warmup_steps"] = c.warmup_steps;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["clip_norm"] = c.clip_norm;
  j["eval_every"] = c.eval_every;
  j["eval_subsample"] = c.eval_subsample;
  j["sampling_cap"] = c.sampling_cap;
  j["tokens_per_row"] = c.tokens_per_row;
  j["windows"] = to_json(c.windows);
  j["seed"] = c.seed;
  return j;
}

trainer::TrainConfig train_config_from_json(const Json& j, const std::string& path) {
  trainer::TrainConfig c;
  ObjectReader rd(j, path);
  rd.get("batch_size", c.batch_size);
  rd.get("max_lr", c.max_lr);
  rd.get("total_steps", c.total_steps);
  // Warmup defaults to 10% of the run when only the length is given.
  c.warmup_steps = c.total_steps / 10;
  rd.get("warmup_steps", c.warmup_steps);
  rd.get("weight_decay", c.weight_decay);
  rd.get("beta1", c.beta1);
  rd.get("beta2", c.beta2);
  rd.get("eps", c.eps);
  rd.get("clip_norm", c.clip_norm);
  rd.get("eval_every", c.eval_every);
  rd.get("eval_subsample", c.eval_subsample);
  rd.get("sampling_cap", c.sampling_cap);
  rd.get("tokens_per_row", c.tokens_per_row);
  if (rd.has("windows")) c.windows = window_limits_from_json(rd.child("windows"), path + ".windows");
  rd.get("seed", c.seed);
  rd.finish();
  c.validate();
  return c;
}

Json to_json(const corpus::GeneratorSpec& g) {
  Json j;
  j["family"] = corpus::to_string(g.family);
  j["domain"] = g.domain;
  j["frequency"] = g.frequency;
  j["level"] = range_json(g.level);
  j["amplitude"] = range_json(g.amplitude);
  j["period"] = range_json(g.period);
  j["harmonics"] = g.harmonics;
  j["trend"] = range_json(g.trend);
  j["ar_coef"] = range_json(g.ar_coef);
  j["noise"] = g.noise;
  j["noise_df"] = g.noise_df;
  j["seed"] = g.seed;
  return j;
}

corpus::GeneratorSpec generator_from_json(const Json& j, const std::string& path) {
  corpus::GeneratorSpec g;
  ObjectReader rd(j, path);
  get_enum(rd, "family", g.family, corpus::parse_family);
  rd.get("domain", g.domain);
  rd.get("frequency", g.frequency);
  get_range(rd, "level", g.level);
  get_range(rd, "amplitude", g.amplitude);
  get_range(rd, "period", g.period);
  rd.get("harmonics", g.harmonics);
  get_range(rd, "trend", g.trend);
  get_range(rd, "ar_coef", g.ar_coef);
  rd.get("noise", g.noise);
  rd.get("noise_df", g.noise_df);
  rd.get("seed", g.seed);
  rd.finish();
  g.validate();
  return g;
}

Json to_json(const corpus::CurationRules& r) {
  Json j;
  j["snr_threshold_db"] = r.snr_threshold_db;
  j["filter_cutoff"] = r.filter.cutoff;
  j["filter_order"] = r.filter.order;
  j["min_length"] = r.min_length;
  j["dedup_factor"] = Json::object();
  for (const auto& [d, f] : r.dedup_factor) j["dedup_factor"][d] = f;
  j["target_proportions"] = Json::object();
  for (const auto& [d, p] : r.target_proportions) j["target_proportions"][d] = p;
  j["balance_tolerance"] = r.balance_tolerance;
  j["seed"] = r.seed;
  return j;
}

corpus::CurationRules curation_from_json(const Json& j, const std::string& path) {
  corpus::CurationRules r;
  ObjectReader rd(j, path);
  rd.get("snr_threshold_db", r.snr_threshold_db);
  rd.get("filter_cutoff", r.filter.cutoff);
  rd.get("filter_order", r.filter.order);
  rd.get("min_length", r.min_length);
  rd.get("dedup_factor", r.dedup_factor);
  rd.get("target_proportions", r.target_proportions);
  rd.get("balance_tolerance", r.balance_tolerance);
  rd.get("seed", r.seed);
  rd.finish();
  return r;
}

Json to_json(const metrics::Protocol& p) {
  Json j;
  j["kind"] = metrics::to_string(p.kind);
  j["horizon"] = p.horizon;
  j["context"] = p.context;
  return j;
}

metrics::Protocol protocol_from_json(const Json& j, const std::string& path) {
  metrics::Protocol p;
  ObjectReader rd(j, path);
  get_enum(rd, "kind", p.kind, metrics::parse_protocol);
  rd.get("horizon", p.horizon);
  rd.get("context", p.context);
  rd.finish();
  if (p.horizon == 0 || p.context == 0) throw std::invalid_argument(path + " needs positive horizon and context");
  return p;
}

Json to_json(const scaling::RunRecord& r) {
  Json j;
  j["run_id"] = r.run_id;
  j["step"] = r.step;
  j["split"] = r.split;
  j["N"] = r.N;
  j["D"] = r.D;
  j["tokens"] = r.tokens;
  j["C"] = r.C;
  Json m = Json::object();
  for (const auto& [k, v] : r.metrics) m[k] = v;
  j["metrics"] = m;
  return j;
}

scaling::RunRecord run_record_from_json(const Json& j) {
  scaling::RunRecord r;
  ObjectReader rd(j, "record");
  rd.require("run_id", r.run_id);
  rd.require("step", r.step);
  rd.require("split", r.split);
  rd.require("N", r.N);
  rd.get("D", r.D);
  rd.get("tokens", r.tokens);
  rd.require("C", r.C);
  const Json& m = rd.child("metrics");
  if (!m.is_object()) throw std::invalid_argument("record.metrics must be an object");
  for (const auto& [k, v] : m.items()) {
    if (!v.is_number()) throw std::invalid_argument("record metric '" + k + "' is not a number");
    r.metrics[k] = v.get<double>();
  }
  rd.finish();
  return r;
}

Json to_json(const scaling::PowerLawFit& f) {
  Json j;
  j["axis"] = scaling::to_string(f.axis);
  j["metric"] = f.metric;
  j["split"] = f.split;
  j["n_points"] = f.n_points;
  j["degenerate"] = f.degenerate;
  if (f.degenerate) {
    j["x_c"] = nullptr;
  } else {
    j["x_c"] = f.x_c;
  }
  j["alpha"] = f.alpha;
  j["r_squared"] = f.r_squared;
  j["shift"] = f.shift;
  j["x_min"] = f.x_min;
  j["x_max"] = f.x_max;
  j["reliable"] = f.reliable();
  return j;
}

scaling::PowerLawFit power_law_fit_from_json(const Json& j) {
  scaling::PowerLawFit f;
  ObjectReader rd(j, "fit");
  std::string axis;
  bool reliable = false;
  rd.require("axis", axis);
  f.axis = scaling::parse_axis(axis);
  rd.require("metric", f.metric);
  rd.require("split", f.split);
  rd.require("n_points", f.n_points);
  rd.get("degenerate", f.degenerate);
  if (f.degenerate) {
    f.x_c = std::nan("");
    rd.child("x_c");
  } else {
    rd.require("x_c", f.x_c);
  }
  rd.require("alpha", f.alpha);
  rd.require("r_squared", f.r_squared);
  rd.get("shift", f.shift);
  rd.require("x_min", f.x_min);
  rd.require("x_max", f.x_max);
  rd.get("reliable", reliable);
  rd.finish();
  return f;
}

Json to_json(const trainer::TrainEvent& e, bool with_wall_time) {
  Json j;
  j["step"] = e.step;
  j["train_loss"] = e.train_loss;
  j["lr"] = e.lr;
  j["grad_norm"] = e.grad_norm;
  j["tokens"] = e.tokens;
  if (with_wall_time) j["wall_time"] = e.wall_time;
  return j;
}

}  // namespace tsscale::io
