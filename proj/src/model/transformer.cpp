#include "tsscale/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <stdexcept>

namespace tsscale::model {

std::string to_string(ParamCategory c) {
  switch (c) {
    case ParamCategory::core: return "core";
    case ParamCategory::embedding: return "embedding";
    case ParamCategory::head: return "head";
    case ParamCategory::excluded: return "excluded";
  }
  return "unknown";
}

WindowScaler WindowScaler::fit(std::span<const double> context) {
  WindowScaler s;
  if (context.empty()) return s;
  double mean = 0.0;
  for (double v : context) mean += v;
  mean /= static_cast<double>(context.size());
  double var = 0.0;
  for (double v : context) var += (v - mean) * (v - mean);
  var /= static_cast<double>(context.size());
  s.loc = mean;
  const double sd = std::sqrt(var);
  // A flat context has no spread to normalize by.
  s.scale = sd > 1e-8 * (1.0 + std::abs(mean)) ? sd : 1.0;
  return s;
}

namespace {

void add_prediction_rows(ModelInput& in, const ModelConfig& cfg, Targets targets, std::size_t first_token,
                         std::size_t n_context, std::size_t n_total, std::size_t segment) {
  const std::size_t P = cfg.patch_len;
  auto push = [&](std::size_t row, std::size_t target_token) {
    in.predict_rows.push_back(first_token + row);
    in.predict_segment.push_back(segment);
    in.predict_patch.push_back(target_token);
    const double* src = in.patches.data() + (first_token + target_token) * P;
    in.targets.insert(in.targets.end(), src, src + P);
  };
  if (cfg.architecture == Architecture::encoder_only) {
    for (std::size_t t = n_context; t < n_total; ++t) push(t, t);
  } else {
    const std::size_t start = targets == Targets::training ? 0 : n_context - 1;
    for (std::size_t t = start; t + 1 < n_total; ++t) push(t, t + 1);
  }
}

// Zeroes masked encoder tokens once targets have been copied out.
void blank_masked(ModelInput& in) {
  const std::size_t P = in.patch_len;
  for (std::size_t t = 0; t < in.masked.size(); ++t)
    if (in.masked[t]) std::fill_n(in.patches.begin() + static_cast<std::ptrdiff_t>(t * P), P, 0.0);
}

}  // namespace

ModelInput build_input(const ModelConfig& cfg, const corpus::PackedBatch& batch, Targets targets,
                       std::vector<WindowScaler>* scalers) {
  if (batch.patch_len != cfg.patch_len) throw std::invalid_argument("batch patch length differs from model");
  const std::size_t P = cfg.patch_len, S = batch.tokens_per_row;
  ModelInput in;
  in.patch_len = P;
  in.patches = batch.values;
  in.masked.assign(batch.n_tokens(), 0);
  in.positions.assign(batch.n_tokens(), 0);
  std::vector<char> covered(batch.n_tokens(), 0);
  if (scalers) scalers->clear();

  for (std::size_t s = 0; s < batch.segments.size(); ++s) {
    const auto& seg = batch.segments[s];
    if (seg.n_context == 0) throw std::invalid_argument("segment " + seg.source_id + " has an empty context");
    const std::size_t first = seg.row * S + seg.offset;
    const std::size_t n = seg.n_tokens();
    const WindowScaler scaler = WindowScaler::fit(
        std::span<const double>(batch.values).subspan(first * P, seg.n_context * P));
    if (scalers) scalers->push_back(scaler);
    for (std::size_t i = first * P; i < (first + n) * P; ++i) in.patches[i] = scaler.forward(in.patches[i]);
    for (std::size_t t = 0; t < n; ++t) {
      in.positions[first + t] = t;
      covered[first + t] = 1;
      if (cfg.architecture == Architecture::encoder_only && t >= seg.n_context) in.masked[first + t] = 1;
    }
    in.blocks.emplace_back(first, first + n);
    add_prediction_rows(in, cfg, targets, first, seg.n_context, n, s);
  }
  for (std::size_t t = 0; t < covered.size(); ++t)
    if (!covered[t]) in.blocks.emplace_back(t, t + 1);
  blank_masked(in);
  return in;
}

ModelInput build_input(const ModelConfig& cfg, const PatchSequence& seq, Targets targets) {
  if (seq.patch_len != cfg.patch_len) throw std::invalid_argument("sequence patch length differs from model");
  if (seq.n_context == 0) throw std::invalid_argument("sequence has an empty context");
  ModelInput in;
  in.patch_len = cfg.patch_len;
  in.patches = seq.patches;
  const std::size_t n = seq.n_patches();
  in.masked.assign(n, 0);
  in.positions.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    in.positions[t] = t;
    if (cfg.architecture == Architecture::encoder_only && t >= seq.n_context) in.masked[t] = 1;
  }
  in.blocks.emplace_back(0, n);
  add_prediction_rows(in, cfg, targets, 0, seq.n_context, n, 0);
  blank_masked(in);
  return in;
}

Tensor Transformer::add_param(const std::string& name, ParamCategory cat, Shape shape, bool decay, double init_std,
                              double fill, std::mt19937_64& rng) {
  Tensor t = Tensor::full(std::move(shape), fill, true);
  if (init_std > 0.0) {
    std::normal_distribution<double> normal(0.0, init_std);
    for (double& v : t.mutable_data()) {
      do {
        v = normal(rng);
      } while (std::abs(v) > 2.0 * init_std);
    }
  }
  params_.push_back({name, cat, t, decay});
  return t;
}

Transformer::Transformer(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  constexpr double kStd = 0.02;
  const std::size_t d = cfg_.d_m, inner = cfg_.n_heads * cfg_.d_head, P = cfg_.patch_len;
  const std::size_t head_out = cfg_.components * P;
  using C = ParamCategory;

  embed_w_ = add_param("embed.weight", C::embedding, {P, d}, true, kStd, 0.0, rng);
  embed_b_ = add_param("embed.bias", C::excluded, {d}, false, 0.0, 0.0, rng);
  if (cfg_.architecture == Architecture::encoder_only) {
    mask_token_ = add_param("mask_token", C::excluded, {d}, false, kStd, 0.0, rng);
  }
  for (std::size_t l = 0; l < cfg_.n_layer; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Layer layer;
    layer.attn_norm_g = add_param(p + "attn_norm.gain", C::excluded, {d}, false, 0.0, 1.0, rng);
    layer.attn_norm_b = add_param(p + "attn_norm.bias", C::excluded, {d}, false, 0.0, 0.0, rng);
    layer.wq = add_param(p + "attn.wq", C::core, {d, inner}, true, kStd, 0.0, rng);
    layer.bq = add_param(p + "attn.bq", C::excluded, {inner}, false, 0.0, 0.0, rng);
    layer.wk = add_param(p + "attn.wk", C::core, {d, inner}, true, kStd, 0.0, rng);
    layer.bk = add_param(p + "attn.bk", C::excluded, {inner}, false, 0.0, 0.0, rng);
    layer.wv = add_param(p + "attn.wv", C::core, {d, inner}, true, kStd, 0.0, rng);
    layer.bv = add_param(p + "attn.bv", C::excluded, {inner}, false, 0.0, 0.0, rng);
    layer.wo = add_param(p + "attn.wo", C::core, {inner, d}, true, kStd, 0.0, rng);
    layer.bo = add_param(p + "attn.bo", C::excluded, {d}, false, 0.0, 0.0, rng);
    layer.ffn_norm_g = add_param(p + "ffn_norm.gain", C::excluded, {d}, false, 0.0, 1.0, rng);
    layer.ffn_norm_b = add_param(p + "ffn_norm.bias", C::excluded, {d}, false, 0.0, 0.0, rng);
    layer.w1 = add_param(p + "ffn.w1", C::core, {d, cfg_.d_ff}, true, kStd, 0.0, rng);
    layer.b1 = add_param(p + "ffn.b1", C::excluded, {cfg_.d_ff}, false, 0.0, 0.0, rng);
    layer.w2 = add_param(p + "ffn.w2", C::core, {cfg_.d_ff, d}, true, kStd, 0.0, rng);
    layer.b2 = add_param(p + "ffn.b2", C::excluded, {d}, false, 0.0, 0.0, rng);
    layers_.push_back(layer);
  }
  final_norm_g_ = add_param("final_norm.gain", C::excluded, {d}, false, 0.0, 1.0, rng);
  final_norm_b_ = add_param("final_norm.bias", C::excluded, {d}, false, 0.0, 0.0, rng);
  head_logits_w_ = add_param("head.weights.weight", C::head, {d, head_out}, true, kStd, 0.0, rng);
  head_logits_b_ = add_param("head.weights.bias", C::excluded, {head_out}, false, 0.0, 0.0, rng);
  if (cfg_.head_family == HeadFamily::student_t) {
    head_df_w_ = add_param("head.df.weight", C::head, {d, head_out}, true, kStd, 0.0, rng);
    head_df_b_ = add_param("head.df.bias", C::excluded, {head_out}, false, 0.0, 0.0, rng);
  }
  head_loc_w_ = add_param("head.loc.weight", C::head, {d, head_out}, true, kStd, 0.0, rng);
  head_loc_b_ = add_param("head.loc.bias", C::excluded, {head_out}, false, 0.0, 0.0, rng);
  head_scale_w_ = add_param("head.scale.weight", C::head, {d, head_out}, true, kStd, 0.0, rng);
  head_scale_b_ = add_param("head.scale.bias", C::excluded, {head_out}, false, 0.0, 0.0, rng);
}

const NamedParameter& Transformer::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + name);
}

NamedParameter& Transformer::parameter(const std::string& name) {
  return const_cast<NamedParameter&>(std::as_const(*this).parameter(name));
}

std::size_t Transformer::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

MixtureTensors Transformer::forward(const ModelInput& input) const {
  const std::size_t T = input.n_tokens(), P = cfg_.patch_len, K = cfg_.components;
  if (input.patches.size() != T * P) throw std::invalid_argument("model input has inconsistent patch data");
  if (input.predict_rows.empty()) throw std::invalid_argument("model input has nothing to predict");
  const bool causal = cfg_.architecture == Architecture::decoder_only;

  Tensor x = add(matmul(Tensor::from_data({T, P}, input.patches), embed_w_), embed_b_);
  if (!causal) x = replace_rows(x, input.masked, mask_token_);

  for (const auto& layer : layers_) {
    Tensor h = layer_norm(x, layer.attn_norm_g, layer.attn_norm_b);
    Tensor q = rope(add(matmul(h, layer.wq), layer.bq), input.positions, cfg_.n_heads, cfg_.rope_base);
    Tensor k = rope(add(matmul(h, layer.wk), layer.bk), input.positions, cfg_.n_heads, cfg_.rope_base);
    Tensor v = add(matmul(h, layer.wv), layer.bv);
    Tensor a = multi_head_attention(q, k, v, cfg_.n_heads, input.blocks, causal);
    x = add(x, add(matmul(a, layer.wo), layer.bo));
    Tensor f = layer_norm(x, layer.ffn_norm_g, layer.ffn_norm_b);
    f = gelu(add(matmul(f, layer.w1), layer.b1));
    x = add(x, add(matmul(f, layer.w2), layer.b2));
  }
  Tensor z = gather_rows(layer_norm(x, final_norm_g_, final_norm_b_), input.predict_rows);
  const std::size_t points = input.predict_rows.size() * P;
  auto project = [&](const Tensor& w, const Tensor& b) { return reshape(add(matmul(z, w), b), {points, K}); };

  Tensor df_raw = cfg_.head_family == HeadFamily::student_t ? project(head_df_w_, head_df_b_) : Tensor{};
  return constrain_head(cfg_.head_family, cfg_.df_floor, project(head_logits_w_, head_logits_b_), df_raw,
                        project(head_loc_w_, head_loc_b_), project(head_scale_w_, head_scale_b_));
}

MixtureParams Transformer::forward(const PatchSequence& seq) const {
  NoGradGuard no_grad;
  return forward(build_input(cfg_, seq, Targets::training)).values();
}

Tensor Transformer::loss(const ModelInput& input) const { return mixture_nll(forward(input), input.targets); }

}  // namespace tsscale::model
