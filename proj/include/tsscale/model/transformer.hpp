#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsscale/corpus/corpus.hpp"
#include "tsscale/model/attention.hpp"
#include "tsscale/model/config.hpp"
#include "tsscale/model/mixture.hpp"
#include "tsscale/model/patching.hpp"
#include "tsscale/tensor.hpp"

namespace tsscale::model {

enum class ParamCategory { core, embedding, head, excluded };
std::string to_string(ParamCategory c);

struct NamedParameter {
  std::string name;
  ParamCategory category;
  Tensor tensor;
  /// Matrices receive weight decay; biases, norms and the mask token do not.
  bool decay;
};

/// Mean/scale used to standardize one window, computed from its context.
struct WindowScaler {
  double loc = 0.0;
  double scale = 1.0;

  static WindowScaler fit(std::span<const double> context);
  double forward(double v) const { return (v - loc) / scale; }
  double inverse(double z) const { return loc + scale * z; }
};

/// Which future patches the head is read at.
enum class Targets {
  /// Encoder: horizon tokens. Decoder: every position with a next patch.
  training,
  /// Horizon patches only (decoder positions n_context-1 .. n-2).
  horizon,
};

/// Flattened token grid fed to the transformer. Values are already
/// standardized; masked tokens carry zeros.
struct ModelInput {
  std::size_t patch_len = 0;
  std::vector<double> patches;  // [tokens x patch_len]
  std::vector<char> masked;
  std::vector<std::size_t> positions;
  std::vector<AttentionBlock> blocks;
  std::vector<std::size_t> predict_rows;
  std::vector<double> targets;  // [predict_rows x patch_len]
  /// Segment index of each predicted row, and the horizon patch it predicts.
  std::vector<std::size_t> predict_segment;
  std::vector<std::size_t> predict_patch;

  std::size_t n_tokens() const { return masked.size(); }
};

/// Builds the model input for a packed batch, standardizing each segment by
/// its own context. Padding tokens form singleton blocks.
ModelInput build_input(const ModelConfig& cfg, const corpus::PackedBatch& batch, Targets targets,
                       std::vector<WindowScaler>* scalers = nullptr);

/// Builds the model input for one sequence taken as-is (no standardization).
ModelInput build_input(const ModelConfig& cfg, const PatchSequence& seq, Targets targets);

class Transformer {
 public:
  /// Weights drawn from a truncated normal (std 0.02) for matrices; zeros for
  /// biases; unit gain for norms.
  Transformer(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<NamedParameter>& parameters() { return params_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  const NamedParameter& parameter(const std::string& name) const;
  NamedParameter& parameter(const std::string& name);

  /// Head output for every predicted row, expanded to per-point mixtures:
  /// point j of predicted row r is row r * patch_len + j.
  MixtureTensors forward(const ModelInput& input) const;

  /// Mixture parameters for the horizon patches of one sequence (encoder) or
  /// for every next patch (decoder). Throws on an empty context.
  MixtureParams forward(const PatchSequence& seq) const;

  /// Mean NLL over all predicted points of the input.
  Tensor loss(const ModelInput& input) const;

  std::size_t trainable_count() const;

 private:
  struct Layer {
    Tensor attn_norm_g, attn_norm_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ffn_norm_g, ffn_norm_b, w1, b1, w2, b2;
  };

  Tensor add_param(const std::string& name, ParamCategory cat, Shape shape, bool decay, double init_std,
                   double fill, std::mt19937_64& rng);

  ModelConfig cfg_;
  std::vector<NamedParameter> params_;
  Tensor embed_w_, embed_b_, mask_token_;
  std::vector<Layer> layers_;
  Tensor final_norm_g_, final_norm_b_;
  Tensor head_logits_w_, head_logits_b_, head_df_w_, head_df_b_, head_loc_w_, head_loc_b_, head_scale_w_,
      head_scale_b_;
};

}  // namespace tsscale::model
