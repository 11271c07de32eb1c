#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "tsscale/tensor.hpp"

namespace tsscale::model {

struct RopeConfig {
  double base = 10000.0;
  std::size_t dim = 0;

  /// theta_i = base^(-2(i-1)/dim) for i = 1..dim/2.
  std::vector<double> angles() const;
};

/// Rotates consecutive pairs (x_{2j-1}, x_{2j}) by position * theta_j.
std::vector<double> rope_rotate(std::span<const double> x, double position, const RopeConfig& cfg);

/// Differentiable RoPE over a [tokens x (n_heads * d_head)] matrix; each head
/// is rotated independently using the per-token positions.
Tensor rope(const Tensor& x, std::span<const std::size_t> positions, std::size_t n_heads, double base);

struct AttentionMask {
  enum class Kind { bidirectional, causal };
  Kind kind = Kind::bidirectional;
  /// Optional per-token segment ids; tokens only attend within their segment
  /// and RoPE positions restart at each segment. Empty means one segment.
  std::vector<int> segments;

  std::vector<std::size_t> positions(std::size_t length) const;
  bool allows(std::size_t query, std::size_t key) const;
};

/// Single-head attention softmax(rope(Q) rope(K)^T / sqrt(d) + mask) V built
/// from elementary tensor ops. Masked logits are -inf.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                 const RopeConfig& rope_cfg);

/// Contiguous token range [begin, end) that attends only within itself.
using AttentionBlock = std::pair<std::size_t, std::size_t>;

/// Fused multi-head scaled dot-product attention over already-rotated q and k.
/// Inputs are [tokens x (n_heads * d_head)]; every token must belong to
/// exactly one block.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                            std::span<const AttentionBlock> blocks, bool causal);

}  // namespace tsscale::model
