#include "tsscale/model/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "../tensor_internal.hpp"

namespace tsscale::model {

using detail::make_result;
using detail::Node;
using detail::wants_grad;

std::vector<double> RopeConfig::angles() const {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("rotary dimension must be even, got " + std::to_string(dim));
  std::vector<double> theta(dim / 2);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    theta[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
  }
  return theta;
}

std::vector<double> rope_rotate(std::span<const double> x, double position, const RopeConfig& cfg) {
  if (x.size() != cfg.dim) throw std::invalid_argument("rope_rotate: vector length differs from rotary dim");
  const auto theta = cfg.angles();
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double c = std::cos(position * theta[j]);
    const double s = std::sin(position * theta[j]);
    out[2 * j] = x[2 * j] * c - x[2 * j + 1] * s;
    out[2 * j + 1] = x[2 * j] * s + x[2 * j + 1] * c;
  }
  return out;
}

Tensor rope(const Tensor& x, std::span<const std::size_t> positions, std::size_t n_heads, double base) {
  if (x.dim() != 2 || x.size(0) != positions.size() || n_heads == 0 || x.size(1) % n_heads != 0) {
    throw std::invalid_argument("rope: expected [tokens x heads*d_head] with one position per token");
  }
  const std::size_t tokens = x.size(0), width = x.size(1), d_head = width / n_heads, half = d_head / 2;
  const auto theta = RopeConfig{base, d_head}.angles();
  std::vector<double> cos_t(tokens * half), sin_t(tokens * half);
  for (std::size_t t = 0; t < tokens; ++t)
    for (std::size_t j = 0; j < half; ++j) {
      const double angle = static_cast<double>(positions[t]) * theta[j];
      cos_t[t * half + j] = std::cos(angle);
      sin_t[t * half + j] = std::sin(angle);
    }
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t t = 0; t < tokens; ++t)
    for (std::size_t h = 0; h < n_heads; ++h)
      for (std::size_t j = 0; j < half; ++j) {
        const std::size_t i = t * width + h * d_head + 2 * j;
        const double c = cos_t[t * half + j], s = sin_t[t * half + j];
        out[i] = xd[i] * c - xd[i + 1] * s;
        out[i + 1] = xd[i] * s + xd[i + 1] * c;
      }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x},
                     [xn, tokens, width, n_heads, d_head, half, cos_t = std::move(cos_t),
                      sin_t = std::move(sin_t)](Node& self) {
                       auto& gx = xn->ensure_grad();
                       const auto& g = self.grad;
                       for (std::size_t t = 0; t < tokens; ++t)
                         for (std::size_t h = 0; h < n_heads; ++h)
                           for (std::size_t j = 0; j < half; ++j) {
                             const std::size_t i = t * width + h * d_head + 2 * j;
                             const double c = cos_t[t * half + j], s = sin_t[t * half + j];
                             gx[i] += g[i] * c + g[i + 1] * s;
                             gx[i + 1] += -g[i] * s + g[i + 1] * c;
                           }
                     });
}

std::vector<std::size_t> AttentionMask::positions(std::size_t length) const {
  std::vector<std::size_t> pos(length);
  for (std::size_t i = 0; i < length; ++i) {
    const bool restart = i == 0 || (!segments.empty() && segments[i] != segments[i - 1]);
    pos[i] = restart ? 0 : pos[i - 1] + 1;
  }
  return pos;
}

bool AttentionMask::allows(std::size_t query, std::size_t key) const {
  if (!segments.empty() && segments[query] != segments[key]) return false;
  return kind == Kind::bidirectional || key <= query;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                 const RopeConfig& rope_cfg) {
  if (q.dim() != 2 || k.shape() != q.shape() || v.dim() != 2 || v.size(0) != q.size(0)) {
    throw std::invalid_argument("attention: q, k must be [L x d] and v [L x d_v]");
  }
  const std::size_t length = q.size(0), width = q.size(1);
  if (!mask.segments.empty() && mask.segments.size() != length) {
    throw std::invalid_argument("attention mask covers " + std::to_string(mask.segments.size()) +
                                " tokens, sequence has " + std::to_string(length));
  }
  if (rope_cfg.dim != width) throw std::invalid_argument("attention: rotary dim differs from head width");
  const auto pos = mask.positions(length);
  Tensor qr = rope(q, pos, 1, rope_cfg.base);
  Tensor kr = rope(k, pos, 1, rope_cfg.base);
  Tensor logits = scale(matmul(qr, transpose(kr)), 1.0 / std::sqrt(static_cast<double>(width)));
  std::vector<double> bias(length * length, 0.0);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = 0; j < length; ++j)
      if (!mask.allows(i, j)) bias[i * length + j] = -std::numeric_limits<double>::infinity();
  Tensor probs = softmax(add(logits, Tensor::from_data({length, length}, std::move(bias))), -1);
  return matmul(probs, v);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                            std::span<const AttentionBlock> blocks, bool causal) {
  if (q.dim() != 2 || k.shape() != q.shape() || v.shape() != q.shape() || n_heads == 0 ||
      q.size(1) % n_heads != 0) {
    throw std::invalid_argument("multi_head_attention: q, k, v must share shape [tokens x heads*d_head]");
  }
  const std::size_t tokens = q.size(0), width = q.size(1), d_head = width / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
  std::vector<std::size_t> prob_offset(blocks.size());
  std::size_t prob_total = 0, covered = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto [begin, end] = blocks[b];
    if (begin > end || end > tokens) throw std::invalid_argument("attention block out of range");
    prob_offset[b] = prob_total;
    prob_total += n_heads * (end - begin) * (end - begin);
    covered += end - begin;
  }
  if (covered != tokens) throw std::invalid_argument("attention blocks must cover every token exactly once");

  const auto& qd = q.data();
  const auto& kd = k.data();
  const auto& vd = v.data();
  std::vector<double> probs(prob_total, 0.0);
  std::vector<double> out(tokens * width, 0.0);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto [begin, end] = blocks[b];
    const std::size_t n = end - begin;
    for (std::size_t h = 0; h < n_heads; ++h) {
      double* p = probs.data() + prob_offset[b] + h * n * n;
      const std::size_t col = h * d_head;
      for (std::size_t i = 0; i < n; ++i) {
        const double* qi = qd.data() + (begin + i) * width + col;
        const std::size_t limit = causal ? i + 1 : n;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
          const double* kj = kd.data() + (begin + j) * width + col;
          double dot = 0.0;
          for (std::size_t d = 0; d < d_head; ++d) dot += qi[d] * kj[d];
          p[i * n + j] = dot * inv_sqrt;
          peak = std::max(peak, p[i * n + j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          p[i * n + j] = std::exp(p[i * n + j] - peak);
          total += p[i * n + j];
        }
        double* oi = out.data() + (begin + i) * width + col;
        for (std::size_t j = 0; j < limit; ++j) {
          p[i * n + j] /= total;
          const double* vj = vd.data() + (begin + j) * width + col;
          for (std::size_t d = 0; d < d_head; ++d) oi[d] += p[i * n + j] * vj[d];
        }
      }
    }
  }

  auto qn = q.node(), kn = k.node(), vn = v.node();
  std::vector<AttentionBlock> block_list(blocks.begin(), blocks.end());
  return make_result(
      q.shape(), std::move(out), {q, k, v},
      [qn, kn, vn, n_heads, width, d_head, inv_sqrt, causal, block_list = std::move(block_list),
       prob_offset = std::move(prob_offset), probs = std::move(probs)](Node& self) {
        double* gq = wants_grad(qn) ? qn->ensure_grad().data() : nullptr;
        double* gk = wants_grad(kn) ? kn->ensure_grad().data() : nullptr;
        double* gv = wants_grad(vn) ? vn->ensure_grad().data() : nullptr;
        const auto& g = self.grad;
        const auto& qd = qn->data;
        const auto& kd = kn->data;
        const auto& vd = vn->data;
        std::vector<double> dp;
        for (std::size_t b = 0; b < block_list.size(); ++b) {
          const auto [begin, end] = block_list[b];
          const std::size_t n = end - begin;
          dp.assign(n, 0.0);
          for (std::size_t h = 0; h < n_heads; ++h) {
            const double* p = probs.data() + prob_offset[b] + h * n * n;
            const std::size_t col = h * d_head;
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t limit = causal ? i + 1 : n;
              const double* gi = g.data() + (begin + i) * width + col;
              double weighted = 0.0;
              for (std::size_t j = 0; j < limit; ++j) {
                const double* vj = vd.data() + (begin + j) * width + col;
                double dot = 0.0;
                for (std::size_t d = 0; d < d_head; ++d) dot += gi[d] * vj[d];
                dp[j] = dot;
                weighted += dot * p[i * n + j];
                if (gv) {
                  double* gvj = gv + (begin + j) * width + col;
                  for (std::size_t d = 0; d < d_head; ++d) gvj[d] += p[i * n + j] * gi[d];
                }
              }
              const double* qi = qd.data() + (begin + i) * width + col;
              for (std::size_t j = 0; j < limit; ++j) {
                const double ds = p[i * n + j] * (dp[j] - weighted) * inv_sqrt;
                if (ds == 0.0) continue;
                const double* kj = kd.data() + (begin + j) * width + col;
                if (gq) {
                  double* gqi = gq + (begin + i) * width + col;
                  for (std::size_t d = 0; d < d_head; ++d) gqi[d] += ds * kj[d];
                }
                if (gk) {
                  double* gkj = gk + (begin + j) * width + col;
                  for (std::size_t d = 0; d < d_head; ++d) gkj[d] += ds * qi[d];
                }
              }
            }
          }
        }
      });
}

}  // namespace tsscale::model
