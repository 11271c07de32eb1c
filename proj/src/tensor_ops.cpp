#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include "tensor_internal.hpp"

extern "C" void openblas_set_num_threads(int);

namespace tsscale {

using detail::make_result;
using detail::Node;
using detail::wants_grad;

namespace {

void require_2d(const Tensor& t, const char* what) {
  if (t.dim() != 2) {
    throw std::invalid_argument(std::string(what) + " expects a 2-D tensor, got " + shape_string(t.shape()));
  }
}

void single_threaded_blas() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

// Maps each output element to its source element in a broadcast operand.
struct BroadcastIndex {
  Shape out;
  std::vector<std::size_t> a_strides;
  std::vector<std::size_t> b_strides;

  BroadcastIndex(const Shape& a, const Shape& b) : out(broadcast_shape(a, b)) {
    a_strides = strides_for(a);
    b_strides = strides_for(b);
  }

  std::vector<std::size_t> strides_for(const Shape& s) const {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::size_t src = s.size() - 1 - i;
      const std::size_t dst = out.size() - 1 - i;
      strides[dst] = s[src] == 1 ? 0 : stride;
      stride *= s[src];
    }
    return strides;
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    const std::size_t n = shape_numel(out);
    const std::size_t rank = out.size();
    std::vector<std::size_t> counter(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < n; ++o) {
      fn(o, ia, ib);
      for (std::size_t d = rank; d-- > 0;) {
        ++counter[d];
        ia += a_strides[d];
        ib += b_strides[d];
        if (counter[d] < out[d]) break;
        ia -= a_strides[d] * out[d];
        ib -= b_strides[d] * out[d];
        counter[d] = 0;
      }
    }
  }
};

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  BroadcastIndex index(a.shape(), b.shape());
  std::vector<double> out(shape_numel(index.out));
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  const bool same = a.shape() == b.shape();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      switch (kind) {
        case BinaryKind::add: out[i] = ad[i] + bd[i]; break;
        case BinaryKind::sub: out[i] = ad[i] - bd[i]; break;
        case BinaryKind::mul: out[i] = ad[i] * bd[i]; break;
      }
    }
  } else {
    index.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) {
      switch (kind) {
        case BinaryKind::add: out[o] = ad[ia] + bd[ib]; break;
        case BinaryKind::sub: out[o] = ad[ia] - bd[ib]; break;
        case BinaryKind::mul: out[o] = ad[ia] * bd[ib]; break;
      }
    });
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result(index.out, std::move(out), {a, b}, [an, bn, index, kind, same](Node& self) {
    const auto& g = self.grad;
    double* ga = wants_grad(an) ? an->ensure_grad().data() : nullptr;
    double* gb = wants_grad(bn) ? bn->ensure_grad().data() : nullptr;
    const auto& ad = an->data;
    const auto& bd = bn->data;
    auto step = [&](std::size_t o, std::size_t ia, std::size_t ib) {
      switch (kind) {
        case BinaryKind::add:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] += g[o];
          break;
        case BinaryKind::sub:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] -= g[o];
          break;
        case BinaryKind::mul:
          if (ga) ga[ia] += g[o] * bd[ib];
          if (gb) gb[ib] += g[o] * ad[ia];
          break;
      }
    };
    if (same) {
      for (std::size_t i = 0; i < g.size(); ++i) step(i, i, i);
    } else {
      index.for_each(step);
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto& ad = a.node()->data;
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {a}, [an, deriv](Node& self) {
    auto& ga = an->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * deriv(an->data[i], self.data[i]);
  });
}

// Resolves a possibly negative axis and splits the shape around it.
struct AxisSplit {
  std::size_t axis, outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  const int resolved = axis < 0 ? axis + rank : axis;
  if (rank == 0 || resolved < 0 || resolved >= rank) {
    throw std::out_of_range("axis " + std::to_string(axis) + " invalid for shape " + shape_string(shape));
  }
  AxisSplit s{static_cast<std::size_t>(resolved), 1, shape[resolved], 1};
  for (int i = 0; i < resolved; ++i) s.outer *= shape[i];
  for (int i = resolved + 1; i < rank; ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument("shapes " + shape_string(a) + " and " + shape_string(b) +
                                  " are not broadcast-compatible");
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw std::invalid_argument("matmul inner dimensions disagree: " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  single_threaded_blas();
  std::vector<double> out(m * n, 0.0);
  if (m && n && k) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a.data().data(), k, b.data().data(), n,
                0.0, out.data(), n);
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& self) {
    if (!m || !n || !k) return;
    if (wants_grad(an)) {
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, k, n, 1.0, self.grad.data(), n, bn->data.data(), n,
                  1.0, an->ensure_grad().data(), k);
    }
    if (wants_grad(bn)) {
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, n, m, 1.0, an->data.data(), k, self.grad.data(), n,
                  1.0, bn->ensure_grad().data(), n);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.size(0), c = a.size(1);
  std::vector<double> out(r * c);
  const auto& ad = a.node()->data;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
  auto an = a.node();
  return make_result({c, r}, std::move(out), {a}, [an, r, c](Node& self) {
    auto& ga = an->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul); }

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw std::domain_error("log of non-positive value " + std::to_string(v));
  }
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  const auto& xd = x.node()->data;
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) peak = std::max(peak, xd[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const double e = std::exp(xd[base + j * s.inner] - peak);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] /= total;
    }
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, [xn, s](Node& self) {
    auto& gx = xn->ensure_grad();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor reduce(const Tensor& x, Reduction kind, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(s.axis));
  const double factor = kind == Reduction::mean ? 1.0 / static_cast<double>(s.extent) : 1.0;
  const auto& xd = x.node()->data;
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.extent; ++j)
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += xd[(o * s.extent + j) * s.inner + in];
  for (double& v : out) v *= factor;
  auto xn = x.node();
  return make_result(std::move(out_shape), std::move(out), {x}, [xn, s, factor](Node& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.extent; ++j)
        for (std::size_t in = 0; in < s.inner; ++in)
          gx[(o * s.extent + j) * s.inner + in] += factor * self.grad[o * s.inner + in];
  });
}

Tensor sum(const Tensor& x, int axis) { return reduce(x, Reduction::sum, axis); }
Tensor mean(const Tensor& x, int axis) { return reduce(x, Reduction::mean, axis); }

Tensor sum_all(const Tensor& x) { return reduce(reshape(x, {x.numel()}), Reduction::sum, 0); }
Tensor mean_all(const Tensor& x) { return reduce(reshape(x, {x.numel()}), Reduction::mean, 0); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  auto xn = x.node();
  return make_result(std::move(shape), xn->data, {x}, [xn](Node& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_2d(x, "layer_norm");
  const std::size_t rows = x.size(0), width = x.size(1);
  if (gamma.numel() != width || beta.numel() != width) {
    throw std::invalid_argument("layer_norm affine parameters must have width " + std::to_string(width));
  }
  const auto& xd = x.node()->data;
  const auto& gd = gamma.node()->data;
  const auto& bd = beta.node()->data;
  std::vector<double> out(xd.size());
  std::vector<double> normalized(xd.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(width);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (row[j] - mu) * rstd[r];
      normalized[r * width + j] = h;
      out[r * width + j] = h * gd[j] + bd[j];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, rows, width, normalized = std::move(normalized), rstd = std::move(rstd)](Node& self) {
        const auto& g = self.grad;
        if (wants_grad(gn) || wants_grad(bn)) {
          double* gg = wants_grad(gn) ? gn->ensure_grad().data() : nullptr;
          double* gb = wants_grad(bn) ? bn->ensure_grad().data() : nullptr;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < width; ++j) {
              if (gg) gg[j] += g[r * width + j] * normalized[r * width + j];
              if (gb) gb[j] += g[r * width + j];
            }
        }
        if (!wants_grad(xn)) return;
        auto& gx = xn->ensure_grad();
        const auto& gamma_d = gn->data;
        const double inv_w = 1.0 / static_cast<double>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_d = 0.0, mean_dh = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            const double d = g[r * width + j] * gamma_d[j];
            mean_d += d;
            mean_dh += d * normalized[r * width + j];
          }
          mean_d *= inv_w;
          mean_dh *= inv_w;
          for (std::size_t j = 0; j < width; ++j) {
            const double d = g[r * width + j] * gamma_d[j];
            gx[r * width + j] += rstd[r] * (d - mean_d - normalized[r * width + j] * mean_dh);
          }
        }
      });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_2d(x, "gather_rows");
  const std::size_t width = x.size(1);
  const auto& xd = x.node()->data;
  std::vector<double> out(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.size(0)) throw std::out_of_range("gather_rows index out of range");
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  auto xn = x.node();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), width}, std::move(out), {x}, [xn, idx = std::move(idx), width](Node& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < width; ++j) gx[idx[i] * width + j] += self.grad[i * width + j];
  });
}

Tensor replace_rows(const Tensor& x, std::span<const char> replace, const Tensor& token) {
  require_2d(x, "replace_rows");
  const std::size_t rows = x.size(0), width = x.size(1);
  if (replace.size() != rows || token.numel() != width) {
    throw std::invalid_argument("replace_rows: flag count or token width mismatch");
  }
  std::vector<double> out = x.node()->data;
  const auto& td = token.node()->data;
  for (std::size_t r = 0; r < rows; ++r)
    if (replace[r]) std::copy(td.begin(), td.end(), out.begin() + static_cast<std::ptrdiff_t>(r * width));
  auto xn = x.node(), tn = token.node();
  std::vector<char> flags(replace.begin(), replace.end());
  return make_result(x.shape(), std::move(out), {x, token}, [xn, tn, flags = std::move(flags), width](Node& self) {
    double* gx = wants_grad(xn) ? xn->ensure_grad().data() : nullptr;
    double* gt = wants_grad(tn) ? tn->ensure_grad().data() : nullptr;
    for (std::size_t r = 0; r < flags.size(); ++r)
      for (std::size_t j = 0; j < width; ++j) {
        if (flags[r]) {
          if (gt) gt[j] += self.grad[r * width + j];
        } else if (gx) {
          gx[r * width + j] += self.grad[r * width + j];
        }
      }
  });
}

}  // namespace tsscale
