#include "tsscale/model/mixture.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "../tensor_internal.hpp"

namespace tsscale::model {

using detail::make_result;
using detail::Node;
using detail::wants_grad;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_gamma(double x) {
  int sign = 0;
  return ::lgamma_r(x, &sign);
}

// Terms of the Student-t log density that depend on df only.
double student_t_norm(double df) {
  return log_gamma(0.5 * (df + 1.0)) - log_gamma(0.5 * df) - 0.5 * std::log(std::numbers::pi * df);
}

double log_sum_exp(std::span<const double> v) {
  double peak = kNegInf;
  for (double x : v) peak = std::max(peak, x);
  if (peak == kNegInf) return kNegInf;
  double total = 0.0;
  for (double x : v) total += std::exp(x - peak);
  return peak + std::log(total);
}

}  // namespace

double student_t_logpdf(double x, double df, double loc, double scale) {
  if (!(df > 0.0)) throw std::domain_error("student-t degrees of freedom must be positive");
  if (!(scale > 0.0)) throw std::domain_error("student-t scale must be positive");
  const double z = (x - loc) / scale;
  return student_t_norm(df) - std::log(scale) - 0.5 * (df + 1.0) * std::log1p(z * z / df);
}

double gaussian_logpdf(double x, double loc, double scale) {
  if (!(scale > 0.0)) throw std::domain_error("gaussian scale must be positive");
  const double z = (x - loc) / scale;
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(scale) - 0.5 * z * z;
}

void MixtureParams::validate() const {
  if (components == 0) throw std::invalid_argument("mixture has no components");
  const std::size_t n = weights.size();
  if (n % components != 0 || loc.size() != n || scale.size() != n) {
    throw std::invalid_argument("mixture parameter arrays have inconsistent lengths");
  }
  if (family == HeadFamily::student_t && df.size() != n) {
    throw std::invalid_argument("student-t mixture is missing degrees of freedom");
  }
  for (std::size_t p = 0; p < n_points(); ++p) {
    double total = 0.0;
    for (std::size_t k = 0; k < components; ++k) {
      const std::size_t i = p * components + k;
      if (!(weights[i] >= 0.0)) throw std::invalid_argument("mixture weight is negative or NaN");
      total += weights[i];
      if (!(scale[i] > 0.0) || !std::isfinite(scale[i])) throw std::invalid_argument("mixture scale must be positive");
      if (!std::isfinite(loc[i])) throw std::invalid_argument("mixture location is not finite");
      if (family == HeadFamily::student_t && !(df[i] >= df_floor)) {
        throw std::invalid_argument("mixture df " + std::to_string(df[i]) + " below floor " + std::to_string(df_floor));
      }
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture weights do not sum to 1");
  }
}

double MixtureParams::log_density(std::size_t point, double x) const {
  std::vector<double> terms(components);
  for (std::size_t k = 0; k < components; ++k) {
    const std::size_t i = point * components + k;
    if (weights[i] <= 0.0) {
      terms[k] = kNegInf;
      continue;
    }
    const double lp = family == HeadFamily::student_t ? student_t_logpdf(x, df[i], loc[i], scale[i])
                                                      : gaussian_logpdf(x, loc[i], scale[i]);
    terms[k] = std::log(weights[i]) + lp;
  }
  return log_sum_exp(terms);
}

double MixtureParams::mean(std::size_t point) const {
  double m = 0.0;
  for (std::size_t k = 0; k < components; ++k) m += weights[point * components + k] * loc[point * components + k];
  return m;
}

double MixtureParams::cdf(std::size_t point, double x) const {
  double total = 0.0;
  for (std::size_t k = 0; k < components; ++k) {
    const std::size_t i = point * components + k;
    const double z = (x - loc[i]) / scale[i];
    const double c = family == HeadFamily::gaussian
                         ? 0.5 * std::erfc(-z / std::numbers::sqrt2)
                         : boost::math::cdf(boost::math::students_t_distribution<double>(df[i]), z);
    total += weights[i] * c;
  }
  return total;
}

double MixtureParams::quantile(std::size_t point, double level) const {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("quantile level must lie in (0, 1)");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t k = 0; k < components; ++k) {
    const std::size_t i = point * components + k;
    lo = std::min(lo, loc[i] - scale[i]);
    hi = std::max(hi, loc[i] + scale[i]);
  }
  double width = hi - lo;
  while (cdf(point, lo) > level) lo -= (width *= 2.0);
  width = hi - lo;
  while (cdf(point, hi) < level) hi += (width *= 2.0);
  // Newton on the CDF, falling back to bisection whenever a step leaves the bracket.
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double tol = 1e-12 * std::max(1.0, std::abs(lo) + std::abs(hi));
    const double f = cdf(point, x) - level;
    (f < 0.0 ? lo : hi) = x;
    if (f == 0.0 || hi - lo <= tol) break;
    const double density = std::exp(log_density(point, x));
    double next = density > 0.0 ? x - f / density : lo;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const bool converged = std::abs(next - x) <= tol;
    x = next;
    if (converged) break;
  }
  return x;
}

double mixture_nll(const MixtureParams& params, std::span<const double> targets) {
  params.validate();
  if (targets.size() != params.n_points()) {
    throw std::invalid_argument("mixture_nll: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(params.n_points()) + " mixtures");
  }
  if (targets.empty()) throw std::invalid_argument("mixture_nll: no targets");
  double total = 0.0;
  for (std::size_t p = 0; p < targets.size(); ++p) total -= params.log_density(p, targets[p]);
  return total / static_cast<double>(targets.size());
}

double gaussian_mixture_nll(const MixtureParams& params, std::span<const double> targets) {
  if (params.family != HeadFamily::gaussian) throw std::invalid_argument("expected a gaussian mixture");
  return mixture_nll(params, targets);
}

std::vector<double> sample_point(const MixtureParams& params, std::size_t point, std::size_t n,
                                 std::mt19937_64& rng) {
  if (n == 0) throw std::invalid_argument("sample count must be >= 1");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  const std::size_t base = point * params.components;
  for (std::size_t s = 0; s < n; ++s) {
    const double u = uniform(rng);
    std::size_t k = 0;
    double cumulative = params.weights[base];
    while (k + 1 < params.components && u >= cumulative) cumulative += params.weights[base + ++k];
    const std::size_t i = base + k;
    double z;
    if (params.family == HeadFamily::student_t) {
      std::student_t_distribution<double> t(params.df[i]);
      z = t(rng);
    } else {
      z = normal(rng);
    }
    out[s] = params.loc[i] + params.scale[i] * z;
  }
  return out;
}

std::vector<double> sample_mixture(const MixtureParams& params, std::size_t n, std::mt19937_64& rng) {
  params.validate();
  const std::size_t points = params.n_points();
  std::vector<double> out(n * points);
  for (std::size_t p = 0; p < points; ++p) {
    const auto draws = sample_point(params, p, n, rng);
    for (std::size_t s = 0; s < n; ++s) out[s * points + p] = draws[s];
  }
  return out;
}

std::vector<double> quantiles(const MixtureParams& params, std::span<const double> levels, std::mt19937_64& rng,
                              std::size_t n_samples) {
  if (levels.empty()) throw std::invalid_argument("quantiles: no levels requested");
  for (double a : levels) {
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("quantile levels must lie in (0, 1)");
  }
  const std::size_t points = params.n_points();
  std::vector<double> out(levels.size() * points);
  for (std::size_t p = 0; p < points; ++p) {
    auto draws = sample_point(params, p, n_samples, rng);
    std::sort(draws.begin(), draws.end());
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const double h = levels[l] * static_cast<double>(n_samples - 1);
      const std::size_t lo = static_cast<std::size_t>(std::floor(h));
      const std::size_t hi = std::min(lo + 1, n_samples - 1);
      out[l * points + p] = draws[lo] + (h - static_cast<double>(lo)) * (draws[hi] - draws[lo]);
    }
  }
  return out;
}

MixtureParams MixtureTensors::values() const {
  MixtureParams p;
  p.family = family;
  p.df_floor = df_floor;
  p.components = weights.size(1);
  p.weights.assign(weights.data().begin(), weights.data().end());
  p.loc.assign(loc.data().begin(), loc.data().end());
  p.scale.assign(scale.data().begin(), scale.data().end());
  if (family == HeadFamily::student_t) p.df.assign(df.data().begin(), df.data().end());
  return p;
}

MixtureTensors constrain_head(HeadFamily family, double df_floor, const Tensor& logits, const Tensor& df_raw,
                              const Tensor& loc, const Tensor& scale_raw) {
  MixtureTensors head;
  head.family = family;
  head.df_floor = df_floor;
  head.weights = softmax(logits, -1);
  head.loc = loc;
  head.scale = softplus(scale_raw);
  if (family == HeadFamily::student_t) head.df = add_scalar(softplus(df_raw), df_floor);
  return head;
}

Tensor mixture_nll(const MixtureTensors& head, std::span<const double> targets) {
  const bool student = head.family == HeadFamily::student_t;
  const Tensor& w = head.weights;
  if (w.dim() != 2 || head.loc.shape() != w.shape() || head.scale.shape() != w.shape() ||
      (student && head.df.shape() != w.shape())) {
    throw std::invalid_argument("mixture_nll: head tensors must share shape [points x components]");
  }
  const std::size_t points = w.size(0), comps = w.size(1);
  if (targets.size() != points || points == 0) {
    throw std::invalid_argument("mixture_nll: target count differs from point count");
  }
  const auto& wd = w.data();
  const auto& md = head.loc.data();
  const auto& sd = head.scale.data();
  std::span<const double> dd = student ? head.df.data() : std::span<const double>{};
  for (std::size_t i = 0; i < wd.size(); ++i) {
    if (!(sd[i] > 0.0) || (student && !(dd[i] > 0.0))) {
      throw std::invalid_argument("mixture_nll: scale and df must be positive");
    }
  }

  // Per-point log normalizer and per-component log densities, kept for the adjoint.
  std::vector<double> logpdf(points * comps), lse(points);
  std::vector<double> terms(comps);
  double total = 0.0;
  for (std::size_t p = 0; p < points; ++p) {
    for (std::size_t k = 0; k < comps; ++k) {
      const std::size_t i = p * comps + k;
      const double z = (targets[p] - md[i]) / sd[i];
      logpdf[i] = student ? student_t_norm(dd[i]) - std::log(sd[i]) - 0.5 * (dd[i] + 1.0) * std::log1p(z * z / dd[i])
                          : -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd[i]) - 0.5 * z * z;
      terms[k] = wd[i] > 0.0 ? std::log(wd[i]) + logpdf[i] : kNegInf;
    }
    lse[p] = log_sum_exp(terms);
    total -= lse[p];
  }
  const double value = total / static_cast<double>(points);

  std::vector<Tensor> inputs{head.weights, head.loc, head.scale};
  if (student) inputs.push_back(head.df);
  auto wn = head.weights.node(), mn = head.loc.node(), sn = head.scale.node();
  auto dn = student ? head.df.node() : nullptr;
  std::vector<double> target_copy(targets.begin(), targets.end());
  return make_result(
      {}, {value}, std::move(inputs),
      [wn, mn, sn, dn, student, points, comps, logpdf = std::move(logpdf), lse = std::move(lse),
       target_copy = std::move(target_copy)](Node& self) {
        const double g = self.grad[0] / static_cast<double>(points);
        double* gw = wants_grad(wn) ? wn->ensure_grad().data() : nullptr;
        double* gm = wants_grad(mn) ? mn->ensure_grad().data() : nullptr;
        double* gs = wants_grad(sn) ? sn->ensure_grad().data() : nullptr;
        double* gd = student && wants_grad(dn) ? dn->ensure_grad().data() : nullptr;
        const auto& wd = wn->data;
        const auto& md = mn->data;
        const auto& sd = sn->data;
        for (std::size_t p = 0; p < points; ++p) {
          for (std::size_t k = 0; k < comps; ++k) {
            const std::size_t i = p * comps + k;
            // e = pdf_k / mixture density, r = responsibility w_k e.
            const double e = std::exp(logpdf[i] - lse[p]);
            const double r = wd[i] * e;
            if (gw) gw[i] -= g * e;
            if (r == 0.0) continue;
            const double z = (target_copy[p] - md[i]) / sd[i];
            if (student) {
              const double nu = dn->data[i];
              const double q = nu + z * z;
              if (gm) gm[i] -= g * r * (nu + 1.0) * z / (sd[i] * q);
              if (gs) gs[i] -= g * r * (-1.0 / sd[i] + (nu + 1.0) * z * z / (sd[i] * q));
              if (gd) {
                const double dlogp = 0.5 * boost::math::digamma(0.5 * (nu + 1.0)) -
                                     0.5 * boost::math::digamma(0.5 * nu) - 0.5 / nu -
                                     0.5 * std::log1p(z * z / nu) + 0.5 * (nu + 1.0) * z * z / (nu * q);
                gd[i] -= g * r * dlogp;
              }
            } else {
              if (gm) gm[i] -= g * r * z / sd[i];
              if (gs) gs[i] -= g * r * (-1.0 / sd[i] + z * z / sd[i]);
            }
          }
        }
      });
}

}  // namespace tsscale::model
