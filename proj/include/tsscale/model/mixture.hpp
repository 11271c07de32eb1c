#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tsscale/model/config.hpp"
#include "tsscale/tensor.hpp"

namespace tsscale::model {

/// Log density of the location-scale Student-t distribution. Throws
/// std::domain_error unless df > 0 and scale > 0.
double student_t_logpdf(double x, double df, double loc, double scale);
double gaussian_logpdf(double x, double loc, double scale);

/// Constrained per-point mixture parameters, stored row-major as
/// [n_points x components]. `df` is empty for the Gaussian family.
struct MixtureParams {
  HeadFamily family = HeadFamily::student_t;
  std::size_t components = 0;
  double df_floor = 2.0;
  std::vector<double> weights;
  std::vector<double> df;
  std::vector<double> loc;
  std::vector<double> scale;

  std::size_t n_points() const { return components ? weights.size() / components : 0; }
  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
  /// log sum_k w_k pdf_k(x) for point i.
  double log_density(std::size_t point, double x) const;
  double mean(std::size_t point) const;
  double cdf(std::size_t point, double x) const;
  /// Inverts the mixture CDF by bisection.
  double quantile(std::size_t point, double level) const;
};

/// Mean over points of -log sum_k w_k pdf_k(target), via log-sum-exp.
double mixture_nll(const MixtureParams& params, std::span<const double> targets);
/// Same contract restricted to Gaussian components.
double gaussian_mixture_nll(const MixtureParams& params, std::span<const double> targets);

/// n i.i.d. draws for one point: pick a component by weight, then draw from it.
std::vector<double> sample_point(const MixtureParams& params, std::size_t point, std::size_t n,
                                 std::mt19937_64& rng);

/// Row-major [n x n_points] draws.
std::vector<double> sample_mixture(const MixtureParams& params, std::size_t n, std::mt19937_64& rng);

/// Empirical quantiles from `n_samples` draws per point (linear interpolation
/// between order statistics). Returns row-major [levels x n_points].
std::vector<double> quantiles(const MixtureParams& params, std::span<const double> levels,
                              std::mt19937_64& rng, std::size_t n_samples = 1000);

/// Constrained head outputs as tensors, each [points x components]. `df` is
/// undefined for the Gaussian family.
struct MixtureTensors {
  HeadFamily family = HeadFamily::student_t;
  double df_floor = 2.0;
  Tensor weights;
  Tensor df;
  Tensor loc;
  Tensor scale;

  MixtureParams values() const;
};

/// Applies the head constraints: weights = softmax(logits) over components,
/// scale = softplus(raw), df = df_floor + softplus(raw).
MixtureTensors constrain_head(HeadFamily family, double df_floor, const Tensor& logits, const Tensor& df_raw,
                              const Tensor& loc, const Tensor& scale_raw);

/// Differentiable mean mixture NLL over all points.
Tensor mixture_nll(const MixtureTensors& head, std::span<const double> targets);

}  // namespace tsscale::model
