#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tsscale::scaling {

/// One evaluation of one run on one split. `N` is the core parameter count,
/// `D` the training points available to the run, `C` = 6 * N * tokens.
struct RunRecord {
  std::string run_id;
  std::size_t N = 0;
  std::size_t D = 0;
  double C = 0.0;
  std::size_t tokens = 0;
  std::size_t step = 0;
  std::string split;  // "id_validation" or "ood:<name>"
  std::map<std::string, double> metrics;

  bool operator==(const RunRecord&) const = default;
};

enum class Axis { N, C, D };
std::string to_string(Axis a);
Axis parse_axis(const std::string& s);

/// L(x) = (X_c / x)^alpha - shift. `shift` is nonzero only when some observed
/// loss was non-positive and the fit was made on L + shift.
struct PowerLawFit {
  Axis axis = Axis::N;
  std::string metric;
  std::string split;
  double x_c = 0.0;
  double alpha = 0.0;
  double r_squared = 0.0;
  std::size_t n_points = 0;
  double shift = 0.0;
  double x_min = 0.0;
  double x_max = 0.0;
  /// Slope exactly zero: X_c is undefined and the fit cannot extrapolate.
  bool degenerate = false;

  bool reliable(double min_r_squared = 0.8) const { return !degenerate && r_squared >= min_r_squared; }
};

using Point = std::pair<double, double>;

/// OLS of log L on log x. Points with x <= 0 or non-finite values are
/// ignored; at least 3 must remain.
PowerLawFit fit_power_law(std::span<const Point> points);

/// Evaluates the fitted law. `outside_range` is set when x lies outside the
/// fitted x range.
double extrapolate(const PowerLawFit& fit, double x, bool* outside_range = nullptr);

struct FrontierPoint {
  double bucket_center = 0.0;
  double bucket_lo = 0.0;
  double bucket_hi = 0.0;
  double loss = 0.0;
  std::string run_id;
  std::size_t N = 0;
  double C = 0.0;  // compute of the achieving record
};

/// Log-uniform buckets in C; per bucket the minimum metric over all records
/// of the split. Empty buckets are omitted; output is ordered by compute.
std::vector<FrontierPoint> compute_frontier(std::span<const RunRecord> records, const std::string& metric,
                                            const std::string& split, std::size_t buckets_per_decade = 4);

bool is_nonincreasing(std::span<const FrontierPoint> frontier);
/// Running minimum along compute; the cleaned curve is nonincreasing.
std::vector<FrontierPoint> isotonic_cleanup(std::vector<FrontierPoint> frontier);

/// Factor by which data must grow when the model grows by `n_ratio`.
double data_requirement(double n_ratio, double alpha_n, double alpha_d);

struct FitComparison {
  double slope_ratio = 0.0;
  double log_offset = 0.0;
  double x_ref = 0.0;
  /// False when the fitted x ranges do not overlap.
  bool reliable = true;
};

FitComparison compare_fits(const PowerLawFit& a, const PowerLawFit& b);

/// How a run's evaluation history is reduced to one loss.
enum class Reducer {
  minimum,    // best evaluation over training
  late_mean,  // mean of the last half of the evaluations
};

/// One (x, L) point per run for axes N and D. For axis C every record of
/// the split becomes a point.
std::vector<Point> collect_points(std::span<const RunRecord> records, Axis axis, const std::string& metric,
                                  const std::string& split, Reducer reducer);

/// The reducer matching each axis by default: minimum for N, late mean for D.
Reducer default_reducer(Axis axis);

}  // namespace tsscale::scaling
