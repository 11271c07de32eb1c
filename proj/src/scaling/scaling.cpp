#include "tsscale/scaling/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tsscale::scaling {

std::string to_string(Axis a) {
  switch (a) {
    case Axis::N: return "N";
    case Axis::C: return "C";
    case Axis::D: return "D";
  }
  return "?";
}

Axis parse_axis(const std::string& s) {
  if (s == "N") return Axis::N;
  if (s == "C") return Axis::C;
  if (s == "D") return Axis::D;
  throw std::invalid_argument("unknown axis '" + s + "' (expected N, C or D)");
}

PowerLawFit fit_power_law(std::span<const Point> points) {
  std::vector<Point> valid;
  for (const auto& [x, l] : points) {
    if (x > 0.0 && std::isfinite(x) && std::isfinite(l)) valid.emplace_back(x, l);
  }
  if (valid.size() < 3) {
    throw std::invalid_argument("power-law fit needs at least 3 valid points, got " + std::to_string(valid.size()));
  }
  PowerLawFit fit;
  fit.n_points = valid.size();
  double min_l = std::numeric_limits<double>::infinity();
  fit.x_min = min_l;
  fit.x_max = -min_l;
  for (const auto& [x, l] : valid) {
    min_l = std::min(min_l, l);
    fit.x_min = std::min(fit.x_min, x);
    fit.x_max = std::max(fit.x_max, x);
  }
  if (min_l <= 0.0) fit.shift = 1.0 - min_l;

  const double n = static_cast<double>(valid.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, l] : valid) {
    mx += std::log(x) / n;
    my += std::log(l + fit.shift) / n;
  }
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, l] : valid) {
    const double dx = std::log(x) - mx, dy = std::log(l + fit.shift) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw std::invalid_argument("power-law fit needs at least two distinct x values");
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;
  fit.alpha = -slope;
  if (slope == 0.0) {
    fit.degenerate = true;
    fit.x_c = std::numeric_limits<double>::quiet_NaN();
    fit.r_squared = 0.0;
    return fit;
  }
  fit.x_c = std::exp(intercept / fit.alpha);
  fit.r_squared = syy == 0.0 ? 1.0 : sxy * sxy / (sxx * syy);
  return fit;
}

double extrapolate(const PowerLawFit& fit, double x, bool* outside_range) {
  if (fit.degenerate || !(fit.x_c > 0.0) || !std::isfinite(fit.alpha)) {
    throw std::invalid_argument("cannot extrapolate a degenerate power-law fit");
  }
  if (!(x > 0.0)) throw std::invalid_argument("extrapolate needs x > 0");
  if (outside_range) *outside_range = x < fit.x_min || x > fit.x_max;
  return std::pow(fit.x_c / x, fit.alpha) - fit.shift;
}

std::vector<FrontierPoint> compute_frontier(std::span<const RunRecord> records, const std::string& metric,
                                            const std::string& split, std::size_t buckets_per_decade) {
  if (buckets_per_decade == 0) throw std::invalid_argument("buckets_per_decade must be >= 1");
  const double bpd = static_cast<double>(buckets_per_decade);
  std::map<long, FrontierPoint> buckets;
  for (const auto& r : records) {
    if (r.split != split || !(r.C > 0.0)) continue;
    const auto it = r.metrics.find(metric);
    if (it == r.metrics.end() || !std::isfinite(it->second)) continue;
    const long idx = static_cast<long>(std::floor(std::log10(r.C) * bpd));
    auto [slot, fresh] = buckets.try_emplace(idx);
    auto& b = slot->second;
    // Ties go to the smaller compute, then the lexicographically first run.
    const bool better = fresh || it->second < b.loss ||
                        (it->second == b.loss && (r.C < b.C || (r.C == b.C && r.run_id < b.run_id)));
    if (better) {
      b.loss = it->second;
      b.run_id = r.run_id;
      b.N = r.N;
      b.C = r.C;
      b.bucket_lo = std::pow(10.0, static_cast<double>(idx) / bpd);
      b.bucket_hi = std::pow(10.0, static_cast<double>(idx + 1) / bpd);
      b.bucket_center = std::pow(10.0, (static_cast<double>(idx) + 0.5) / bpd);
    }
  }
  std::vector<FrontierPoint> out;
  for (auto& [idx, p] : buckets) out.push_back(std::move(p));
  return out;
}

bool is_nonincreasing(std::span<const FrontierPoint> frontier) {
  for (std::size_t i = 1; i < frontier.size(); ++i) {
    if (frontier[i].loss > frontier[i - 1].loss) return false;
  }
  return true;
}

std::vector<FrontierPoint> isotonic_cleanup(std::vector<FrontierPoint> frontier) {
  for (std::size_t i = 1; i < frontier.size(); ++i) {
    if (frontier[i].loss > frontier[i - 1].loss) {
      const double best = frontier[i - 1].loss;
      const auto run = frontier[i - 1].run_id;
      const auto n = frontier[i - 1].N;
      const auto c = frontier[i - 1].C;
      frontier[i].loss = best;
      frontier[i].run_id = run;
      frontier[i].N = n;
      frontier[i].C = c;
    }
  }
  return frontier;
}

double data_requirement(double n_ratio, double alpha_n, double alpha_d) {
  if (alpha_d == 0.0) throw std::invalid_argument("data_requirement: alpha_D must be nonzero");
  if (!(n_ratio > 0.0)) throw std::invalid_argument("data_requirement: N ratio must be positive");
  return std::pow(n_ratio, alpha_n / alpha_d);
}

FitComparison compare_fits(const PowerLawFit& a, const PowerLawFit& b) {
  if (a.axis != b.axis || a.metric != b.metric) {
    throw std::invalid_argument("compare_fits needs fits on the same axis and metric");
  }
  if (a.degenerate || b.degenerate || b.alpha == 0.0) throw std::invalid_argument("compare_fits: degenerate fit");
  FitComparison out;
  out.slope_ratio = a.alpha / b.alpha;
  double lo = std::max(a.x_min, b.x_min), hi = std::min(a.x_max, b.x_max);
  if (lo > hi) {
    out.reliable = false;
    lo = std::min(a.x_min, b.x_min);
    hi = std::max(a.x_max, b.x_max);
  }
  out.x_ref = std::sqrt(lo * hi);
  out.log_offset = std::log(extrapolate(a, out.x_ref) + a.shift) - std::log(extrapolate(b, out.x_ref) + b.shift);
  return out;
}

Reducer default_reducer(Axis axis) { return axis == Axis::D ? Reducer::late_mean : Reducer::minimum; }

std::vector<Point> collect_points(std::span<const RunRecord> records, Axis axis, const std::string& metric,
                                  const std::string& split, Reducer reducer) {
  std::vector<Point> out;
  if (axis == Axis::C) {
    for (const auto& r : records) {
      const auto it = r.metrics.find(metric);
      if (r.split == split && it != r.metrics.end()) out.emplace_back(r.C, it->second);
    }
    return out;
  }
  std::map<std::string, std::vector<const RunRecord*>> runs;
  for (const auto& r : records) {
    if (r.split == split && r.metrics.count(metric)) runs[r.run_id].push_back(&r);
  }
  for (auto& [id, rs] : runs) {
    std::stable_sort(rs.begin(), rs.end(), [](const RunRecord* a, const RunRecord* b) { return a->step < b->step; });
    double value = 0.0;
    if (reducer == Reducer::minimum) {
      value = std::numeric_limits<double>::infinity();
      for (const auto* r : rs) value = std::min(value, r->metrics.at(metric));
    } else {
      const std::size_t first = rs.size() / 2;
      for (std::size_t i = first; i < rs.size(); ++i) value += rs[i]->metrics.at(metric);
      value /= static_cast<double>(rs.size() - first);
    }
    const double x = static_cast<double>(axis == Axis::N ? rs.front()->N : rs.front()->D);
    out.emplace_back(x, value);
  }
  return out;
}

}  // namespace tsscale::scaling
