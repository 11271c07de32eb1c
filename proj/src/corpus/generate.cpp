#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tsscale/corpus/corpus.hpp"

namespace tsscale::corpus {

std::size_t CorpusManifest::total_points() const {
  std::size_t total = 0;
  for (const auto& s : series) total += s.values.size();
  return total;
}

std::map<std::string, std::size_t> CorpusManifest::domain_points() const {
  std::map<std::string, std::size_t> points;
  for (const auto& s : series) points[s.domain] += s.values.size();
  return points;
}

std::map<std::string, double> CorpusManifest::domain_proportions() const {
  std::map<std::string, double> out;
  const double total = static_cast<double>(total_points());
  if (total == 0.0) return out;
  for (const auto& [domain, n] : domain_points()) out[domain] = static_cast<double>(n) / total;
  return out;
}

std::string to_string(Family f) {
  switch (f) {
    case Family::sinusoid_mix: return "sinusoid_mix";
    case Family::ar_process: return "ar_process";
    case Family::trend_seasonal: return "trend_seasonal";
    case Family::random_walk: return "random_walk";
    case Family::heavy_tail_seasonal: return "heavy_tail_seasonal";
  }
  return "unknown";
}

Family parse_family(const std::string& s) {
  for (Family f : {Family::sinusoid_mix, Family::ar_process, Family::trend_seasonal, Family::random_walk,
                   Family::heavy_tail_seasonal}) {
    if (to_string(f) == s) return f;
  }
  throw std::invalid_argument("unknown generator family '" + s + "'");
}

namespace {

void check_range(const Range& r, const char* name) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
    throw std::invalid_argument(std::string("generator range '") + name + "' must be finite with lo <= hi");
  }
}

double draw(const Range& r, std::mt19937_64& rng) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

}  // namespace

void GeneratorSpec::validate() const {
  check_range(level, "level");
  check_range(amplitude, "amplitude");
  check_range(period, "period");
  check_range(trend, "trend");
  check_range(ar_coef, "ar_coef");
  if (amplitude.lo < 0.0) throw std::invalid_argument("amplitude must be non-negative");
  if (period.lo <= 2.0) throw std::invalid_argument("period must exceed 2 samples");
  if (ar_coef.lo <= -1.0 || ar_coef.hi >= 1.0) throw std::invalid_argument("ar_coef must lie in (-1, 1)");
  if (harmonics == 0) throw std::invalid_argument("harmonics must be at least 1");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("noise must be finite and >= 0");
  if (!(noise_df > 0.0)) throw std::invalid_argument("noise_df must be positive");
  if (domain.empty()) throw std::invalid_argument("generator domain must be non-empty");
}

std::vector<TimeSeries> generate(const GeneratorSpec& spec, std::size_t n_series, std::size_t length) {
  spec.validate();
  if (n_series == 0) throw std::invalid_argument("generate: n_series must be >= 1");
  if (length < 2) throw std::invalid_argument("generate: length must be >= 2");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::vector<TimeSeries> out;
  out.reserve(n_series);
  for (std::size_t i = 0; i < n_series; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(spec.family)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, two_pi);

    const double level = draw(spec.level, rng);
    const double amp = draw(spec.amplitude, rng);
    const double period = draw(spec.period, rng);
    const double slope = draw(spec.trend, rng);
    const double sigma = spec.noise * amp;

    TimeSeries ts;
    ts.id = spec.domain + "-" + std::to_string(i);
    ts.domain = spec.domain;
    ts.frequency = spec.frequency;
    ts.values.resize(length);
    auto& v = ts.values;

    switch (spec.family) {
      case Family::sinusoid_mix: {
        std::vector<double> phases(spec.harmonics);
        for (double& p : phases) p = phase(rng);
        for (std::size_t t = 0; t < length; ++t) {
          double x = level;
          for (std::size_t h = 0; h < spec.harmonics; ++h) {
            const double k = static_cast<double>(h + 1);
            x += amp / k * std::sin(two_pi * k * static_cast<double>(t) / period + phases[h]);
          }
          v[t] = x + sigma * normal(rng);
        }
        break;
      }
      case Family::ar_process: {
        // Innovations of standard deviation noise * amplitude around the level.
        const double phi = draw(spec.ar_coef, rng);
        double state = sigma / std::sqrt(1.0 - phi * phi) * normal(rng);
        for (std::size_t t = 0; t < length; ++t) {
          if (t > 0) state = phi * state + sigma * normal(rng);
          v[t] = level + state;
        }
        break;
      }
      case Family::trend_seasonal: {
        const double p0 = phase(rng), p1 = phase(rng);
        for (std::size_t t = 0; t < length; ++t) {
          const double tt = static_cast<double>(t);
          v[t] = level + slope * amp * tt + amp * std::sin(two_pi * tt / period + p0) +
                 0.3 * amp * std::sin(two_pi * tt / (4.0 * period) + p1) + sigma * normal(rng);
        }
        break;
      }
      case Family::random_walk: {
        double x = level;
        for (std::size_t t = 0; t < length; ++t) {
          if (t > 0) x += slope * amp + sigma * normal(rng);
          v[t] = x;
        }
        break;
      }
      case Family::heavy_tail_seasonal: {
        std::student_t_distribution<double> heavy(spec.noise_df);
        const double p0 = phase(rng);
        for (std::size_t t = 0; t < length; ++t) {
          v[t] = level + amp * std::sin(two_pi * static_cast<double>(t) / period + p0) + sigma * heavy(rng);
        }
        break;
      }
    }
    for (double x : v) {
      if (!std::isfinite(x)) throw std::domain_error("generator produced a non-finite value for " + ts.id);
    }
    out.push_back(std::move(ts));
  }
  return out;
}

}  // namespace tsscale::corpus
