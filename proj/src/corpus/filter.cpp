#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <stdexcept>

#include "tsscale/corpus/corpus.hpp"

namespace tsscale::corpus {

namespace {

// The FFTW planner is not thread-safe; execution on distinct arrays is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::vector<double> butterworth_lowpass(std::span<const double> x, double cutoff, std::size_t order) {
  if (!(cutoff > 0.0 && cutoff < 0.5)) {
    throw std::invalid_argument("butterworth cutoff must lie in (0, 0.5), got " + std::to_string(cutoff));
  }
  if (order == 0) throw std::invalid_argument("butterworth order must be >= 1");
  const std::size_t n = x.size();
  if (n < 2) return std::vector<double>(x.begin(), x.end());

  const double first = x.front(), last = x.back();
  const double slope = (last - first) / static_cast<double>(n - 1);
  std::vector<double> work(n);
  for (std::size_t t = 0; t < n; ++t) work[t] = x[t] - (first + slope * static_cast<double>(t));

  const std::size_t bins = n / 2 + 1;
  fftw_complex* spectrum = fftw_alloc_complex(bins);
  fftw_plan forward, backward;
  {
    std::lock_guard lock(planner_mutex());
    forward = fftw_plan_dft_r2c_1d(static_cast<int>(n), work.data(), spectrum, FFTW_ESTIMATE);
    backward = fftw_plan_dft_c2r_1d(static_cast<int>(n), spectrum, work.data(), FFTW_ESTIMATE);
  }
  fftw_execute(forward);
  const double two_order = 2.0 * static_cast<double>(order);
  for (std::size_t k = 0; k < bins; ++k) {
    const double f = static_cast<double>(k) / static_cast<double>(n);
    const double gain = 1.0 / std::sqrt(1.0 + std::pow(f / cutoff, two_order)) / static_cast<double>(n);
    spectrum[k][0] *= gain;
    spectrum[k][1] *= gain;
  }
  fftw_execute(backward);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(backward);
  }
  fftw_free(spectrum);

  for (std::size_t t = 0; t < n; ++t) work[t] += first + slope * static_cast<double>(t);
  return work;
}

double estimate_snr(std::span<const double> x, const FilterConfig& cfg) {
  if (x.size() < 16) throw std::invalid_argument("estimate_snr needs at least 16 points");
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("estimate_snr: series contains non-finite values");
  }
  const auto smooth = butterworth_lowpass(x, cfg.cutoff, cfg.order);
  double signal = 0.0, noise = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    signal += smooth[t] * smooth[t];
    noise += (x[t] - smooth[t]) * (x[t] - smooth[t]);
  }
  if (noise <= 1e-15 * signal) return kInfiniteSnr;
  return 10.0 * std::log10(signal / noise);
}

}  // namespace tsscale::corpus
