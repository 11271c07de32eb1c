#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tsscale/corpus/corpus.hpp"

namespace tsscale::corpus {

std::vector<double> sampling_weights(std::span<const std::size_t> lengths, double cap) {
  if (!(cap > 0.0 && cap <= 1.0)) throw std::invalid_argument("sampling cap must lie in (0, 1]");
  if (lengths.empty()) throw std::invalid_argument("sampling_weights needs at least one series");
  for (std::size_t t : lengths) {
    if (t == 0) throw std::invalid_argument("sampling_weights: series lengths must be positive");
  }
  const std::size_t n = lengths.size();
  std::vector<char> clamped(n, 0);
  std::vector<double> p(n);
  std::size_t n_clamped = 0;
  for (;;) {
    double free_weight = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!clamped[i]) free_weight += static_cast<double>(lengths[i]);
    const double free_mass = 1.0 - static_cast<double>(n_clamped) * cap;
    std::vector<std::size_t> violators;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = clamped[i] ? cap : free_mass * static_cast<double>(lengths[i]) / free_weight;
      if (!clamped[i] && p[i] > cap) violators.push_back(i);
    }
    // When the cap is infeasible (cap * n < 1) the last unclamped series keep
    // the remaining mass rather than leaving it unassigned.
    if (violators.empty() || n_clamped + violators.size() == n) break;
    if (1.0 - static_cast<double>(n_clamped + violators.size()) * cap <= 0.0) break;
    for (std::size_t i : violators) clamped[i] = 1;
    n_clamped += violators.size();
  }
  return p;
}

std::map<std::string, double> sampling_weights(const CorpusManifest& corpus, double cap) {
  std::vector<std::size_t> lengths;
  lengths.reserve(corpus.series.size());
  for (const auto& s : corpus.series) lengths.push_back(s.values.size());
  const auto p = sampling_weights(lengths, cap);
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < p.size(); ++i) out[corpus.series[i].id] = p[i];
  return out;
}

WindowSample draw_window(const TimeSeries& series, std::mt19937_64& rng, const WindowLimits& limits) {
  const std::size_t P = limits.patch_len;
  if (P == 0) throw std::invalid_argument("window patch length must be positive");
  if (limits.min_patches < 2 || limits.max_patches < limits.min_patches) {
    throw std::invalid_argument("window patch limits need 2 <= min_patches <= max_patches");
  }
  if (!(limits.min_horizon_fraction > 0.0 && limits.min_horizon_fraction <= limits.max_horizon_fraction &&
        limits.max_horizon_fraction < 1.0)) {
    throw std::invalid_argument("horizon fractions need 0 < min <= max < 1");
  }
  const std::size_t available = series.values.size() / P;
  if (available < 2) throw std::invalid_argument("series '" + series.id + "' is too short for a window");
  const std::size_t hi = std::min(limits.max_patches, available);
  const std::size_t lo = std::min(limits.min_patches, hi);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  const double u =
      std::uniform_real_distribution<double>(limits.min_horizon_fraction, limits.max_horizon_fraction)(rng);
  const auto h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(u * static_cast<double>(n))), 1, n - 1);
  const std::size_t c = n - h;
  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, series.values.size() - n * P)(rng);

  WindowSample w;
  w.source_id = series.id;
  w.horizon_fraction = u;
  const auto begin = series.values.begin() + static_cast<std::ptrdiff_t>(start);
  w.context.assign(begin, begin + static_cast<std::ptrdiff_t>(c * P));
  w.horizon.assign(begin + static_cast<std::ptrdiff_t>(c * P), begin + static_cast<std::ptrdiff_t>(n * P));
  return w;
}

std::size_t PackedBatch::padding_tokens() const {
  return static_cast<std::size_t>(std::count(segment_ids.begin(), segment_ids.end(), -1));
}

double PackedBatch::padding_fraction() const {
  return n_tokens() == 0 ? 0.0 : static_cast<double>(padding_tokens()) / static_cast<double>(n_tokens());
}

bool PackedBatch::same_segment(std::size_t a, std::size_t b) const {
  if (a >= n_tokens() || b >= n_tokens()) throw std::out_of_range("token index outside the packed batch");
  return a / tokens_per_row == b / tokens_per_row && segment_ids[a] != -1 && segment_ids[a] == segment_ids[b];
}

PackedBatch pack(std::span<const WindowSample> windows, std::size_t tokens_per_row, std::size_t patch_len) {
  if (tokens_per_row == 0 || patch_len == 0) throw std::invalid_argument("pack: row size and patch length must be positive");
  std::vector<std::size_t> tokens(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    if (w.context.empty() || w.context.size() % patch_len != 0 || w.horizon.size() % patch_len != 0) {
      throw std::invalid_argument("window from '" + w.source_id + "' is not a whole number of patches");
    }
    tokens[i] = (w.context.size() + w.horizon.size()) / patch_len;
    if (tokens[i] > tokens_per_row) {
      throw std::invalid_argument("window from '" + w.source_id + "' has " + std::to_string(tokens[i]) +
                                  " tokens, row budget is " + std::to_string(tokens_per_row));
    }
  }
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return tokens[a] > tokens[b]; });

  PackedBatch batch;
  batch.tokens_per_row = tokens_per_row;
  batch.patch_len = patch_len;
  std::vector<std::size_t> used;
  for (std::size_t i : order) {
    std::size_t row = 0;
    while (row < used.size() && used[row] + tokens[i] > tokens_per_row) ++row;
    if (row == used.size()) used.push_back(0);
    PackedSegment seg;
    seg.source_id = windows[i].source_id;
    seg.row = row;
    seg.offset = used[row];
    seg.n_context = windows[i].context.size() / patch_len;
    seg.n_horizon = windows[i].horizon.size() / patch_len;
    seg.window_index = i;
    used[row] += tokens[i];
    batch.segments.push_back(std::move(seg));
  }
  batch.rows = used.size();
  batch.values.assign(batch.n_tokens() * patch_len, 0.0);
  batch.segment_ids.assign(batch.n_tokens(), -1);
  for (std::size_t s = 0; s < batch.segments.size(); ++s) {
    const auto& seg = batch.segments[s];
    const auto& w = windows[seg.window_index];
    const std::size_t first = seg.row * tokens_per_row + seg.offset;
    std::copy(w.context.begin(), w.context.end(), batch.values.begin() + static_cast<std::ptrdiff_t>(first * patch_len));
    std::copy(w.horizon.begin(), w.horizon.end(),
              batch.values.begin() + static_cast<std::ptrdiff_t>(first * patch_len + w.context.size()));
    std::fill_n(batch.segment_ids.begin() + static_cast<std::ptrdiff_t>(first), seg.n_tokens(), static_cast<int>(s));
  }
  return batch;
}

std::vector<WindowSample> unpack(const PackedBatch& batch) {
  std::vector<WindowSample> out(batch.segments.size());
  const std::size_t P = batch.patch_len;
  for (const auto& seg : batch.segments) {
    if (seg.window_index >= out.size()) throw std::invalid_argument("packed segment has an invalid window index");
    auto& w = out[seg.window_index];
    const auto begin = batch.values.begin() +
                       static_cast<std::ptrdiff_t>((seg.row * batch.tokens_per_row + seg.offset) * P);
    w.source_id = seg.source_id;
    w.context.assign(begin, begin + static_cast<std::ptrdiff_t>(seg.n_context * P));
    w.horizon.assign(begin + static_cast<std::ptrdiff_t>(seg.n_context * P),
                     begin + static_cast<std::ptrdiff_t>(seg.n_tokens() * P));
    w.horizon_fraction = static_cast<double>(seg.n_horizon) / static_cast<double>(seg.n_tokens());
  }
  return out;
}

}  // namespace tsscale::corpus
