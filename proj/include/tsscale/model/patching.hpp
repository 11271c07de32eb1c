#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tsscale::model {

/// Row-major [n_patches x patch_len] grid. The first n_context patches are
/// observed, the remaining n_horizon are future values.
struct PatchSequence {
  std::size_t patch_len = 0;
  std::size_t n_context = 0;
  std::size_t n_horizon = 0;
  std::vector<double> patches;

  std::size_t n_patches() const { return n_context + n_horizon; }
  std::span<const double> patch(std::size_t i) const {
    return std::span<const double>(patches).subspan(i * patch_len, patch_len);
  }
};

/// Splits a series into floor(L/P) non-overlapping patches. When L is not a
/// multiple of P the oldest L mod P points are dropped. All patches are
/// marked as context.
PatchSequence patchify(std::span<const double> series, std::size_t patch_len);

/// Concatenates the patches back into the covered suffix of the series.
std::vector<double> depatchify(const PatchSequence& seq);

/// Context and horizon patched together; horizon length must be a multiple
/// of the patch length.
PatchSequence patchify_window(std::span<const double> context, std::span<const double> horizon,
                              std::size_t patch_len);

}  // namespace tsscale::model
