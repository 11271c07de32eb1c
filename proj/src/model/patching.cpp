#include "tsscale/model/patching.hpp"

#include <stdexcept>
#include <string>

namespace tsscale::model {

PatchSequence patchify(std::span<const double> series, std::size_t patch_len) {
  if (patch_len == 0) throw std::invalid_argument("patch length must be positive");
  if (series.size() < patch_len) {
    throw std::invalid_argument("series of length " + std::to_string(series.size()) +
                                " is shorter than one patch of " + std::to_string(patch_len));
  }
  const std::size_t n = series.size() / patch_len;
  const std::size_t drop = series.size() - n * patch_len;
  PatchSequence seq;
  seq.patch_len = patch_len;
  seq.n_context = n;
  seq.patches.assign(series.begin() + static_cast<std::ptrdiff_t>(drop), series.end());
  return seq;
}

std::vector<double> depatchify(const PatchSequence& seq) { return seq.patches; }

PatchSequence patchify_window(std::span<const double> context, std::span<const double> horizon,
                              std::size_t patch_len) {
  if (horizon.size() % patch_len != 0) {
    throw std::invalid_argument("horizon length must be a multiple of the patch length");
  }
  PatchSequence seq = patchify(context, patch_len);
  seq.n_horizon = horizon.size() / patch_len;
  seq.patches.insert(seq.patches.end(), horizon.begin(), horizon.end());
  return seq;
}

}  // namespace tsscale::model
