#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace tsscale::corpus {

struct TimeSeries {
  std::string id;
  std::string domain;
  std::string frequency;
  std::vector<double> values;

  bool operator==(const TimeSeries&) const = default;
};

/// A weighted collection of series. Proportions are point fractions per domain.
struct CorpusManifest {
  std::vector<TimeSeries> series;

  std::size_t total_points() const;
  std::map<std::string, double> domain_proportions() const;
  std::map<std::string, std::size_t> domain_points() const;
};

// ---------------------------------------------------------------------------
// Synthetic generators

enum class Family { sinusoid_mix, ar_process, trend_seasonal, random_walk, heavy_tail_seasonal };

std::string to_string(Family f);
Family parse_family(const std::string& s);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

/// Parameter ranges are sampled uniformly per series. Periods are in samples.
struct GeneratorSpec {
  Family family = Family::sinusoid_mix;
  std::string domain = "synthetic";
  std::string frequency = "H";
  Range level{20.0, 60.0};
  Range amplitude{2.0, 10.0};
  Range period{48.0, 168.0};
  std::size_t harmonics = 2;
  Range trend{-0.01, 0.01};
  Range ar_coef{0.5, 0.9};
  /// Noise standard deviation relative to the signal amplitude.
  double noise = 0.05;
  /// Student-t degrees of freedom for heavy_tail_seasonal noise.
  double noise_df = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const GeneratorSpec&) const = default;
};

/// Deterministic under the spec's seed. Ids are "<domain>-<index>".
std::vector<TimeSeries> generate(const GeneratorSpec& spec, std::size_t n_series, std::size_t length);

// ---------------------------------------------------------------------------
// Quality estimation

struct FilterConfig {
  /// Cutoff as a fraction of the sampling rate, in (0, 0.5).
  double cutoff = 0.04;
  std::size_t order = 4;
};

/// Zero-phase low-pass: the spectrum is multiplied by the Butterworth
/// magnitude 1 / sqrt(1 + (f/fc)^(2 order)). The straight line through the
/// end points is removed first and added back afterwards so the implied
/// periodic extension has no jump.
std::vector<double> butterworth_lowpass(std::span<const double> x, double cutoff, std::size_t order);

/// Sentinel returned when residual power is negligible.
inline constexpr double kInfiniteSnr = 1e300;

/// 10 log10(P_signal / P_noise), signal = low-pass output, noise = residual,
/// power = mean square.
double estimate_snr(std::span<const double> x, const FilterConfig& cfg = {});

// ---------------------------------------------------------------------------
// Curation

struct CurationRules {
  double snr_threshold_db = 20.0;
  FilterConfig filter;
  std::size_t min_length = 64;
  /// Keep 1 of every `factor` series of a domain, chosen by id hash.
  std::map<std::string, std::size_t> dedup_factor;
  /// Target point fraction per domain; empty means uniform over domains present.
  std::map<std::string, double> target_proportions;
  double balance_tolerance = 0.02;
  std::uint64_t seed = 0;
};

struct CurationSummary {
  std::size_t input_series = 0;
  std::size_t dropped_missing = 0;
  std::size_t dropped_short = 0;
  std::size_t dropped_snr = 0;
  std::size_t dropped_dedup = 0;
  std::size_t dropped_balance = 0;
  std::size_t kept = 0;
};

CorpusManifest curate(const CorpusManifest& raw, const CurationRules& rules, CurationSummary* summary = nullptr);

// ---------------------------------------------------------------------------
// Subsets and splits

struct Subset {
  std::size_t target_points = 0;
  CorpusManifest train;
  CorpusManifest validation;

  std::size_t total_points() const { return train.total_points() + validation.total_points(); }
};

/// Nested subsets: every series of a smaller subset belongs to every larger
/// one, with domain proportions close to the parent's. Each subset is split
/// 95/5 into train/validation; a series keeps the same side in every subset.
std::vector<Subset> partition(const CorpusManifest& corpus, std::span<const std::size_t> sizes,
                              std::uint64_t seed, double validation_fraction = 0.05);

// ---------------------------------------------------------------------------
// Sampling, windows and packing

/// p_i = t_i / T, then mass above `cap` is redistributed over the uncapped
/// series in proportion to their weight until no entry exceeds the cap.
std::vector<double> sampling_weights(std::span<const std::size_t> lengths, double cap = 0.05);
std::map<std::string, double> sampling_weights(const CorpusManifest& corpus, double cap = 0.05);

struct WindowLimits {
  std::size_t patch_len = 32;
  std::size_t min_patches = 2;
  std::size_t max_patches = 8;
  double min_horizon_fraction = 0.15;
  double max_horizon_fraction = 0.50;

  bool operator==(const WindowLimits&) const = default;
};

struct WindowSample {
  std::string source_id;
  std::vector<double> context;
  std::vector<double> horizon;
  /// The sampled fraction; the realized horizon is rounded to whole patches.
  double horizon_fraction = 0.0;
};

WindowSample draw_window(const TimeSeries& series, std::mt19937_64& rng, const WindowLimits& limits);

struct PackedSegment {
  std::string source_id;
  std::size_t row = 0;
  std::size_t offset = 0;  // first token within the row
  std::size_t n_context = 0;
  std::size_t n_horizon = 0;
  std::size_t window_index = 0;  // position in the input list

  std::size_t n_tokens() const { return n_context + n_horizon; }
};

/// Rows of `tokens_per_row` patch tokens. `values` is row-major
/// [rows x tokens_per_row x patch_len]; padding tokens are zero and carry
/// segment id -1.
struct PackedBatch {
  std::size_t rows = 0;
  std::size_t tokens_per_row = 0;
  std::size_t patch_len = 0;
  std::vector<double> values;
  std::vector<int> segment_ids;
  std::vector<PackedSegment> segments;

  std::size_t n_tokens() const { return rows * tokens_per_row; }
  std::size_t padding_tokens() const;
  double padding_fraction() const;
  /// Token-level attention permission: same row and same (non-padding) segment.
  bool same_segment(std::size_t token_a, std::size_t token_b) const;
};

/// First-fit-decreasing packing of whole windows. Context and horizon lengths
/// must be multiples of the patch length.
PackedBatch pack(std::span<const WindowSample> windows, std::size_t tokens_per_row, std::size_t patch_len);

/// Recovers every packed window in input order.
std::vector<WindowSample> unpack(const PackedBatch& batch);

// ---------------------------------------------------------------------------
// Files

/// One JSON object per line: {"id","domain","frequency","values"}.
void write_corpus(const std::string& path, const CorpusManifest& corpus);
CorpusManifest read_corpus(const std::string& path);
/// Single-column CSV (optional non-numeric header); rejects NaN and blanks.
TimeSeries read_csv_series(const std::string& path, const std::string& domain = "external");

}  // namespace tsscale::corpus
