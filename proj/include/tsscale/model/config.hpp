#pragma once

#include <cstddef>
#include <string>

namespace tsscale::model {

enum class Architecture { encoder_only, decoder_only };
enum class HeadFamily { student_t, gaussian };

std::string to_string(Architecture a);
std::string to_string(HeadFamily f);
Architecture parse_architecture(const std::string& s);
HeadFamily parse_head_family(const std::string& s);

struct ModelConfig {
  Architecture architecture = Architecture::encoder_only;
  std::size_t n_layer = 2;
  std::size_t d_m = 16;
  std::size_t n_heads = 2;
  std::size_t d_head = 8;
  std::size_t d_ff = 64;
  std::size_t patch_len = 32;
  std::size_t components = 4;
  HeadFamily head_family = HeadFamily::student_t;
  double df_floor = 2.0;
  double rope_base = 10000.0;

  /// n_heads * d_head == d_m and d_ff == 4 d_m.
  bool is_standard() const;
  /// Throws std::invalid_argument on a structurally invalid config.
  void validate() const;
  /// Number of distribution parameter types emitted per component.
  std::size_t head_param_types() const { return head_family == HeadFamily::student_t ? 4 : 3; }

  bool operator==(const ModelConfig&) const = default;
};

/// Parameter counts split the way the scaling laws use them: `core` holds the
/// attention and feed-forward matrices only; biases, norms and the mask token
/// live in `excluded`.
struct ParamCount {
  std::size_t core = 0;
  std::size_t embedding = 0;
  std::size_t head = 0;
  std::size_t excluded = 0;
  std::size_t total = 0;
};

ParamCount param_count(const ModelConfig& cfg);

/// Builds a standard-shape config: n_heads * d_head == d_m, d_ff == 4 d_m.
ModelConfig standard_config(std::size_t n_layer, std::size_t d_m, std::size_t n_heads,
                            Architecture arch = Architecture::encoder_only);

}  // namespace tsscale::model
