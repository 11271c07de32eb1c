#include "tsscale/model/config.hpp"

#include <stdexcept>

namespace tsscale::model {

std::string to_string(Architecture a) { return a == Architecture::encoder_only ? "encoder_only" : "decoder_only"; }
std::string to_string(HeadFamily f) { return f == HeadFamily::student_t ? "student_t" : "gaussian"; }

Architecture parse_architecture(const std::string& s) {
  if (s == "encoder_only") return Architecture::encoder_only;
  if (s == "decoder_only") return Architecture::decoder_only;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

HeadFamily parse_head_family(const std::string& s) {
  if (s == "student_t") return HeadFamily::student_t;
  if (s == "gaussian") return HeadFamily::gaussian;
  throw std::invalid_argument("unknown head family '" + s + "'");
}

bool ModelConfig::is_standard() const { return n_heads * d_head == d_m && d_ff == 4 * d_m; }

void ModelConfig::validate() const {
  if (d_m == 0 || n_heads == 0 || d_head == 0 || d_ff == 0) {
    throw std::invalid_argument("model widths and head count must be positive");
  }
  if (d_head % 2 != 0) throw std::invalid_argument("d_head must be even for rotary embeddings");
  if (patch_len < 1) throw std::invalid_argument("patch length must be >= 1");
  if (components < 1) throw std::invalid_argument("mixture needs at least one component");
  if (df_floor < 2.0) throw std::invalid_argument("df_floor must be >= 2");
  if (rope_base <= 1.0) throw std::invalid_argument("rope base must exceed 1");
}

ParamCount param_count(const ModelConfig& cfg) {
  ParamCount c;
  const std::size_t inner = cfg.n_heads * cfg.d_head;
  c.core = cfg.n_layer * (4 * cfg.d_m * inner + 2 * cfg.d_m * cfg.d_ff);
  c.embedding = cfg.patch_len * cfg.d_m;
  const std::size_t head_width = cfg.head_param_types() * cfg.components * cfg.patch_len;
  c.head = head_width * cfg.d_m;

  // q/k/v biases, output bias, two feed-forward biases, two norms per layer.
  const std::size_t per_layer = 3 * inner + cfg.d_m + cfg.d_ff + cfg.d_m + 4 * cfg.d_m;
  c.excluded = cfg.n_layer * per_layer + cfg.d_m /* embedding bias */ + 2 * cfg.d_m /* final norm */ +
               head_width /* head biases */;
  if (cfg.architecture == Architecture::encoder_only) c.excluded += cfg.d_m;  // mask token
  c.total = c.core + c.embedding + c.head + c.excluded;
  return c;
}

ModelConfig standard_config(std::size_t n_layer, std::size_t d_m, std::size_t n_heads, Architecture arch) {
  if (n_heads == 0 || d_m % n_heads != 0) throw std::invalid_argument("d_m must be divisible by n_heads");
  ModelConfig cfg;
  cfg.architecture = arch;
  cfg.n_layer = n_layer;
  cfg.d_m = d_m;
  cfg.n_heads = n_heads;
  cfg.d_head = d_m / n_heads;
  cfg.d_ff = 4 * d_m;
  return cfg;
}

}  // namespace tsscale::model
