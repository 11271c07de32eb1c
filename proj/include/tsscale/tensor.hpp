#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tsscale {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool tracked = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient.
///
/// Tensors are handles: copying one shares the underlying storage. Values
/// produced by operations are never mutated afterwards, only their gradient
/// buffers are. Leaves created with `requires_grad` are the trainable
/// parameters; `backward` accumulates into them until `zero_grad`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Mutable view for leaves only (parameter updates, initialization).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool tracked() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Gradient view; zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  /// calls; intermediate adjoints are recomputed on every call.
  void backward() const;

  /// Detached copy sharing no graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-topological record of the tracked graph reachable from a loss.
class Tape {
 public:
  static Tape record(const Tensor& loss);

  const std::vector<detail::Node*>& order() const { return order_; }
  std::size_t size() const { return order_.size(); }
  void replay(detail::Node& root) const;

 private:
  std::vector<detail::Node*> order_;  // topological: inputs before outputs
  std::vector<std::shared_ptr<detail::Node>> keep_;
};

/// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops broadcast by aligning trailing
// dimensions; a dimension of size 1 expands to match the other operand.

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor exp(const Tensor& a);
/// Throws std::domain_error on non-positive entries.
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor softmax(const Tensor& x, int axis = -1);

enum class Reduction { sum, mean };
Tensor reduce(const Tensor& x, Reduction kind, int axis);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

/// Row-wise layer normalization of a [rows x width] matrix.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Selects rows of a matrix; the adjoint scatters back.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Rows flagged in `replace` take the value of `token` (shape [width]).
Tensor replace_rows(const Tensor& x, std::span<const char> replace, const Tensor& token);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// Maximum relative error between reverse-mode gradients of `f` at `x` and
/// central differences (f(x+eps e_i) - f(x-eps e_i)) / (2 eps). The
/// relative error of coordinate i is |g - fd| / max(|g|, |fd|, floor).
/// `x` must be a leaf with requires_grad; its data is perturbed in place
/// and restored.
double finite_diff_check(const std::function<Tensor()>& f, Tensor& x, double eps,
                         double floor = 1e-6);

/// Convenience overload for functions of a single tensor.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                         double eps, double floor = 1e-6);

}  // namespace tsscale
