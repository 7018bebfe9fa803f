#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace aaformer {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation produces or receives NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a caller violates an API precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

/// Gradient views handed to a custom backward rule. `in[i]` is empty when the
/// i-th input does not require a gradient.
struct GradRefs {
  std::span<const double> out;
  std::vector<std::span<double>> in;
};

using BackwardRule = std::function<void(const GradRefs&)>;

/// Dense row-major float64 array with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage, which is how
/// parameters appear both in a ParameterStore and in the graph of a forward
/// pass. Use clone() or detach() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  /// First dimension of a 2-D tensor.
  std::size_t rows() const;
  /// Second dimension of a 2-D tensor.
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same values, fresh leaf with no history.
  Tensor detach() const;
  /// Deep copy preserving requires_grad but not history.
  Tensor clone() const;

  bool is_leaf() const;

  /// Builds the result of a custom differentiable operation. The rule is
  /// called during backward with the output gradient and input gradient
  /// views. Throws NumericError if any value is non-finite.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            const std::vector<Tensor>& inputs, BackwardRule rule);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend void backward(const Tensor&);
  friend void backward_from(const Tensor&, std::span<const double>);

  std::shared_ptr<detail::Node> node_;
};

/// Named, sorted collection of trainable leaves.
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor>;

  /// Registers a tensor under a unique name and marks it trainable.
  Tensor& add(const std::string& name, Tensor tensor);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t total_numel() const;

  void zero_grad();
  /// Allocates a zero gradient for every parameter that has none.
  void ensure_grads();

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

 private:
  Map params_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are reset on every call.
void backward(const Tensor& loss);
/// As backward(loss), and afterwards every parameter in the store carries a
/// gradient buffer (zero when unreachable).
void backward(const Tensor& loss, ParameterStore& params);
/// Reverse sweep seeded with an explicit output gradient.
void backward_from(const Tensor& output, std::span<const double> seed);

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// x[M×N] + b broadcast over rows; b has N elements.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
/// Row softmax restricted to entries where mask is nonzero; masked entries
/// are exactly zero. Every row needs at least one unmasked entry.
Tensor masked_softmax_rows(const Tensor& x, std::span<const std::uint8_t> mask);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Euclidean distance between two equally sized tensors, as a scalar. The
/// squared distance is clamped below at `floor` so the gradient stays finite
/// for coincident points (it is zero there).
Tensor l2_distance(const Tensor& a, const Tensor& b, double floor = 1e-12);

}  // namespace aaformer
