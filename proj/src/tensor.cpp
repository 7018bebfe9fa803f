#include "aaformer/tensor.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace aaformer {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardRule rule;

  bool is_leaf() const { return !rule; }

  std::span<double> ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + where);
  }
}

void require_2d(const Tensor& t, const char* op) {
  if (!t.defined() || t.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         (t.defined() ? shape_string(t.shape()) : "undefined"));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor::from: shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  check_finite(values, "Tensor::from");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  if (dim() != 2) throw DimensionError("rows() on tensor of shape " + shape_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (dim() != 2) throw DimensionError("cols() on tensor of shape " + shape_string(shape()));
  return node_->shape[1];
}

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient buffer");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone() const {
  Tensor t = from(shape(), node_->value, node_->requires_grad);
  if (has_grad()) t.node_->grad = node_->grad;
  return t;
}

bool Tensor::is_leaf() const { return node_->is_leaf(); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                           BackwardRule rule) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("make_result: shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  check_finite(values, "tensor operation");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.node_->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node_);
    node->rule = std::move(rule);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// ParameterStore
// ---------------------------------------------------------------------------

Tensor& ParameterStore::add(const std::string& name, Tensor tensor) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  if (!tensor.defined()) throw ContractError("undefined tensor for parameter: " + name);
  tensor.set_requires_grad(true);
  return params_.emplace(name, std::move(tensor)).first->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

void ParameterStore::ensure_grads() {
  for (auto& [_, t] : params_) t.mutable_grad();
}

// ---------------------------------------------------------------------------
// Reverse sweep
// ---------------------------------------------------------------------------

namespace {

std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

void run_backward(Node* root, std::span<const double> seed) {
  if (!root->requires_grad) return;
  auto order = topo_order(root);
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  auto root_grad = root->ensure_grad();
  for (std::size_t i = 0; i < seed.size(); ++i) root_grad[i] += seed[i];

  GradRefs refs;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf()) continue;
    refs.out = n->grad;
    refs.in.clear();
    for (auto& p : n->parents) {
      refs.in.push_back(p->requires_grad ? p->ensure_grad() : std::span<double>{});
    }
    n->rule(refs);
  }
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  const double one = 1.0;
  run_backward(loss.node_.get(), std::span<const double>(&one, 1));
}

void backward(const Tensor& loss, ParameterStore& params) {
  backward(loss);
  params.ensure_grads();
}

void backward_from(const Tensor& output, std::span<const double> seed) {
  if (seed.size() != output.numel()) throw DimensionError("backward_from: seed size mismatch");
  run_backward(output.node_.get(), seed);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  }
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](const GradRefs& g) {
    const auto A = a.data();
    const auto B = b.data();
    if (!g.in[0].empty()) {
      auto dA = g.in[0];
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B.data() + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          dA[i * k + p] += acc;
        }
      }
    }
    if (!g.in[1].empty()) {
      auto dB = g.in[1];
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          double* drow = dB.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()) + "ᵀ");
  }
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = B.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[i * n + j] = acc;
    }
  }
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](const GradRefs& g) {
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double gv = g.out[i * n + j];
        if (gv == 0.0) continue;
        if (!g.in[0].empty()) {
          double* da = g.in[0].data() + i * k;
          const double* brow = B.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) da[p] += gv * brow[p];
        }
        if (!g.in[1].empty()) {
          double* db = g.in[1].data() + j * k;
          const double* arow = A.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) db[p] += gv * arow[p];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  const auto A = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return Tensor::make_result({n, m}, std::move(out), {a}, [m, n](const GradRefs& g) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g.in[0][i * n + j] += g.out[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](const GradRefs& g) {
    for (auto& dst : g.in) {
      if (dst.empty()) continue;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.out[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](const GradRefs& g) {
    if (!g.in[0].empty())
      for (std::size_t i = 0; i < g.out.size(); ++i) g.in[0][i] += g.out[i];
    if (!g.in[1].empty())
      for (std::size_t i = 0; i < g.out.size(); ++i) g.in[1][i] -= g.out[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](const GradRefs& g) {
    if (!g.in[0].empty())
      for (std::size_t i = 0; i < g.out.size(); ++i) g.in[0][i] += g.out[i] * b.at(i);
    if (!g.in[1].empty())
      for (std::size_t i = 0; i < g.out.size(); ++i) g.in[1][i] += g.out[i] * a.at(i);
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](const GradRefs& g) {
    for (std::size_t i = 0; i < g.out.size(); ++i) g.in[0][i] += factor * g.out[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs columns " + std::to_string(n));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [m, n](const GradRefs& g) {
    if (!g.in[0].empty())
      for (std::size_t i = 0; i < g.out.size(); ++i) g.in[0][i] += g.out[i];
    if (!g.in[1].empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g.in[1][j] += g.out[i * n + j];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [](const GradRefs& g) {
    for (std::size_t i = 0; i < g.out.size(); ++i) g.in[0][i] += g.out[i];
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return Tensor::make_result({}, {acc}, {x}, [](const GradRefs& g) {
    for (double& d : g.in[0]) d += g.out[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.at(i), 0.0);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x](const GradRefs& g) {
    for (std::size_t i = 0; i < g.out.size(); ++i)
      if (x.at(i) > 0.0) g.in[0][i] += g.out[i];
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.at(i);
    out[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x](const GradRefs& g) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.out.size(); ++i) {
      const double v = x.at(i);
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g.in[0][i] += g.out[i] * (cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax and normalisation
// ---------------------------------------------------------------------------

namespace {

Tensor softmax_impl(const Tensor& x, std::span<const std::uint8_t> mask) {
  require_2d(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  const bool masked = !mask.empty();
  if (masked && mask.size() != m * n) throw DimensionError("masked_softmax_rows: mask size mismatch");
  check_finite(x.data(), "softmax_rows input");
  const auto X = x.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = X.data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (masked && !mask[i * n + j]) continue;
      mx = std::max(mx, row[j]);
      any = true;
    }
    if (!any) throw ContractError("masked_softmax_rows: row " + std::to_string(i) + " is fully masked");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (masked && !mask[i * n + j]) continue;
      out[i * n + j] = std::exp(row[j] - mx);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  auto result_values = out;
  return Tensor::make_result({m, n}, std::move(out), {x},
                             [y = std::move(result_values), m, n](const GradRefs& g) {
                               for (std::size_t i = 0; i < m; ++i) {
                                 const double* yr = y.data() + i * n;
                                 const double* gr = g.out.data() + i * n;
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
                                 double* dx = g.in[0].data() + i * n;
                                 for (std::size_t j = 0; j < n; ++j) dx[j] += yr[j] * (gr[j] - dot);
                               }
                             });
}

}  // namespace

Tensor softmax_rows(const Tensor& x) { return softmax_impl(x, {}); }

Tensor masked_softmax_rows(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (mask.empty()) throw ContractError("masked_softmax_rows: empty mask");
  return softmax_impl(x, mask);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_2d(x, "layer_norm");
  if (eps < 0.0) throw ContractError("layer_norm: eps must be nonnegative");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n) throw DimensionError("layer_norm: gamma/beta size mismatch");
  const auto X = x.data();
  const auto G = gamma.data();
  const auto B = beta.data();
  std::vector<double> xhat(m * n), rstd(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = X.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * rstd[i];
      out[i * n + j] = xhat[i * n + j] * G[j] + B[j];
    }
  }
  check_finite(rstd, "layer_norm (zero variance with eps = 0)");
  return Tensor::make_result(
      {m, n}, std::move(out), {x, gamma, beta},
      [gamma, xhat = std::move(xhat), rstd = std::move(rstd), m, n](const GradRefs& g) {
        const auto G = gamma.data();
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          const double* gr = g.out.data() + i * n;
          const double* xh = xhat.data() + i * n;
          if (!g.in[1].empty())
            for (std::size_t j = 0; j < n; ++j) g.in[1][j] += gr[j] * xh[j];
          if (!g.in[2].empty())
            for (std::size_t j = 0; j < n; ++j) g.in[2][j] += gr[j];
          if (g.in[0].empty()) continue;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = gr[j] * G[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          double* dx = g.in[0].data() + i * n;
          for (std::size_t j = 0; j < n; ++j) dx[j] += rstd[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
      });
}

// ---------------------------------------------------------------------------
// Slicing and concatenation
// ---------------------------------------------------------------------------

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_rows");
  if (start + count > x.rows()) throw DimensionError("slice_rows: range out of bounds");
  const std::size_t n = x.cols();
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                          x.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n));
  return Tensor::make_result({count, n}, std::move(out), {x}, [start, n](const GradRefs& g) {
    double* dst = g.in[0].data() + start * n;
    for (std::size_t i = 0; i < g.out.size(); ++i) dst[i] += g.out[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (start + count > n) throw DimensionError("slice_cols: range out of bounds");
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.at(i * n + start + j);
  return Tensor::make_result({m, count}, std::move(out), {x}, [m, n, start, count](const GradRefs& g) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) g.in[0][i * n + start + j] += g.out[i * count + j];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require_2d(x, "gather_rows");
  const std::size_t n = x.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= x.rows()) throw DimensionError("gather_rows: index out of range");
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x.at(idx[r] * n + j);
  }
  const std::size_t count = idx.size();
  return Tensor::make_result({count, n}, std::move(out), {x}, [idx = std::move(idx), n](const GradRefs& g) {
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) g.in[0][idx[r] * n + j] += g.out[r * n + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  require_2d(parts.front(), "concat_rows");
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  std::vector<std::size_t> sizes;
  std::vector<double> out;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != n) throw DimensionError("concat_rows: column count mismatch");
    total += p.rows();
    sizes.push_back(p.numel());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor::make_result({total, n}, std::move(out), parts, [sizes = std::move(sizes)](const GradRefs& g) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (!g.in[k].empty())
        for (std::size_t i = 0; i < sizes[k]; ++i) g.in[k][i] += g.out[offset + i];
      offset += sizes[k];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto d = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + offset + j] = d[i * widths[k] + j];
    offset += widths[k];
  }
  return Tensor::make_result({m, total}, std::move(out), parts,
                             [widths = std::move(widths), m, total](const GradRefs& g) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 if (!g.in[k].empty()) {
                                   for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t j = 0; j < widths[k]; ++j)
                                       g.in[k][i * widths[k] + j] += g.out[i * total + off + j];
                                 }
                                 off += widths[k];
                               }
                             });
}

Tensor l2_distance(const Tensor& a, const Tensor& b, double floor) {
  require_same_shape(a, b, "l2_distance");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.at(i) - b.at(i);
    sq += d * d;
  }
  const bool clamped = sq < floor;
  const double dist = std::sqrt(clamped ? floor : sq);
  return Tensor::make_result({}, {dist}, {a, b}, [a, b, dist, clamped](const GradRefs& g) {
    if (clamped) return;
    const double s = g.out[0] / dist;
    for (std::size_t i = 0; i < a.numel(); ++i) {
      const double d = (a.at(i) - b.at(i)) * s;
      if (!g.in[0].empty()) g.in[0][i] += d;
      if (!g.in[1].empty()) g.in[1][i] -= d;
    }
  });
}

}  // namespace aaformer
