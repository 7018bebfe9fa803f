#include "aaformer/sinkhorn.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace aaformer::ot {

std::vector<std::size_t> AssignmentMask::counts() const {
  std::vector<std::size_t> c(num_parts, 0);
  for (auto p : part_of) ++c[p];
  return c;
}

std::vector<std::vector<std::size_t>> AssignmentMask::members() const {
  std::vector<std::vector<std::size_t>> m(num_parts);
  for (std::size_t n = 0; n < part_of.size(); ++n) m[part_of[n]].push_back(n);
  return m;
}

double AssignmentMask::max_fraction() const {
  if (part_of.empty()) return 0.0;
  const auto c = counts();
  return static_cast<double>(*std::max_element(c.begin(), c.end())) / static_cast<double>(part_of.size());
}

bool AssignmentMask::is_partition() const {
  return std::all_of(part_of.begin(), part_of.end(), [this](std::size_t p) { return p < num_parts; });
}

namespace {

void check_similarity(const Tensor& sim, double epsilon) {
  if (!sim.defined() || sim.dim() != 2) throw DimensionError("similarity must be a P×N matrix");
  if (sim.rows() == 0 || sim.cols() == 0) throw DimensionError("similarity must be nonempty");
  if (sim.rows() > sim.cols()) throw ContractError("transport needs P <= N");
  if (!(epsilon > 0.0)) throw ContractError("epsilon must be positive");
  for (double v : sim.data()) {
    if (!std::isfinite(v)) throw NumericError("similarity contains non-finite values");
  }
}

/// Kernel exp((sim − rowmax)/ε), row-major.
std::vector<double> shifted_kernel(const Tensor& sim, double epsilon) {
  const std::size_t P = sim.rows(), N = sim.cols();
  const auto S = sim.data();
  std::vector<double> K(P * N);
  for (std::size_t p = 0; p < P; ++p) {
    const double mx = *std::max_element(S.begin() + static_cast<std::ptrdiff_t>(p * N),
                                        S.begin() + static_cast<std::ptrdiff_t>((p + 1) * N));
    for (std::size_t n = 0; n < N; ++n) K[p * N + n] = std::exp((S[p * N + n] - mx) / epsilon);
  }
  return K;
}

class ScalingSolver {
 public:
  ScalingSolver(const Tensor& sim, double epsilon)
      : P_(sim.rows()), N_(sim.cols()), K_(shifted_kernel(sim, epsilon)), u_(P_, 1.0), v_(N_, 1.0) {}

  void iterate() {
    const double row_t = 1.0 / static_cast<double>(P_);
    const double col_t = 1.0 / static_cast<double>(N_);
    for (std::size_t p = 0; p < P_; ++p) {
      double acc = 0.0;
      const double* k = K_.data() + p * N_;
      for (std::size_t n = 0; n < N_; ++n) acc += k[n] * v_[n];
      u_[p] = row_t / acc;
      if (!(acc > 0.0) || !std::isfinite(u_[p])) {
        throw DegenerateSimilarityError("row scaling underflowed; similarity range too wide for epsilon");
      }
    }
    colsum_.assign(N_, 0.0);
    for (std::size_t p = 0; p < P_; ++p) {
      const double* k = K_.data() + p * N_;
      for (std::size_t n = 0; n < N_; ++n) colsum_[n] += u_[p] * k[n];
    }
    for (std::size_t n = 0; n < N_; ++n) {
      v_[n] = col_t / colsum_[n];
      if (!(colsum_[n] > 0.0) || !std::isfinite(v_[n])) {
        throw DegenerateSimilarityError("column scaling underflowed; similarity range too wide for epsilon");
      }
    }
  }

  /// Row residual of the current iterate; columns are exact after iterate().
  double row_residual() const {
    const double row_t = 1.0 / static_cast<double>(P_);
    double worst = 0.0;
    for (std::size_t p = 0; p < P_; ++p) {
      double acc = 0.0;
      const double* k = K_.data() + p * N_;
      for (std::size_t n = 0; n < N_; ++n) acc += u_[p] * k[n] * v_[n];
      worst = std::max(worst, std::abs(acc - row_t));
    }
    return worst;
  }

  TransportPlan plan(std::size_t iterations) const {
    std::vector<double> Y(P_ * N_);
    for (std::size_t p = 0; p < P_; ++p)
      for (std::size_t n = 0; n < N_; ++n) Y[p * N_ + n] = u_[p] * K_[p * N_ + n] * v_[n];
    TransportPlan out;
    out.values = Tensor::from({P_, N_}, std::move(Y));
    out.row_target = 1.0 / static_cast<double>(P_);
    out.col_target = 1.0 / static_cast<double>(N_);
    out.residual = marginal_residual(out.values);
    out.iterations = iterations;
    return out;
  }

 private:
  std::size_t P_, N_;
  std::vector<double> K_, u_, v_, colsum_;
};

double log_sum_exp(const double* x, std::size_t n, std::size_t stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i * stride]);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::exp(x[i * stride] - mx);
  return mx + std::log(acc);
}

}  // namespace

double marginal_residual(const Tensor& plan) {
  const std::size_t P = plan.rows(), N = plan.cols();
  const auto Y = plan.data();
  const double row_t = 1.0 / static_cast<double>(P);
  const double col_t = 1.0 / static_cast<double>(N);
  double worst = 0.0;
  std::vector<double> cols(N, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      acc += Y[p * N + n];
      cols[n] += Y[p * N + n];
    }
    worst = std::max(worst, std::abs(acc - row_t));
  }
  for (double c : cols) worst = std::max(worst, std::abs(c - col_t));
  return worst;
}

TransportPlan entropic_transport(const Tensor& sim, double epsilon, std::size_t iters) {
  check_similarity(sim, epsilon);
  if (iters == 0) throw ContractError("entropic_transport needs at least one iteration");
  ScalingSolver solver(sim, epsilon);
  for (std::size_t i = 0; i < iters; ++i) solver.iterate();
  return solver.plan(iters);
}

TransportPlan entropic_transport_converged(const Tensor& sim, double epsilon, double tol, std::size_t max_iters) {
  check_similarity(sim, epsilon);
  if (max_iters == 0) throw ContractError("entropic_transport_converged needs max_iters >= 1");
  ScalingSolver solver(sim, epsilon);
  std::size_t it = 0;
  while (it < max_iters) {
    solver.iterate();
    ++it;
    if (solver.row_residual() < tol) break;
  }
  return solver.plan(it);
}

TransportPlan entropic_transport_log(const Tensor& sim, double epsilon, std::size_t iters) {
  check_similarity(sim, epsilon);
  if (iters == 0) throw ContractError("entropic_transport_log needs at least one iteration");
  const std::size_t P = sim.rows(), N = sim.cols();
  const auto S = sim.data();
  std::vector<double> logK(P * N);
  for (std::size_t i = 0; i < P * N; ++i) logK[i] = S[i] / epsilon;
  const double log_row = -std::log(static_cast<double>(P));
  const double log_col = -std::log(static_cast<double>(N));
  std::vector<double> f(P, 0.0), g(N, 0.0), work(std::max(P, N));
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t n = 0; n < N; ++n) work[n] = logK[p * N + n] + g[n];
      f[p] = log_row - log_sum_exp(work.data(), N, 1);
    }
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t p = 0; p < P; ++p) work[p] = logK[p * N + n] + f[p];
      g[n] = log_col - log_sum_exp(work.data(), P, 1);
    }
  }
  std::vector<double> Y(P * N);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t n = 0; n < N; ++n) Y[p * N + n] = std::exp(logK[p * N + n] + f[p] + g[n]);
  TransportPlan out;
  out.values = Tensor::from({P, N}, std::move(Y));
  out.row_target = 1.0 / static_cast<double>(P);
  out.col_target = 1.0 / static_cast<double>(N);
  out.residual = marginal_residual(out.values);
  out.iterations = iters;
  return out;
}

namespace {

AssignmentMask column_argmax(const Tensor& m) {
  const std::size_t P = m.rows(), N = m.cols();
  const auto Y = m.data();
  AssignmentMask mask;
  mask.num_parts = P;
  mask.part_of.assign(N, 0);
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t best = 0;
    for (std::size_t p = 1; p < P; ++p) {
      if (Y[p * N + n] > Y[best * N + n]) best = p;
    }
    mask.part_of[n] = best;
  }
  return mask;
}

}  // namespace

AssignmentMask round_assignment(const TransportPlan& plan) {
  for (double v : plan.values.data()) {
    if (std::isnan(v)) throw NumericError("transport plan contains NaN");
  }
  return column_argmax(plan.values);
}

AssignmentMask round_balanced(const TransportPlan& plan) {
  const std::size_t P = plan.parts(), N = plan.patches();
  const auto Y = plan.values.data();
  std::vector<std::size_t> order(P * N);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return Y[a] > Y[b]; });
  const std::size_t capacity = (N + P - 1) / P;
  AssignmentMask mask;
  mask.num_parts = P;
  mask.part_of.assign(N, P);
  std::vector<std::size_t> load(P, 0);
  std::size_t assigned = 0;
  for (auto idx : order) {
    const std::size_t p = idx / N, n = idx % N;
    if (mask.part_of[n] != P || load[p] == capacity) continue;
    mask.part_of[n] = p;
    ++load[p];
    if (++assigned == N) break;
  }
  return mask;
}

AssignmentMask nearest_neighbor_assignment(const Tensor& sim) {
  if (!sim.defined() || sim.dim() != 2) throw DimensionError("similarity must be a P×N matrix");
  for (double v : sim.data()) {
    if (!std::isfinite(v)) throw NumericError("similarity contains non-finite values");
  }
  return column_argmax(sim);
}

AssignmentMask stripe_assignment(std::size_t grid_rows, std::size_t grid_cols, std::size_t parts) {
  if (parts == 0 || parts > grid_rows) throw ContractError("stripe_assignment needs 1 <= parts <= grid rows");
  AssignmentMask mask;
  mask.num_parts = parts;
  mask.part_of.resize(grid_rows * grid_cols);
  for (std::size_t r = 0; r < grid_rows; ++r)
    for (std::size_t c = 0; c < grid_cols; ++c) mask.part_of[r * grid_cols + c] = r * parts / grid_rows;
  return mask;
}

}  // namespace aaformer::ot
