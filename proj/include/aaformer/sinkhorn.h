#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "aaformer/tensor.h"

namespace aaformer::ot {

/// The scaling vectors collapsed to zero or overflowed; the similarity range
/// is too wide for exp(sim/ε) in double precision.
class DegenerateSimilarityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Soft assignment of N patches onto P prototypes with rows summing to 1/P
/// and columns summing to 1/N (up to `residual`).
struct TransportPlan {
  Tensor values;  // P×N, nonnegative
  double row_target = 0.0;
  double col_target = 0.0;
  /// max(|row sums − 1/P|∞, |col sums − 1/N|∞) of `values`.
  double residual = 0.0;
  std::size_t iterations = 0;

  std::size_t parts() const { return values.rows(); }
  std::size_t patches() const { return values.cols(); }
};

/// Hard patch→part mapping for one granularity set.
struct AssignmentMask {
  std::vector<std::size_t> part_of;
  std::size_t num_parts = 0;

  std::size_t num_patches() const { return part_of.size(); }
  std::vector<std::size_t> counts() const;
  /// Patch indices of every part, ascending.
  std::vector<std::vector<std::size_t>> members() const;
  /// Largest cluster size divided by the number of patches.
  double max_fraction() const;
  bool is_partition() const;
};

/// Marginal violation of a P×N nonnegative matrix against (1/P, 1/N).
double marginal_residual(const Tensor& plan);

/// Diag(u)·exp(sim/ε)·Diag(v) after `iters` rounds of row-then-column
/// scaling. Each row of sim is shifted by its maximum before exponentiation,
/// which the first row scaling absorbs exactly.
TransportPlan entropic_transport(const Tensor& sim, double epsilon = 0.05, std::size_t iters = 3);

/// Iterates until the marginal residual drops below `tol`; stops at
/// `max_iters` and reports the residual reached.
TransportPlan entropic_transport_converged(const Tensor& sim, double epsilon, double tol,
                                           std::size_t max_iters);

/// Same iteration carried out on log-scaling vectors. Never underflows; used
/// when the direct form raises DegenerateSimilarityError.
TransportPlan entropic_transport_log(const Tensor& sim, double epsilon = 0.05, std::size_t iters = 3);

/// Per-patch argmax over parts; ties go to the lowest part index.
AssignmentMask round_assignment(const TransportPlan& plan);

/// Greedy rounding with capacity ceil(N/P) per part, visiting plan entries in
/// descending order (ties by part, then patch index).
AssignmentMask round_balanced(const TransportPlan& plan);

/// Per-patch argmax of the raw similarity; no balance constraint.
AssignmentMask nearest_neighbor_assignment(const Tensor& sim);

/// Horizontal bands: patch row r of `grid_rows` goes to part ⌊r·parts/grid_rows⌋.
AssignmentMask stripe_assignment(std::size_t grid_rows, std::size_t grid_cols, std::size_t parts);

}  // namespace aaformer::ot
