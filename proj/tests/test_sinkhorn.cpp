#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "aaformer/sinkhorn.h"
#include "test_util.h"

using namespace aaformer;
using namespace aaformer::ot;
using testutil::random_tensor;

namespace {

std::vector<double> row_sums(const Tensor& m) {
  std::vector<double> s(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) s[i] += m.at(i, j);
  return s;
}

std::vector<double> col_sums(const Tensor& m) {
  std::vector<double> s(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) s[j] += m.at(i, j);
  return s;
}

TransportPlan plan_from(std::size_t p, std::size_t n, std::vector<double> v) {
  TransportPlan plan;
  plan.values = Tensor::from({p, n}, std::move(v));
  return plan;
}

}  // namespace

TEST(Sinkhorn, ZeroSimilarityGivesUniformPlan) {
  for (double eps : {0.05, 1.0, 7.5}) {
    const auto plan = entropic_transport(Tensor::zeros({2, 4}), eps, 3);
    for (double v : plan.values.data()) EXPECT_NEAR(v, 0.125, 1e-15);
    for (double r : row_sums(plan.values)) EXPECT_NEAR(r, 0.5, 1e-15);
    for (double c : col_sums(plan.values)) EXPECT_NEAR(c, 0.25, 1e-15);
  }
}

TEST(Sinkhorn, DiagonalSimilarityMatchesClosedForm) {
  // For a symmetric 2×2 kernel the converged plan is K scaled to row sums 1/2.
  const auto plan = entropic_transport_converged(Tensor::from({2, 2}, {10, 0, 0, 10}), 0.05, 1e-14, 100);
  const double off = 0.5 / (std::exp(200.0) + 1.0);
  EXPECT_NEAR(plan.values.at(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(plan.values.at(1, 1), 0.5, 1e-15);
  EXPECT_NEAR(plan.values.at(0, 1), off, off * 1e-9);
  EXPECT_NEAR(plan.values.at(1, 0), off, off * 1e-9);
  const auto mask = round_assignment(plan);
  EXPECT_EQ(mask.part_of, (std::vector<std::size_t>{0, 1}));
}

TEST(Sinkhorn, RandomPlanConvergesToMarginals) {
  std::mt19937_64 rng(5);
  const auto sim = random_tensor({3, 8}, rng, 0.3);
  const auto plan = entropic_transport(sim, 0.05, 1000);
  for (double r : row_sums(plan.values)) EXPECT_NEAR(r, 1.0 / 3, 1e-9);
  for (double c : col_sums(plan.values)) EXPECT_NEAR(c, 1.0 / 8, 1e-9);
  for (double v : plan.values.data()) EXPECT_GE(v, 0.0);
}

TEST(Sinkhorn, TruncatedPlanReportsItsResidual) {
  std::mt19937_64 rng(6);
  const auto sim = random_tensor({5, 24}, rng, 0.5);
  const auto plan = entropic_transport(sim, 0.05, 3);
  EXPECT_EQ(plan.iterations, 3u);
  EXPECT_DOUBLE_EQ(plan.residual, marginal_residual(plan.values));
  // Column scaling runs last, so the column marginals are exact.
  for (double c : col_sums(plan.values)) EXPECT_NEAR(c, 1.0 / 24, 1e-15);
}

TEST(Sinkhorn, ConvergedVariantStopsAtTolerance) {
  std::mt19937_64 rng(7);
  const auto sim = random_tensor({3, 12}, rng, 0.3);
  const auto plan = entropic_transport_converged(sim, 0.05, 1e-12, 5000);
  EXPECT_LT(plan.residual, 1e-12);
  EXPECT_LE(plan.iterations, 5000u);
  const auto capped = entropic_transport_converged(sim, 0.05, 1e-300, 4);
  EXPECT_EQ(capped.iterations, 4u);
  EXPECT_GT(capped.residual, 0.0);
}

TEST(Sinkhorn, ShiftInvariance) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto sim = random_tensor({3, 12}, rng, 0.4);
    std::vector<double> shifted(sim.data().begin(), sim.data().end());
    for (auto& v : shifted) v += 3.75;
    const auto a = entropic_transport(sim, 0.05, 3);
    const auto b = entropic_transport(Tensor::from(sim.shape(), shifted), 0.05, 3);
    for (std::size_t i = 0; i < a.values.numel(); ++i) EXPECT_NEAR(a.values.at(i), b.values.at(i), 1e-9);
  }
}

TEST(Sinkhorn, LargeEpsilonApproachesUniform) {
  std::mt19937_64 rng(9);
  const auto sim = random_tensor({5, 24}, rng, 1.0);
  const auto plan = entropic_transport_converged(sim, 1e6, 1e-13, 1000);
  for (double v : plan.values.data()) EXPECT_NEAR(v, 1.0 / 120, 1e-6);
}

TEST(Sinkhorn, ColumnPermutationEquivariance) {
  std::mt19937_64 rng(10);
  const auto sim = random_tensor({3, 9}, rng, 0.4);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> permuted(27);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 9; ++j) permuted[i * 9 + j] = sim.at(i, perm[j]);
  const auto a = entropic_transport(sim, 0.05, 3);
  const auto b = entropic_transport(Tensor::from({3, 9}, permuted), 0.05, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 9; ++j) EXPECT_NEAR(b.values.at(i, j), a.values.at(i, perm[j]), 1e-14);
}

TEST(Sinkhorn, LogDomainAgreesWithDirectForm) {
  std::mt19937_64 rng(11);
  const auto sim = random_tensor({5, 24}, rng, 0.3);
  const auto a = entropic_transport(sim, 0.05, 3);
  const auto b = entropic_transport_log(sim, 0.05, 3);
  for (std::size_t i = 0; i < a.values.numel(); ++i) EXPECT_NEAR(a.values.at(i), b.values.at(i), 1e-14);
}

TEST(Sinkhorn, UnderflowIsDegenerateAndLogDomainRecovers) {
  const auto sim = Tensor::from({2, 3}, {0, 0, -100, 0, 0, -100});
  EXPECT_THROW(entropic_transport(sim, 0.05, 3), DegenerateSimilarityError);
  const auto plan = entropic_transport_log(sim, 0.05, 3);
  for (double c : col_sums(plan.values)) EXPECT_NEAR(c, 1.0 / 3, 1e-15);
  for (double r : row_sums(plan.values)) EXPECT_NEAR(r, 0.5, 1e-15);
}

TEST(Sinkhorn, InputErrors) {
  EXPECT_THROW(entropic_transport(Tensor::zeros({4, 2}), 0.05, 3), ContractError);
  EXPECT_THROW(entropic_transport(Tensor::zeros({2, 4}), 0.0, 3), ContractError);
  EXPECT_THROW(entropic_transport(Tensor::zeros({2, 4}), 0.05, 0), ContractError);
  EXPECT_THROW(entropic_transport(Tensor::zeros({8}), 0.05, 3), DimensionError);
}

TEST(Rounding, StrictArgmaxAndTies) {
  const auto strict = round_assignment(plan_from(2, 3, {0.3, 0.1, 0.2, 0.1, 0.3, 0.1}));
  EXPECT_EQ(strict.part_of, (std::vector<std::size_t>{0, 1, 0}));
  const auto tie = round_assignment(plan_from(3, 2, {0.2, 0.1, 0.2, 0.3, 0.2, 0.3}));
  EXPECT_EQ(tie.part_of, (std::vector<std::size_t>{0, 1}));
}

TEST(Rounding, BalancedRespectsCapacity) {
  // Part 0 dominates every patch; capacity ceil(5/2) = 3 pushes the rest to part 1.
  const auto mask = round_balanced(plan_from(2, 5, {0.9, 0.8, 0.7, 0.6, 0.5, 0.1, 0.2, 0.3, 0.4, 0.45}));
  EXPECT_EQ(mask.part_of, (std::vector<std::size_t>{0, 0, 0, 1, 1}));
  EXPECT_TRUE(mask.is_partition());
  EXPECT_LE(mask.max_fraction(), 0.6);
}

TEST(Rounding, ConvergedPlanGivesEveryPartAPatch) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto sim = random_tensor({3, 12}, rng, 0.5);
    const auto mask = round_assignment(entropic_transport_converged(sim, 0.05, 1e-12, 5000));
    for (auto c : mask.counts()) EXPECT_GE(c, 1u);
  }
}

TEST(NearestNeighbor, CollapseIsLegal) {
  const auto mask = nearest_neighbor_assignment(Tensor::from({2, 3}, {1, 1, 1, 0, 0, 0}));
  EXPECT_EQ(mask.part_of, (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_EQ(mask.counts(), (std::vector<std::size_t>{3, 0}));
  EXPECT_DOUBLE_EQ(mask.max_fraction(), 1.0);
}

TEST(NearestNeighbor, DistinctArgmaxes) {
  const auto mask = nearest_neighbor_assignment(Tensor::from({3, 3}, {0, 5, 1, 3, 0, 0, 1, 1, 4}));
  EXPECT_EQ(mask.part_of, (std::vector<std::size_t>{1, 0, 2}));
}

TEST(NearestNeighbor, OnlyTransportIsBalancedOnSkewedInput) {
  // Part 0's prototype is close to every key: NN collapses, OT spreads.
  std::mt19937_64 rng(13);
  auto sim = random_tensor({2, 20}, rng, 0.05);
  std::vector<double> v(sim.data().begin(), sim.data().end());
  for (std::size_t j = 0; j < 20; ++j) v[j] += 1.0;
  sim = Tensor::from({2, 20}, v);
  EXPECT_DOUBLE_EQ(nearest_neighbor_assignment(sim).max_fraction(), 1.0);
  EXPECT_LE(round_balanced(entropic_transport(sim, 0.05, 3)).max_fraction(), 0.5);
  EXPECT_LT(round_assignment(entropic_transport_converged(sim, 0.05, 1e-12, 5000)).max_fraction(), 1.0);
}

TEST(Stripes, HorizontalBands) {
  const auto mask = stripe_assignment(4, 2, 2);
  EXPECT_EQ(mask.part_of, (std::vector<std::size_t>{0, 0, 0, 0, 1, 1, 1, 1}));
  const auto three = stripe_assignment(6, 1, 3);
  EXPECT_EQ(three.part_of, (std::vector<std::size_t>{0, 0, 1, 1, 2, 2}));
  EXPECT_THROW(stripe_assignment(2, 2, 3), ContractError);
}

TEST(Mask, MembersAndPartition) {
  AssignmentMask m{{1, 0, 1, 2}, 3};
  EXPECT_TRUE(m.is_partition());
  EXPECT_EQ(m.members()[1], (std::vector<std::size_t>{0, 2}));
  EXPECT_DOUBLE_EQ(m.max_fraction(), 0.5);
  AssignmentMask bad{{0, 3}, 3};
  EXPECT_FALSE(bad.is_partition());
}
