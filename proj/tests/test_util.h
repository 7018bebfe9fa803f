#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "aaformer/tensor.h"

namespace testutil {

using aaformer::Tensor;

inline Tensor random_tensor(aaformer::Shape shape, std::mt19937_64& rng, double scale = 1.0,
                            bool requires_grad = false) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(aaformer::shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Largest |analytic − central difference| / max(1, |numeric|) over all
/// coordinates of all inputs.
inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  aaformer::backward(f());
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double x0 = t.data()[i];
      t.mutable_data()[i] = x0 + h;
      const double up = f().item();
      t.mutable_data()[i] = x0 - h;
      const double down = f().item();
      t.mutable_data()[i] = x0;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

/// Sum of elementwise products with fixed random weights: turns any tensor
/// into a scalar whose gradient exercises every output entry.
inline Tensor probe(const Tensor& x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return aaformer::sum(aaformer::mul(x, random_tensor(x.shape(), rng)));
}

}  // namespace testutil
