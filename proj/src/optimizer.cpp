#include "aaformer/optimizer.h"

#include <cmath>

namespace aaformer {

LrSchedule LrSchedule::from_config(const TrainConfig& cfg) {
  LrSchedule s;
  s.warmup_start = cfg.warmup_start_lr;
  s.base = cfg.base_lr;
  s.warmup_epochs = cfg.warmup_epochs;
  s.decay_epochs = cfg.decay_epochs;
  s.factor = cfg.decay_factor;
  return s;
}

double LrSchedule::at(double epoch) const {
  if (epoch < warmup_epochs) return warmup_start + (base - warmup_start) * epoch / warmup_epochs;
  double lr = base;
  for (auto e : decay_epochs) {
    if (epoch >= static_cast<double>(e)) lr *= factor;
  }
  return lr;
}

void Adam::step(ParameterStore& params, double lr) {
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double correction1 = 1.0 - std::pow(beta1_, t);
  const double correction2 = 1.0 - std::pow(beta2_, t);
  for (auto& [name, param] : params) {
    auto& m = state_.first_moment[name];
    auto& v = state_.second_moment[name];
    const std::size_t n = param.numel();
    if (m.size() != n) m.assign(n, 0.0);
    if (v.size() != n) v.assign(n, 0.0);
    auto values = param.mutable_data();
    const bool has_grad = param.has_grad();
    const auto g = has_grad ? param.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = has_grad ? g[i] : 0.0;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m[i] / correction1;
      const double vhat = v[i] / correction2;
      values[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace aaformer
