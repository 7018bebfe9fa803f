#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "aaformer/config.h"
#include "aaformer/tensor.h"

namespace aaformer {

/// Linear warmup from `warmup_start` to `base` over `warmup_epochs`, then
/// piecewise constant with a ×factor drop at each decay epoch.
struct LrSchedule {
  double warmup_start = 3.5e-5;
  double base = 3.5e-4;
  double warmup_epochs = 2.0;
  std::vector<std::size_t> decay_epochs{8, 14};
  double factor = 0.1;

  static LrSchedule from_config(const TrainConfig& cfg);
  /// `epoch` is fractional (step / steps_per_epoch).
  double at(double epoch) const;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Bias-corrected update of every parameter in name order. Parameters
  /// without a gradient buffer are treated as having zero gradient.
  void step(ParameterStore& params, double lr);

  const AdamState& state() const { return state_; }
  void set_state(AdamState state) { state_ = std::move(state); }

 private:
  double beta1_, beta2_, eps_;
  AdamState state_;
};

}  // namespace aaformer
