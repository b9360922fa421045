#pragma once

#include <cstdint>
#include <vector>

#include "focalforge/autodiff/tensor.hpp"

namespace focalforge::ad {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// Bias-corrected Adam over a fixed list of parameters.
class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg = {});

  // Uses each parameter's current gradient (absent gradient counts as zero).
  void step(double lr);

  const AdamState& state() const { return state_; }
  // Throws ValidationError if tensor counts or shapes disagree.
  void load_state(AdamState state);
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Var> params_;
  AdamConfig cfg_;
  AdamState state_;
};

// Single update on raw tensors; exposed for testing.
void adam_step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

// Linear ramp 0 -> base over `warmup` epochs, then cosine decay to 0 at
// `total`. Fractional epochs are allowed. Throws if epoch is outside [0, total).
double cosine_warmup_lr(double epoch, int total = 700, int warmup = 10, double base = 1e-4);

}  // namespace focalforge::ad
