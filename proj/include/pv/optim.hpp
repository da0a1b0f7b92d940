#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pv/tensor.hpp"

namespace pv {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-4;

  void validate() const;
};

template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// One bias-corrected Adam update at step t >= 1. Moments are sized on first
/// use and must match the parameter count afterwards.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& state, const AdamConfig& config,
               double lr, std::size_t t);

/// Adam over a fixed list of tensors. Tensors without a gradient buffer are
/// updated as if their gradient were zero.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig config);

  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<AdamMoments<T>> moments_;
  AdamConfig config_;
  std::size_t t_ = 0;
};

enum class Phase { step1, step2 };

/// Step 1 halves base_lr every `halve_every` iterations; step 2 is constant.
struct LrSchedule {
  double base_lr = 0.003;
  std::size_t halve_every = 1000;
  double finetune_lr = 1e-4;

  double operator()(Phase phase, std::size_t iteration) const;
};

inline double lr_schedule(std::size_t iteration) { return LrSchedule{}(Phase::step1, iteration); }

}  // namespace pv
