#include "pv/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pv {

void AdamConfig::validate() const {
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in (0,1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& state, const AdamConfig& config,
               double lr, std::size_t t) {
  if (t == 0) throw std::invalid_argument("adam_step: step index starts at 1");
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters vs " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: moment buffers do not match the parameter count");
  }
  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(config.beta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(config.beta2, static_cast<double>(t)));
  const T rate = static_cast<T>(lr);
  const T eps = static_cast<T>(config.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T m_hat = state.m[i] / c1;
    const T v_hat = state.v[i] / c2;
    params[i] -= rate * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamConfig config)
    : params_(std::move(params)), moments_(params_.size()), config_(config) {
  config_.validate();
}

template <typename T>
void Adam<T>::step(double lr) {
  ++t_;
  std::vector<T> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = params_[i];
    std::span<const T> g;
    if (p.has_grad()) {
      g = p.grad();
    } else {
      zeros.assign(p.numel(), T(0));
      g = zeros;
    }
    adam_step<T>(p.mutable_data(), g, moments_[i], config_, lr, t_);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (Tensor<T>& p : params_) p.zero_grad();
}

double LrSchedule::operator()(Phase phase, std::size_t iteration) const {
  if (phase == Phase::step2) return finetune_lr;
  if (halve_every == 0) return base_lr;
  return std::ldexp(base_lr, -static_cast<int>(iteration / halve_every));
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamMoments<float>&, const AdamConfig&,
                               double, std::size_t);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamMoments<double>&,
                                const AdamConfig&, double, std::size_t);
template class Adam<float>;
template class Adam<double>;

}  // namespace pv
