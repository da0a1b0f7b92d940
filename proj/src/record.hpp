#pragma once

// Helpers shared by op implementations for recording tape nodes.

#include <cmath>
#include <string>
#include <utility>

#include "pv/tensor.hpp"

namespace pv::detail {

/// Active tape when any of the inputs requires a gradient, else nullptr.
template <typename T, typename... Ts>
GradTape<T>* tape_for(const Ts&... inputs) {
  auto* tape = GradTape<T>::active();
  if (!tape) return nullptr;
  return ((inputs.defined() && inputs.requires_grad()) || ...) ? tape : nullptr;
}

/// Marks `out` as differentiable and appends the node.
template <typename T, typename Fn>
void record(GradTape<T>* tape, std::string_view op, std::vector<std::shared_ptr<TensorStorage<T>>> inputs,
            Tensor<T>& out, Fn&& backward) {
  out.set_requires_grad(true);
  tape->record({op, std::move(inputs), out.storage(), std::forward<Fn>(backward)});
}

/// Gradient sink for an input, or an empty span when it needs none.
template <typename T>
std::span<T> sink(const std::shared_ptr<TensorStorage<T>>& s) {
  if (!s || !s->requires_grad) return {};
  return s->grad_buffer();
}

template <typename T>
void check_finite([[maybe_unused]] const Tensor<T>& t, [[maybe_unused]] std::string_view op) {
#ifndef NDEBUG
  for (T v : t.data()) {
    if (std::isnan(v)) throw std::logic_error("NaN produced by " + std::string(op));
  }
#endif
}

}  // namespace pv::detail
