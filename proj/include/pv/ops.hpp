#pragma once

#include <vector>

#include "pv/tensor.hpp"

namespace pv {

enum class Elementwise { add, sub, mul, relu, sigmoid, exp };
enum class Reduction { sum, mean, max };

/// Unary kinds ignore `b`; binary kinds require identical shapes (no
/// broadcasting).
template <typename T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const Tensor<T>& b = {});

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Elementwise::add, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Elementwise::sub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Elementwise::mul, a, b); }
template <typename T>
Tensor<T> relu(const Tensor<T>& a) { return elementwise(Elementwise::relu, a); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) { return elementwise(Elementwise::sigmoid, a); }
template <typename T>
Tensor<T> exp(const Tensor<T>& a) { return elementwise(Elementwise::exp, a); }

/// a * s for a constant s.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

/// (m,k) x (k,n) -> (m,n).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Removes the listed axes. Max routes gradients to the first maximum.
template <typename T>
Tensor<T> reduce(Reduction kind, const Tensor<T>& a, const std::vector<std::size_t>& axes);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// softmax(a / temperature) along the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, T temperature = T(1));

inline constexpr double kNormEpsilon = 1e-12;

/// a / max(||a||, eps) along the last axis.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& a, T eps = T(kNormEpsilon));

/// Same values, new shape with equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Rows of `a` (leading axis) at the given indices, in order.
template <typename T>
Tensor<T> select_rows(const Tensor<T>& a, const std::vector<std::size_t>& indices);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

}  // namespace pv
