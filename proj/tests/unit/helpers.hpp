#pragma once

#include <cmath>
#include <vector>

#include "pv/oracles.hpp"
#include "pv/rng.hpp"
#include "pv/tensor.hpp"

namespace pv::test {

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor<float> random_float(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return random_tensor(shape, rng, lo, hi).cast<float>();
}

template <typename T>
oracle::Array to_array(const Tensor<T>& t) {
  oracle::Array a;
  a.shape = t.shape();
  for (T v : t.data()) a.v.push_back(static_cast<double>(v));
  return a;
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double worst = 0.0;
  auto ia = std::begin(a);
  for (auto ib = std::begin(b); ib != std::end(b); ++ia, ++ib) {
    worst = std::max(worst, std::abs(static_cast<double>(*ia) - static_cast<double>(*ib)));
  }
  return worst;
}

inline double norm(const auto& v) {
  double s = 0.0;
  for (auto x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

}  // namespace pv::test
