#pragma once

#include <cstdint>
#include <vector>

#include "pv/ops.hpp"
#include "pv/rng.hpp"
#include "pv/tensor.hpp"

namespace pv {

/// Trainable parameters of the aggregation layer.
///
/// centers holds the anchor points c_k as rows (K, D). assign_w (K, D) and
/// assign_z (K) parameterize the soft assignment; they start tied to the
/// centers and are trained independently afterwards.
template <typename T>
struct VladParams {
  Tensor<T> centers;
  Tensor<T> assign_w;
  Tensor<T> assign_z;
  double alpha = 1000.0;

  std::size_t clusters() const { return centers.dim(0); }
  std::size_t dim() const { return centers.dim(1); }

  /// w_k = 2 alpha c_k, z_k = -alpha ||c_k||^2.
  static VladParams tied(const Tensor<T>& centers, double alpha);
  /// Recomputes assign_w / assign_z from the current centers.
  void retie();
};

/// Softmax over k of (w_k . f + z_k) for each row of (M, D) descriptors;
/// returns (M, K).
template <typename T>
Tensor<T> soft_assign(const Tensor<T>& descriptors, const Tensor<T>& assign_w, const Tensor<T>& assign_z);

/// V[n, k, :] = sum_b a[n, b, k] (f[n, b, :] - c_k).
/// descriptors: (N, B, D); assignment: (N, B, K); centers: (K, D).
template <typename T>
Tensor<T> residual_aggregate(const Tensor<T>& descriptors, const Tensor<T>& assignment, const Tensor<T>& centers);

/// Soft-assignment VLAD. Accepts (N, B, D) -> (N, K, D) or (B, D) -> (K, D).
/// Row k of the result is the residual sum of cluster k.
template <typename T>
Tensor<T> vlad_aggregate(const Tensor<T>& descriptors, const VladParams<T>& params);

/// Per-cluster L2 normalization (rows of the (.., K, D) matrix).
template <typename T>
Tensor<T> intra_normalize(const Tensor<T>& vlad, T eps = T(kNormEpsilon));

/// Stacks clusters (cluster k at [k*D, (k+1)*D)) and L2-normalizes:
/// (N, K, D) -> (N, K*D), (K, D) -> (K*D).
template <typename T>
Tensor<T> flatten_l2(const Tensor<T>& vlad, T eps = T(kNormEpsilon));

/// Nearest-center (hard) VLAD for (B, D) descriptors; non-differentiable.
struct HardVlad {
  Tensor<double> matrix;                // (K, D)
  std::vector<std::size_t> assignment;  // cluster per descriptor
  bool tie = false;                     // some descriptor was equidistant
};
HardVlad hard_vlad_oracle(const Tensor<double>& descriptors, const Tensor<double>& centers);

/// Seeded Lloyd iterations over (M, D) samples. Falls back to random unit
/// vectors when there are fewer samples than clusters.
Tensor<double> kmeans_centers(const Tensor<double>& samples, std::size_t clusters, std::size_t iterations,
                              std::uint64_t seed);

}  // namespace pv
