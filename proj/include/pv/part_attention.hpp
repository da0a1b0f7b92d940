#pragma once

#include <vector>

#include "pv/layers.hpp"
#include "pv/tensor.hpp"

namespace pv {

/// m_b = sigmoid(sum_c w_b[c] f(c,l,x,y) + bias_b).
/// features: (N, C, L, H, W); weight: (1, C, 1, 1, 1); bias: (1).
/// Returns the part map (N, L, H, W).
template <typename T>
Tensor<T> part_map(const Tensor<T>& features, const Tensor<T>& weight, const Tensor<T>& bias);

/// Scales every channel of (N, C, L, H, W) features by the (N, L, H, W) map.
template <typename T>
Tensor<T> attend(const Tensor<T>& features, const Tensor<T>& map);

/// Spatial-temporal average of an attended cubic: (N, C, L, H, W) -> (N, C).
template <typename T>
Tensor<T> part_descriptor(const Tensor<T>& attended) {
  return global_avgpool3d(attended);
}

enum class RegionMode { stripes, grid };

/// Binary (L, H, W) maps partitioning each frame into `count` horizontal
/// stripes or a count x count grid. The trailing band/cell absorbs any
/// remainder.
template <typename T>
std::vector<Tensor<T>> fixed_region_maps(RegionMode mode, Extent3 extent, std::size_t count);

/// Bands of `extent` split into `count` pieces, remainder in the last.
std::vector<std::size_t> band_sizes(std::size_t extent, std::size_t count);

/// One 1x1x1 detector per branch; parameters are not shared.
template <typename T>
struct PartDetectorBank {
  std::vector<Tensor<T>> weights;  // (1, C, 1, 1, 1) each
  std::vector<Tensor<T>> biases;   // (1) each

  static PartDetectorBank init(std::size_t branches, std::size_t channels, Rng& rng);
  std::size_t branches() const { return weights.size(); }
  /// Part maps for every branch.
  std::vector<Tensor<T>> maps(const Tensor<T>& features) const;
};

enum class PoolMode { avg, max };

/// FC -> ReLU -> FC for one branch of the pooling baseline.
template <typename T>
struct BranchHead {
  Linear<T> fc6;
  Linear<T> fc7;
};

/// Per-branch pooled vector -> FC -> ReLU -> FC, concatenated over branches:
/// (N, B * d).
template <typename T>
Tensor<T> baseline_head(const std::vector<Tensor<T>>& attended, PoolMode mode, const std::vector<BranchHead<T>>& heads);

}  // namespace pv
