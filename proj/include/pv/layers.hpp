#pragma once

#include <string>
#include <vector>

#include "pv/rng.hpp"
#include "pv/tensor.hpp"

namespace pv {

/// (depth, height, width) triple used for kernels, paddings and extents.
struct Extent3 {
  std::size_t depth = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  bool operator==(const Extent3&) const = default;
  std::string str() const;
};

struct Conv3dSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Extent3 kernel{3, 3, 3};
  Extent3 padding{1, 1, 1};
};

/// Stride-1 3D convolution over (N, C, L, H, W) with zero padding.
/// weight is (out, in, kd, kh, kw); bias is (out).
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Extent3 padding);

/// Non-overlapping max pooling (stride = kernel, floor rule). Ties route the
/// gradient to the lowest linear index in the window.
template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x, Extent3 kernel);

/// (N, C, L, H, W) -> (N, C), or (C, L, H, W) -> (C): mean over (l, x, y).
template <typename T>
Tensor<T> global_avgpool3d(const Tensor<T>& x);

/// x W^T + b for x of shape (N, in) or (in); W is (out, in).
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct Conv3d {
  Conv3dSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;

  /// He-uniform weights (half-width sqrt(6 / fan_in)); zero bias.
  static Conv3d init(const Conv3dSpec& spec, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, weight, bias, spec.padding); }
};

/// Linear layer parameters, W is (out, in).
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return fully_connected(x, weight, bias); }
};

/// Conv-ReLU-pool stages of the 3D backbone.
struct BackboneSpec {
  std::size_t in_channels = 3;
  std::vector<std::size_t> filters{64, 128, 256, 256, 256};
  std::vector<Extent3> pools{{1, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}};

  std::size_t out_channels() const { return filters.back(); }
  void validate() const;
};

/// Temporal/spatial extent after every pooling stage; throws with the minimal
/// admissible input when a stage would underflow.
Extent3 backbone_output_extent(const BackboneSpec& spec, Extent3 input);
Extent3 backbone_min_input(const BackboneSpec& spec);

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(BackboneSpec spec, Rng& rng);

  /// (N, 3, L, H, W) clip batch -> pool5 cubic (N, 256, L5, H5, W5).
  Tensor<T> forward(const Tensor<T>& clips) const;

  const BackboneSpec& spec() const { return spec_; }
  std::vector<Conv3d<T>>& convs() { return convs_; }
  const std::vector<Conv3d<T>>& convs() const { return convs_; }

 private:
  BackboneSpec spec_;
  std::vector<Conv3d<T>> convs_;
};

}  // namespace pv
