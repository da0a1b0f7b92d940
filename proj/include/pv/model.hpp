#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pv/layers.hpp"
#include "pv/part_attention.hpp"
#include "pv/tensor_io.hpp"
#include "pv/vlad.hpp"

namespace pv {

enum class HeadKind { vlad, avg, max };
enum class PartitionKind { learned, stripes, grid };

struct ModelConfig {
  BackboneSpec backbone;
  std::size_t branches = 6;
  PartitionKind partition = PartitionKind::learned;
  std::size_t region_count = 5;  // stripes, or cells per side for grid
  HeadKind head = HeadKind::vlad;
  std::size_t clusters = 64;
  double alpha = 1000.0;
  std::size_t head_dim = 128;  // per-branch width of the pooling baselines

  std::size_t part_count() const;
  std::size_t feature_dim() const { return backbone.out_channels(); }
  /// Length of the global descriptor.
  std::size_t descriptor_dim() const;
  void validate() const;
};

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;  // shares storage with the model
};

/// Backbone -> part attention -> aggregation head -> unit-norm descriptor.
template <typename T>
class PersonVladNet {
 public:
  struct Output {
    Tensor<T> descriptor;        // (N, descriptor_dim), unit norm or zero
    Tensor<T> parts;             // (N, B, D) part descriptors (VLAD head only)
    std::vector<Tensor<T>> maps;  // one (N, L5, H5, W5) map per branch
  };

  PersonVladNet(ModelConfig config, std::uint64_t seed);

  Output forward(const Tensor<T>& clips) const;

  const ModelConfig& config() const { return config_; }
  Backbone<T>& backbone() { return backbone_; }
  const Backbone<T>& backbone() const { return backbone_; }
  PartDetectorBank<T>& detectors() { return detectors_; }
  VladParams<T>& vlad() { return vlad_; }
  const VladParams<T>& vlad() const { return vlad_; }

  /// Replaces the cluster centers and re-ties the assignment parameters.
  void set_centers(const Tensor<T>& centers);

  /// Every trainable tensor with its checkpoint name. The handles share
  /// storage with the model.
  std::vector<NamedParameter<T>> parameters() const;
  /// Names of the aggregation-layer parameters frozen in the first phase.
  static bool is_vlad_parameter(const std::string& name);

  NamedTensors state_dict() const;
  /// Copies matching entries; throws on missing names or shape mismatches.
  void load_state_dict(const NamedTensors& entries);

 private:
  ModelConfig config_;
  Backbone<T> backbone_;
  PartDetectorBank<T> detectors_;
  std::vector<BranchHead<T>> heads_;
  VladParams<T> vlad_;
};

extern template class PersonVladNet<float>;
extern template class PersonVladNet<double>;

}  // namespace pv
