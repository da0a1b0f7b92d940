#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "pv/tensor.hpp"

namespace pv {

struct OimConfig {
  double temperature = 0.1;
  std::size_t queue_capacity = 32;
  /// Lookup-table momentum: e <- normalize(m e + (1 - m) v).
  double momentum = 0.5;
};

/// Lookup table of labeled identity features plus a FIFO queue of recent
/// unlabeled features. Neither receives gradients.
class OimState {
 public:
  OimState(std::size_t identities, std::size_t dim, OimConfig config = {});

  std::size_t identities() const { return identities_; }
  std::size_t dim() const { return dim_; }
  std::size_t queue_size() const { return queue_.size(); }
  const OimConfig& config() const { return config_; }
  double temperature() const { return config_.temperature; }

  std::span<const float> table_row(std::size_t label) const;
  std::span<const float> queue_entry(std::size_t i) const;

  void lut_update(std::size_t label, std::span<const float> v);
  void queue_push(std::span<const float> v);

  /// (C, dim) table and (|U|, dim) queue; the queue tensor is undefined when
  /// empty.
  Tensor<float> table_tensor() const;
  Tensor<float> queue_tensor() const;
  void load(const Tensor<float>& table, const Tensor<float>& queue);

 private:
  std::size_t identities_;
  std::size_t dim_;
  OimConfig config_;
  std::vector<float> table_;
  std::deque<std::vector<float>> queue_;
};

/// Joint softmax over labeled columns (p) and queue entries (q).
struct OimProbabilities {
  std::vector<double> labeled;
  std::vector<double> unlabeled;
};

/// Restricted denominator: selected table columns and queue entries. The
/// true label is always labeled[0].
struct OimSubsample {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;

  std::size_t size() const { return labeled.size() + unlabeled.size(); }
};

OimProbabilities oim_probabilities(std::span<const double> v, const OimState& state);

/// True label plus sample_size - 1 distinct others drawn uniformly from the
/// remaining columns and queue entries (partial Fisher-Yates on the pool
/// [columns except label..., queue...]).
OimSubsample subsample_partition(const OimState& state, std::size_t label, std::size_t sample_size,
                                 std::uint64_t seed);

/// Probabilities renormalized over a subsample, in subsample order.
OimProbabilities oim_probabilities(std::span<const double> v, const OimState& state, const OimSubsample& sample);

template <typename T>
struct OimLoss {
  Tensor<T> loss;        // scalar: mean over rows of -log p_label
  bool clamped = false;  // some p_label fell below 1e-30
};

/// descriptors: (N, dim), one row per sample; labels index the table.
/// Gradients flow to the descriptors only. `samples`, when non-empty, holds
/// one subsample per row.
template <typename T>
OimLoss<T> oim_loss(const Tensor<T>& descriptors, std::span<const std::size_t> labels, const OimState& state,
                    std::span<const OimSubsample> samples = {});

}  // namespace pv
