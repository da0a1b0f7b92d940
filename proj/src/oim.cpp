#include "pv/oim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "pv/rng.hpp"
#include "record.hpp"

namespace pv {

namespace {

constexpr double kProbabilityFloor = 1e-30;

double dot(std::span<const double> v, std::span<const float> e) {
  double s = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) s += v[j] * static_cast<double>(e[j]);
  return s;
}

void normalize_into(std::span<const double> x, std::vector<float>& out) {
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double denom = std::max(std::sqrt(sq), 1e-12);
  out.resize(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = static_cast<float>(x[j] / denom);
}

// Softmax at temperature over the listed table columns and queue entries.
OimProbabilities restricted_softmax(std::span<const double> v, const OimState& state,
                                    std::span<const std::size_t> labeled, std::span<const std::size_t> unlabeled) {
  if (v.size() != state.dim()) {
    throw ShapeError("oim: descriptor dim " + std::to_string(v.size()) + " vs table dim " + std::to_string(state.dim()));
  }
  const double tau = state.temperature();
  OimProbabilities p;
  p.labeled.resize(labeled.size());
  p.unlabeled.resize(unlabeled.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    p.labeled[i] = dot(v, state.table_row(labeled[i])) / tau;
    top = std::max(top, p.labeled[i]);
  }
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    p.unlabeled[i] = dot(v, state.queue_entry(unlabeled[i])) / tau;
    top = std::max(top, p.unlabeled[i]);
  }
  double total = 0.0;
  for (double& s : p.labeled) total += (s = std::exp(s - top));
  for (double& s : p.unlabeled) total += (s = std::exp(s - top));
  for (double& s : p.labeled) s /= total;
  for (double& s : p.unlabeled) s /= total;
  return p;
}

OimSubsample full_sample(const OimState& state, std::size_t label) {
  OimSubsample s;
  s.labeled.push_back(label);
  for (std::size_t j = 0; j < state.identities(); ++j) {
    if (j != label) s.labeled.push_back(j);
  }
  s.unlabeled.resize(state.queue_size());
  std::iota(s.unlabeled.begin(), s.unlabeled.end(), std::size_t{0});
  return s;
}

}  // namespace

OimState::OimState(std::size_t identities, std::size_t dim, OimConfig config)
    : identities_(identities), dim_(dim), config_(config), table_(identities * dim, 0.0f) {
  if (identities == 0) throw std::invalid_argument("OimState: lookup table needs at least one identity");
  if (dim == 0) throw std::invalid_argument("OimState: feature dim must be positive");
  if (!(config.temperature > 0.0)) throw std::invalid_argument("OimState: temperature must be positive");
  if (config.momentum < 0.0 || config.momentum > 1.0) throw std::invalid_argument("OimState: momentum must lie in [0,1]");
}

std::span<const float> OimState::table_row(std::size_t label) const {
  if (label >= identities_) {
    throw std::out_of_range("OimState: label " + std::to_string(label) + " outside table of " +
                            std::to_string(identities_));
  }
  return std::span<const float>(table_).subspan(label * dim_, dim_);
}

std::span<const float> OimState::queue_entry(std::size_t i) const {
  if (i >= queue_.size()) throw std::out_of_range("OimState: queue index out of range");
  return queue_[i];
}

void OimState::lut_update(std::size_t label, std::span<const float> v) {
  if (label >= identities_) {
    throw std::out_of_range("lut_update: label " + std::to_string(label) + " outside table of " +
                            std::to_string(identities_));
  }
  if (v.size() != dim_) throw ShapeError("lut_update: feature dim mismatch");
  const double m = config_.momentum;
  std::vector<double> mixed(dim_);
  float* row = table_.data() + label * dim_;
  for (std::size_t j = 0; j < dim_; ++j) mixed[j] = m * row[j] + (1.0 - m) * v[j];
  std::vector<float> normalized;
  normalize_into(mixed, normalized);
  std::copy(normalized.begin(), normalized.end(), row);
}

void OimState::queue_push(std::span<const float> v) {
  if (v.size() != dim_) throw ShapeError("queue_push: feature dim mismatch");
  if (config_.queue_capacity == 0) return;
  queue_.emplace_back(v.begin(), v.end());
  while (queue_.size() > config_.queue_capacity) queue_.pop_front();
}

Tensor<float> OimState::table_tensor() const { return Tensor<float>({identities_, dim_}, table_); }

Tensor<float> OimState::queue_tensor() const {
  if (queue_.empty()) return {};
  std::vector<float> flat;
  flat.reserve(queue_.size() * dim_);
  for (const auto& e : queue_) flat.insert(flat.end(), e.begin(), e.end());
  return Tensor<float>({queue_.size(), dim_}, std::move(flat));
}

void OimState::load(const Tensor<float>& table, const Tensor<float>& queue) {
  if (table.rank() != 2 || table.dim(0) != identities_ || table.dim(1) != dim_) {
    throw ShapeError("OimState: table " + shape_str(table.shape()) + " does not match (" + std::to_string(identities_) +
                     "," + std::to_string(dim_) + ")");
  }
  table_.assign(table.data().begin(), table.data().end());
  queue_.clear();
  if (!queue.defined()) return;
  if (queue.rank() != 2 || queue.dim(1) != dim_) throw ShapeError("OimState: queue " + shape_str(queue.shape()));
  for (std::size_t i = 0; i < queue.dim(0); ++i) queue_push(queue.data().subspan(i * dim_, dim_));
}

OimProbabilities oim_probabilities(std::span<const double> v, const OimState& state) {
  std::vector<std::size_t> labeled(state.identities());
  std::iota(labeled.begin(), labeled.end(), std::size_t{0});
  std::vector<std::size_t> unlabeled(state.queue_size());
  std::iota(unlabeled.begin(), unlabeled.end(), std::size_t{0});
  return restricted_softmax(v, state, labeled, unlabeled);
}

OimProbabilities oim_probabilities(std::span<const double> v, const OimState& state, const OimSubsample& sample) {
  return restricted_softmax(v, state, sample.labeled, sample.unlabeled);
}

OimSubsample subsample_partition(const OimState& state, std::size_t label, std::size_t sample_size, std::uint64_t seed) {
  if (sample_size == 0) throw std::invalid_argument("subsample_partition: sample size must be at least 1");
  if (label >= state.identities()) throw std::out_of_range("subsample_partition: label outside table");
  const std::size_t total = state.identities() + state.queue_size();
  if (sample_size >= total) return full_sample(state, label);

  // Pool of "other" entries: table columns except the label, then queue slots
  // encoded as identities() + i.
  std::vector<std::size_t> pool;
  pool.reserve(total - 1);
  for (std::size_t j = 0; j < state.identities(); ++j) {
    if (j != label) pool.push_back(j);
  }
  for (std::size_t i = 0; i < state.queue_size(); ++i) pool.push_back(state.identities() + i);

  Rng rng(seed);
  OimSubsample s;
  s.labeled.push_back(label);
  for (std::size_t k = 0; k + 1 < sample_size; ++k) {
    std::swap(pool[k], pool[k + rng.index(pool.size() - k)]);
    const std::size_t pick = pool[k];
    if (pick < state.identities()) {
      s.labeled.push_back(pick);
    } else {
      s.unlabeled.push_back(pick - state.identities());
    }
  }
  return s;
}

template <typename T>
OimLoss<T> oim_loss(const Tensor<T>& descriptors, std::span<const std::size_t> labels, const OimState& state,
                    std::span<const OimSubsample> samples) {
  if (descriptors.rank() != 2 || descriptors.dim(1) != state.dim()) {
    throw ShapeError("oim_loss: descriptors " + shape_str(descriptors.shape()) + " vs table dim " +
                     std::to_string(state.dim()));
  }
  const std::size_t N = descriptors.dim(0), D = state.dim();
  if (labels.size() != N) throw ShapeError("oim_loss: one label per descriptor row required");
  if (!samples.empty() && samples.size() != N) throw ShapeError("oim_loss: one subsample per row required");

  const double tau = state.temperature();
  std::vector<double> grad(N * D, 0.0);
  std::vector<double> v(D);
  double total = 0.0;
  bool clamped = false;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] >= state.identities()) {
      throw std::out_of_range("oim_loss: label " + std::to_string(labels[n]) + " outside table of " +
                              std::to_string(state.identities()));
    }
    for (std::size_t j = 0; j < D; ++j) v[j] = static_cast<double>(descriptors.data()[n * D + j]);
    const OimSubsample sample = samples.empty() ? full_sample(state, labels[n]) : samples[n];
    if (sample.labeled.empty() || sample.labeled.front() != labels[n]) {
      throw std::invalid_argument("oim_loss: subsample must start with the true label");
    }
    const OimProbabilities p = restricted_softmax(v, state, sample.labeled, sample.unlabeled);
    const double p_true = p.labeled.front();
    if (p_true < kProbabilityFloor) clamped = true;
    total += -std::log(std::max(p_true, kProbabilityFloor));

    // d(-log p_y)/dv = (sum_j p_j e_j + sum_k q_k u_k - e_y) / tau
    double* g = grad.data() + n * D;
    for (std::size_t i = 0; i < sample.labeled.size(); ++i) {
      const auto e = state.table_row(sample.labeled[i]);
      const double w = p.labeled[i] - (i == 0 ? 1.0 : 0.0);
      for (std::size_t j = 0; j < D; ++j) g[j] += w * e[j];
    }
    for (std::size_t i = 0; i < sample.unlabeled.size(); ++i) {
      const auto u = state.queue_entry(sample.unlabeled[i]);
      for (std::size_t j = 0; j < D; ++j) g[j] += p.unlabeled[i] * u[j];
    }
    for (std::size_t j = 0; j < D; ++j) g[j] /= tau * static_cast<double>(N);
  }

  OimLoss<T> result{Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(N))), clamped};
  if (auto* tape = detail::tape_for<T>(descriptors)) {
    auto sd = descriptors.storage();
    auto so = result.loss.storage();
    detail::record(tape, "oim_loss", {sd}, result.loss, [sd, so, grad = std::move(grad)] {
      auto gd = detail::sink(sd);
      const T scale = so->grad[0];
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += scale * static_cast<T>(grad[i]);
    });
  }
  return result;
}

template OimLoss<float> oim_loss(const Tensor<float>&, std::span<const std::size_t>, const OimState&,
                                 std::span<const OimSubsample>);
template OimLoss<double> oim_loss(const Tensor<double>&, std::span<const std::size_t>, const OimState&,
                                  std::span<const OimSubsample>);

}  // namespace pv
