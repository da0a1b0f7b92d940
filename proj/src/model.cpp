#include "pv/model.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "pv/ops.hpp"

namespace pv {

std::size_t ModelConfig::part_count() const {
  switch (partition) {
    case PartitionKind::learned: return branches;
    case PartitionKind::stripes: return region_count;
    case PartitionKind::grid: return region_count * region_count;
  }
  return branches;
}

std::size_t ModelConfig::descriptor_dim() const {
  return head == HeadKind::vlad ? clusters * feature_dim() : part_count() * head_dim;
}

void ModelConfig::validate() const {
  backbone.validate();
  if (part_count() == 0) throw std::invalid_argument("model needs at least one part");
  if (head == HeadKind::vlad && clusters == 0) throw std::invalid_argument("VLAD head needs at least one cluster");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (head != HeadKind::vlad && head_dim == 0) throw std::invalid_argument("head_dim must be positive");
}

template <typename T>
PersonVladNet<T>::PersonVladNet(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  backbone_ = Backbone<T>(config_.backbone, rng);
  const std::size_t D = config_.feature_dim();
  if (config_.partition == PartitionKind::learned) detectors_ = PartDetectorBank<T>::init(config_.branches, D, rng);
  if (config_.head != HeadKind::vlad) {
    for (std::size_t b = 0; b < config_.part_count(); ++b) {
      BranchHead<T> h;
      h.fc6 = Linear<T>::init(D, config_.head_dim, rng);
      h.fc7 = Linear<T>::init(config_.head_dim, config_.head_dim, rng);
      heads_.push_back(std::move(h));
    }
  } else {
    // Placeholder centers until data-driven initialization.
    Tensor<T> centers({config_.clusters, D});
    auto c = centers.mutable_data();
    for (std::size_t k = 0; k < config_.clusters; ++k) {
      double sq = 0.0;
      std::vector<double> row(D);
      for (double& v : row) {
        v = rng.normal();
        sq += v * v;
      }
      for (std::size_t j = 0; j < D; ++j) c[k * D + j] = static_cast<T>(row[j] / std::sqrt(sq));
    }
    vlad_ = VladParams<T>::tied(centers, config_.alpha);
  }
}

template <typename T>
typename PersonVladNet<T>::Output PersonVladNet<T>::forward(const Tensor<T>& clips) const {
  Output out;
  const Tensor<T> features = backbone_.forward(clips);
  const std::size_t N = features.dim(0), D = features.dim(1);
  const Extent3 extent{features.dim(2), features.dim(3), features.dim(4)};

  if (config_.partition == PartitionKind::learned) {
    out.maps = detectors_.maps(features);
  } else {
    const RegionMode mode = config_.partition == PartitionKind::stripes ? RegionMode::stripes : RegionMode::grid;
    for (const Tensor<T>& m : fixed_region_maps<T>(mode, extent, config_.region_count)) {
      Tensor<T> batch({N, extent.depth, extent.height, extent.width});
      auto dst = batch.mutable_data();
      for (std::size_t n = 0; n < N; ++n) std::copy(m.data().begin(), m.data().end(), dst.begin() + n * m.numel());
      out.maps.push_back(std::move(batch));
    }
  }

  std::vector<Tensor<T>> attended;
  attended.reserve(out.maps.size());
  for (const Tensor<T>& m : out.maps) attended.push_back(attend(features, m));

  if (config_.head != HeadKind::vlad) {
    const PoolMode mode = config_.head == HeadKind::avg ? PoolMode::avg : PoolMode::max;
    out.descriptor = l2_normalize(baseline_head(attended, mode, heads_));
    return out;
  }

  std::vector<Tensor<T>> parts;
  parts.reserve(attended.size());
  for (const Tensor<T>& a : attended) parts.push_back(reshape(part_descriptor(a), {N, 1, D}));
  out.parts = concat(parts, 1);
  out.descriptor = flatten_l2(intra_normalize(vlad_aggregate(out.parts, vlad_)));
  return out;
}

template <typename T>
void PersonVladNet<T>::set_centers(const Tensor<T>& centers) {
  if (centers.shape() != vlad_.centers.shape()) {
    throw ShapeError("set_centers: expected " + shape_str(vlad_.centers.shape()) + ", got " +
                     shape_str(centers.shape()));
  }
  std::copy(centers.data().begin(), centers.data().end(), vlad_.centers.mutable_data().begin());
  vlad_.retie();
}

template <typename T>
std::vector<NamedParameter<T>> PersonVladNet<T>::parameters() const {
  std::vector<NamedParameter<T>> params;
  for (std::size_t i = 0; i < backbone_.convs().size(); ++i) {
    const std::string prefix = "backbone.conv" + std::to_string(i + 1);
    params.push_back({prefix + ".weight", backbone_.convs()[i].weight});
    params.push_back({prefix + ".bias", backbone_.convs()[i].bias});
  }
  for (std::size_t b = 0; b < detectors_.branches(); ++b) {
    params.push_back({"detector." + std::to_string(b) + ".weight", detectors_.weights[b]});
    params.push_back({"detector." + std::to_string(b) + ".bias", detectors_.biases[b]});
  }
  for (std::size_t b = 0; b < heads_.size(); ++b) {
    const std::string prefix = "head." + std::to_string(b);
    params.push_back({prefix + ".fc6.weight", heads_[b].fc6.weight});
    params.push_back({prefix + ".fc6.bias", heads_[b].fc6.bias});
    params.push_back({prefix + ".fc7.weight", heads_[b].fc7.weight});
    params.push_back({prefix + ".fc7.bias", heads_[b].fc7.bias});
  }
  if (config_.head == HeadKind::vlad) {
    params.push_back({"vlad.centers", vlad_.centers});
    params.push_back({"vlad.assign_w", vlad_.assign_w});
    params.push_back({"vlad.assign_z", vlad_.assign_z});
  }
  return params;
}

template <typename T>
bool PersonVladNet<T>::is_vlad_parameter(const std::string& name) {
  return name.rfind("vlad.", 0) == 0;
}

template <typename T>
NamedTensors PersonVladNet<T>::state_dict() const {
  NamedTensors out;
  for (const auto& p : parameters()) out.emplace_back(p.name, p.tensor.template cast<float>());
  if (config_.head == HeadKind::vlad) {
    out.emplace_back("vlad.alpha", Tensor<float>({1}, std::vector<float>{static_cast<float>(vlad_.alpha)}));
  }
  return out;
}

template <typename T>
void PersonVladNet<T>::load_state_dict(const NamedTensors& entries) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : entries) by_name[name] = &t;
  for (auto& p : parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks parameter " + p.name);
    if (it->second->shape() != p.tensor.shape()) {
      throw ShapeError("checkpoint parameter " + p.name + " has shape " + shape_str(it->second->shape()) +
                       ", model expects " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    const auto src = it->second->data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
  if (config_.head == HeadKind::vlad) {
    auto it = by_name.find("vlad.alpha");
    if (it != by_name.end()) vlad_.alpha = it->second->item();
  }
}

template class PersonVladNet<float>;
template class PersonVladNet<double>;

}  // namespace pv
