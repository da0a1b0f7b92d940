#include "pv/part_attention.hpp"

#include "pv/ops.hpp"
#include "record.hpp"

namespace pv {

template <typename T>
Tensor<T> part_map(const Tensor<T>& features, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (features.rank() != 5) throw ShapeError("part_map: features must be (N,C,L,H,W), got " + shape_str(features.shape()));
  if (weight.rank() != 5 || weight.dim(0) != 1 || weight.dim(2) != 1 || weight.dim(3) != 1 || weight.dim(4) != 1) {
    throw ShapeError("part_map: detector weight must be (1,C,1,1,1), got " + shape_str(weight.shape()));
  }
  if (weight.dim(1) != features.dim(1)) {
    throw ShapeError("part_map: features have " + std::to_string(features.dim(1)) + " channels, detector expects " +
                     std::to_string(weight.dim(1)));
  }
  const Tensor<T> logits = conv3d(features, weight, bias, Extent3{0, 0, 0});
  const Shape& s = logits.shape();
  return sigmoid(reshape(logits, {s[0], s[2], s[3], s[4]}));
}

template <typename T>
Tensor<T> attend(const Tensor<T>& features, const Tensor<T>& map) {
  if (features.rank() != 5 || map.rank() != 4 || map.dim(0) != features.dim(0) || map.dim(1) != features.dim(2) ||
      map.dim(2) != features.dim(3) || map.dim(3) != features.dim(4)) {
    throw ShapeError("attend: map " + shape_str(map.shape()) + " does not match features " +
                     shape_str(features.shape()));
  }
  const std::size_t N = features.dim(0), C = features.dim(1);
  const std::size_t V = features.dim(2) * features.dim(3) * features.dim(4);
  Tensor<T> out(features.shape());
  auto y = out.mutable_data();
  const auto f = features.data();
  const auto m = map.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * V;
      for (std::size_t v = 0; v < V; ++v) y[base + v] = f[base + v] * m[n * V + v];
    }
  }
  if (auto* tape = detail::tape_for<T>(features, map)) {
    auto sf = features.storage();
    auto sm = map.storage();
    auto so = out.storage();
    detail::record(tape, "attend", {sf, sm}, out, [sf, sm, so, N, C, V] {
      auto gf = detail::sink(sf);
      auto gm = detail::sink(sm);
      const auto& gy = so->grad;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t base = (n * C + c) * V;
          if (!gf.empty()) {
            for (std::size_t v = 0; v < V; ++v) gf[base + v] += gy[base + v] * sm->value[n * V + v];
          }
          if (!gm.empty()) {
            for (std::size_t v = 0; v < V; ++v) gm[n * V + v] += gy[base + v] * sf->value[base + v];
          }
        }
      }
    });
  }
  return out;
}

std::vector<std::size_t> band_sizes(std::size_t extent, std::size_t count) {
  if (count == 0) throw std::invalid_argument("band_sizes: count must be positive");
  std::vector<std::size_t> sizes(count, extent / count);
  sizes.back() += extent % count;
  return sizes;
}

template <typename T>
std::vector<Tensor<T>> fixed_region_maps(RegionMode mode, Extent3 extent, std::size_t count) {
  const auto rows = band_sizes(extent.height, count);
  const auto cols = mode == RegionMode::grid ? band_sizes(extent.width, count) : std::vector<std::size_t>{extent.width};
  std::vector<Tensor<T>> maps;
  std::size_t y0 = 0;
  for (std::size_t r : rows) {
    std::size_t x0 = 0;
    for (std::size_t c : cols) {
      Tensor<T> m({extent.depth, extent.height, extent.width});
      auto v = m.mutable_data();
      for (std::size_t l = 0; l < extent.depth; ++l) {
        for (std::size_t y = y0; y < y0 + r; ++y) {
          for (std::size_t x = x0; x < x0 + c; ++x) v[(l * extent.height + y) * extent.width + x] = T(1);
        }
      }
      maps.push_back(std::move(m));
      x0 += c;
    }
    y0 += r;
  }
  return maps;
}

template <typename T>
PartDetectorBank<T> PartDetectorBank<T>::init(std::size_t branches, std::size_t channels, Rng& rng) {
  PartDetectorBank bank;
  for (std::size_t b = 0; b < branches; ++b) {
    auto conv = Conv3d<T>::init({channels, 1, {1, 1, 1}, {0, 0, 0}}, rng);
    bank.weights.push_back(conv.weight);
    bank.biases.push_back(conv.bias);
  }
  return bank;
}

template <typename T>
std::vector<Tensor<T>> PartDetectorBank<T>::maps(const Tensor<T>& features) const {
  std::vector<Tensor<T>> out;
  out.reserve(weights.size());
  for (std::size_t b = 0; b < weights.size(); ++b) out.push_back(part_map(features, weights[b], biases[b]));
  return out;
}

template <typename T>
Tensor<T> baseline_head(const std::vector<Tensor<T>>& attended, PoolMode mode, const std::vector<BranchHead<T>>& heads) {
  if (attended.size() != heads.size() || attended.empty()) {
    throw ShapeError("baseline_head: " + std::to_string(attended.size()) + " branches but " +
                     std::to_string(heads.size()) + " heads");
  }
  std::vector<Tensor<T>> parts;
  for (std::size_t b = 0; b < attended.size(); ++b) {
    const Tensor<T> pooled =
        mode == PoolMode::avg ? global_avgpool3d(attended[b]) : reduce(Reduction::max, attended[b], {2, 3, 4});
    parts.push_back(heads[b].fc7(relu(heads[b].fc6(pooled))));
  }
  return concat(parts, 1);
}

#define PV_INSTANTIATE_PARTS(T)                                                                                  \
  template Tensor<T> part_map(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> attend(const Tensor<T>&, const Tensor<T>&);                                                \
  template std::vector<Tensor<T>> fixed_region_maps(RegionMode, Extent3, std::size_t);                          \
  template struct PartDetectorBank<T>;                                                                          \
  template Tensor<T> baseline_head(const std::vector<Tensor<T>>&, PoolMode, const std::vector<BranchHead<T>>&);

PV_INSTANTIATE_PARTS(float)
PV_INSTANTIATE_PARTS(double)

}  // namespace pv
