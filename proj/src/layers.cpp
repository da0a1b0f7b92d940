#include "pv/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "pv/fault.hpp"
#include "pv/ops.hpp"
#include "record.hpp"

namespace pv {

namespace fault {
namespace {
std::atomic<Point> g_point{Point::none};
}
void inject(Point point) { g_point.store(point); }
Point injected() { return g_point.load(); }
}  // namespace fault

std::string Extent3::str() const {
  return "(" + std::to_string(depth) + "," + std::to_string(height) + "," + std::to_string(width) + ")";
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

struct ConvGeometry {
  std::size_t channels, depth, height, width;  // input, unpadded
  Extent3 kernel, padding;
  std::size_t out_depth, out_height, out_width;

  std::size_t patch() const { return channels * kernel.depth * kernel.height * kernel.width; }
  std::size_t positions() const { return out_depth * out_height * out_width; }
  std::size_t in_volume() const { return channels * depth * height * width; }
};

// Lowers one sample to a (patch x positions) matrix, or scatters it back when
// Scatter is true.
template <bool Scatter, typename T>
void lower(const ConvGeometry& g, std::conditional_t<Scatter, T*, const T*> x, std::conditional_t<Scatter, const T*, T*> col) {
  const std::size_t P = g.positions();
  const auto pd = static_cast<std::ptrdiff_t>(g.padding.depth);
  const auto ph = static_cast<std::ptrdiff_t>(g.padding.height);
  const auto pw = static_cast<std::ptrdiff_t>(g.padding.width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t a = 0; a < g.kernel.depth; ++a) {
      for (std::size_t b = 0; b < g.kernel.height; ++b) {
        for (std::size_t e = 0; e < g.kernel.width; ++e, ++row) {
          auto* crow = col + row * P;
          const std::ptrdiff_t w_shift = static_cast<std::ptrdiff_t>(e) - pw;
          const std::size_t w_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -w_shift));
          const std::size_t w_hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
              static_cast<std::ptrdiff_t>(g.width) - w_shift, 0, static_cast<std::ptrdiff_t>(g.out_width)));
          for (std::size_t l = 0; l < g.out_depth; ++l) {
            const std::ptrdiff_t li = static_cast<std::ptrdiff_t>(l + a) - pd;
            for (std::size_t h = 0; h < g.out_height; ++h) {
              auto* dst = crow + (l * g.out_height + h) * g.out_width;
              const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(h + b) - ph;
              const bool inside = li >= 0 && li < static_cast<std::ptrdiff_t>(g.depth) && hi >= 0 &&
                                  hi < static_cast<std::ptrdiff_t>(g.height) && w_lo < w_hi;
              if constexpr (Scatter) {
                if (!inside) continue;
                T* src = x + ((c * g.depth + static_cast<std::size_t>(li)) * g.height + static_cast<std::size_t>(hi)) * g.width;
                for (std::size_t w = w_lo; w < w_hi; ++w) src[static_cast<std::ptrdiff_t>(w) + w_shift] += dst[w];
              } else {
                if (!inside) {
                  std::fill(dst, dst + g.out_width, T(0));
                  continue;
                }
                const T* src = x + ((c * g.depth + static_cast<std::size_t>(li)) * g.height + static_cast<std::size_t>(hi)) * g.width;
                std::fill(dst, dst + w_lo, T(0));
                for (std::size_t w = w_lo; w < w_hi; ++w) dst[w] = src[static_cast<std::ptrdiff_t>(w) + w_shift];
                std::fill(dst + w_hi, dst + g.out_width, T(0));
              }
            }
          }
        }
      }
    }
  }
}

std::size_t padded_out(std::size_t extent, std::size_t pad, std::size_t kernel) {
  const std::size_t padded = extent + 2 * pad;
  return padded < kernel ? 0 : padded - kernel + 1;
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Extent3 padding) {
  if (x.rank() != 5) throw ShapeError("conv3d: input must be (N,C,L,H,W), got " + shape_str(x.shape()));
  if (weight.rank() != 5) throw ShapeError("conv3d: weight must be (out,in,kd,kh,kw), got " + shape_str(weight.shape()));
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv3d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("conv3d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(weight.dim(0)) +
                     " filters");
  }
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), x.dim(4), {weight.dim(2), weight.dim(3), weight.dim(4)}, padding, 0, 0, 0};
  g.out_depth = padded_out(g.depth, padding.depth, g.kernel.depth);
  g.out_height = padded_out(g.height, padding.height, g.kernel.height);
  g.out_width = padded_out(g.width, padding.width, g.kernel.width);
  if (g.out_depth == 0 || g.out_height == 0 || g.out_width == 0) {
    throw ShapeError("conv3d: empty output for input " + shape_str(x.shape()) + " with kernel " + g.kernel.str() +
                     " and padding " + padding.str());
  }
  const std::size_t N = x.dim(0);
  const std::size_t F = weight.dim(0);
  const std::size_t K = g.patch();
  const std::size_t P = g.positions();
  const auto Ki = static_cast<Eigen::Index>(K);
  const auto Pi = static_cast<Eigen::Index>(P);
  const auto Fi = static_cast<Eigen::Index>(F);

  Tensor<T> out({N, F, g.out_depth, g.out_height, g.out_width});
  {
    Buffer<T> col(K * P);
    ConstMap<T> w(weight.data().data(), Fi, Ki);
    const auto b = bias.data();
    auto y = out.mutable_data();
    for (std::size_t n = 0; n < N; ++n) {
      lower<false, T>(g, x.data().data() + n * g.in_volume(), col.data());
      MutMap<T> yn(y.data() + n * F * P, Fi, Pi);
      yn.noalias() = w * ConstMap<T>(col.data(), Ki, Pi);
      for (std::size_t f = 0; f < F; ++f) yn.row(static_cast<Eigen::Index>(f)).array() += b[f];
    }
  }
  detail::check_finite(out, "conv3d");

  if (auto* tape = detail::tape_for<T>(x, weight, bias)) {
    auto sx = x.storage();
    auto sw = weight.storage();
    auto sb = bias.storage();
    auto so = out.storage();
    detail::record(tape, "conv3d", {sx, sw, sb}, out, [sx, sw, sb, so, g, N, F, K, P, Ki, Pi, Fi] {
      auto gx = detail::sink(sx);
      auto gw = detail::sink(sw);
      auto gb = detail::sink(sb);
      Buffer<T> col;
      if (!gw.empty()) col.resize(K * P);
      Buffer<T> dcol;
      if (!gx.empty()) dcol.resize(K * P);
      RowMatrix<T> dw_acc;
      if (!gw.empty()) dw_acc.setZero(Fi, Ki);
      ConstMap<T> w(sw->value.data(), Fi, Ki);
      for (std::size_t n = 0; n < N; ++n) {
        ConstMap<T> gy(so->grad.data() + n * F * P, Fi, Pi);
        if (!gb.empty()) {
          for (std::size_t f = 0; f < F; ++f) gb[f] += gy.row(static_cast<Eigen::Index>(f)).sum();
        }
        if (!gw.empty()) {
          lower<false, T>(g, sx->value.data() + n * g.in_volume(), col.data());
          dw_acc.noalias() += gy * ConstMap<T>(col.data(), Ki, Pi).transpose();
        }
        if (!gx.empty()) {
          MutMap<T>(dcol.data(), Ki, Pi).noalias() = w.transpose() * gy;
          lower<true, T>(g, gx.data() + n * g.in_volume(), dcol.data());
        }
      }
      if (!gw.empty()) {
        if (fault::injected() == fault::Point::conv3d_weight_grad) dw_acc *= T(1.5);
        MutMap<T>(gw.data(), Fi, Ki) += dw_acc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x, Extent3 kernel) {
  if (x.rank() != 5) throw ShapeError("maxpool3d: input must be (N,C,L,H,W), got " + shape_str(x.shape()));
  if (kernel.depth == 0 || kernel.height == 0 || kernel.width == 0) throw ShapeError("maxpool3d: zero kernel");
  const std::size_t N = x.dim(0), C = x.dim(1), L = x.dim(2), H = x.dim(3), W = x.dim(4);
  if (L < kernel.depth || H < kernel.height || W < kernel.width) {
    throw ShapeError("maxpool3d: extent " + Extent3{L, H, W}.str() + " smaller than kernel " + kernel.str());
  }
  const std::size_t Lo = L / kernel.depth, Ho = H / kernel.height, Wo = W / kernel.width;
  Tensor<T> out({N, C, Lo, Ho, Wo});
  auto y = out.mutable_data();
  const auto xv = x.data();
  std::vector<std::size_t> argmax(y.size());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const std::size_t base = nc * L * H * W;
    for (std::size_t l = 0; l < Lo; ++l) {
      for (std::size_t h = 0; h < Ho; ++h) {
        for (std::size_t w = 0; w < Wo; ++w, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t where = base + ((l * kernel.depth) * H + h * kernel.height) * W + w * kernel.width;
          for (std::size_t a = 0; a < kernel.depth; ++a) {
            for (std::size_t b = 0; b < kernel.height; ++b) {
              const std::size_t row = base + ((l * kernel.depth + a) * H + h * kernel.height + b) * W + w * kernel.width;
              for (std::size_t e = 0; e < kernel.width; ++e) {
                if (xv[row + e] > best) {
                  best = xv[row + e];
                  where = row + e;
                }
              }
            }
          }
          y[o] = best;
          argmax[o] = where;
        }
      }
    }
  }
  if (auto* tape = detail::tape_for<T>(x)) {
    auto sx = x.storage();
    auto so = out.storage();
    detail::record(tape, "maxpool3d", {sx}, out, [sx, so, argmax = std::move(argmax)] {
      auto gx = detail::sink(sx);
      for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += so->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avgpool3d(const Tensor<T>& x) {
  if (x.rank() == 5) return reduce(Reduction::mean, x, {2, 3, 4});
  if (x.rank() == 4) return reduce(Reduction::mean, x, {1, 2, 3});
  throw ShapeError("global_avgpool3d: expected a 4-D or 5-D cubic, got " + shape_str(x.shape()));
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("fully_connected: weight " + shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()) +
                     " disagree");
  }
  const bool vector_input = x.rank() == 1;
  if ((x.rank() != 1 && x.rank() != 2) || x.shape().back() != weight.dim(1)) {
    throw ShapeError("fully_connected: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t N = vector_input ? 1 : x.dim(0);
  const std::size_t in = weight.dim(1), out_n = weight.dim(0);
  const auto Ni = static_cast<Eigen::Index>(N), Ii = static_cast<Eigen::Index>(in), Oi = static_cast<Eigen::Index>(out_n);
  Tensor<T> out(vector_input ? Shape{out_n} : Shape{N, out_n});
  MutMap<T> y(out.mutable_data().data(), Ni, Oi);
  y.noalias() = ConstMap<T>(x.data().data(), Ni, Ii) * ConstMap<T>(weight.data().data(), Oi, Ii).transpose();
  const auto b = bias.data();
  for (Eigen::Index r = 0; r < Ni; ++r) {
    for (Eigen::Index c = 0; c < Oi; ++c) y(r, c) += b[static_cast<std::size_t>(c)];
  }
  if (auto* tape = detail::tape_for<T>(x, weight, bias)) {
    auto sx = x.storage();
    auto sw = weight.storage();
    auto sb = bias.storage();
    auto so = out.storage();
    detail::record(tape, "fully_connected", {sx, sw, sb}, out, [sx, sw, sb, so, Ni, Ii, Oi] {
      ConstMap<T> gy(so->grad.data(), Ni, Oi);
      if (auto gx = detail::sink(sx); !gx.empty()) {
        MutMap<T>(gx.data(), Ni, Ii).noalias() += gy * ConstMap<T>(sw->value.data(), Oi, Ii);
      }
      if (auto gw = detail::sink(sw); !gw.empty()) {
        MutMap<T>(gw.data(), Oi, Ii).noalias() += gy.transpose() * ConstMap<T>(sx->value.data(), Ni, Ii);
      }
      if (auto gb = detail::sink(sb); !gb.empty()) {
        for (Eigen::Index c = 0; c < Oi; ++c) gb[static_cast<std::size_t>(c)] += gy.col(c).sum();
      }
    });
  }
  return out;
}

template <typename T>
Conv3d<T> Conv3d<T>::init(const Conv3dSpec& spec, Rng& rng) {
  const std::size_t fan_in = spec.in_channels * spec.kernel.depth * spec.kernel.height * spec.kernel.width;
  const double half = std::sqrt(6.0 / static_cast<double>(fan_in));
  Conv3d layer;
  layer.spec = spec;
  layer.weight = Tensor<T>({spec.out_channels, spec.in_channels, spec.kernel.depth, spec.kernel.height, spec.kernel.width});
  for (T& v : layer.weight.mutable_data()) v = static_cast<T>(rng.uniform(-half, half));
  layer.bias = Tensor<T>({spec.out_channels});
  return layer;
}

template <typename T>
Linear<T> Linear<T>::init(std::size_t in, std::size_t out, Rng& rng) {
  const double half = 1.0 / std::sqrt(static_cast<double>(in));
  Linear layer;
  layer.weight = Tensor<T>({out, in});
  for (T& v : layer.weight.mutable_data()) v = static_cast<T>(rng.uniform(-half, half));
  layer.bias = Tensor<T>({out});
  return layer;
}

void BackboneSpec::validate() const {
  if (filters.size() != 5 || pools.size() != 5) {
    throw std::invalid_argument("backbone needs exactly 5 conv and 5 pool stages");
  }
  if (in_channels == 0) throw std::invalid_argument("backbone input channels must be positive");
  for (std::size_t f : filters) {
    if (f == 0) throw std::invalid_argument("backbone filter counts must be positive");
  }
  for (const Extent3& k : pools) {
    if (k.depth == 0 || k.height == 0 || k.width == 0) throw std::invalid_argument("pool kernels must be positive");
  }
}

Extent3 backbone_min_input(const BackboneSpec& spec) {
  Extent3 need{1, 1, 1};
  for (const Extent3& k : spec.pools) {
    need.depth *= k.depth;
    need.height *= k.height;
    need.width *= k.width;
  }
  return need;
}

Extent3 backbone_output_extent(const BackboneSpec& spec, Extent3 input) {
  spec.validate();
  Extent3 e = input;
  for (const Extent3& k : spec.pools) {
    // same-padding convolutions keep the extent; only pooling shrinks it
    if (e.depth < k.depth || e.height < k.height || e.width < k.width) {
      throw ShapeError("backbone: input " + input.str() + " too small for 5 pooling stages; minimal input is " +
                       backbone_min_input(spec).str());
    }
    e = {e.depth / k.depth, e.height / k.height, e.width / k.width};
  }
  return e;
}

template <typename T>
Backbone<T>::Backbone(BackboneSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t in = spec_.in_channels;
  for (std::size_t f : spec_.filters) {
    convs_.push_back(Conv3d<T>::init({in, f, {3, 3, 3}, {1, 1, 1}}, rng));
    in = f;
  }
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& clips) const {
  if (clips.rank() != 5 || clips.dim(1) != spec_.in_channels) {
    throw ShapeError("backbone: expected (N," + std::to_string(spec_.in_channels) + ",L,H,W) clips, got " +
                     shape_str(clips.shape()));
  }
  backbone_output_extent(spec_, {clips.dim(2), clips.dim(3), clips.dim(4)});
  Tensor<T> x = clips;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = relu(convs_[i](x));
    x = maxpool3d(x, spec_.pools[i]);
  }
  return x;
}

#define PV_INSTANTIATE_LAYERS(T)                                                                    \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Extent3);        \
  template Tensor<T> maxpool3d(const Tensor<T>&, Extent3);                                          \
  template Tensor<T> global_avgpool3d(const Tensor<T>&);                                            \
  template Tensor<T> fully_connected(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template struct Conv3d<T>;                                                                        \
  template struct Linear<T>;                                                                        \
  template class Backbone<T>;

PV_INSTANTIATE_LAYERS(float)
PV_INSTANTIATE_LAYERS(double)

}  // namespace pv
