#include "pv/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "record.hpp"

namespace pv {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

const char* kind_name(Elementwise kind) {
  switch (kind) {
    case Elementwise::add: return "add";
    case Elementwise::sub: return "sub";
    case Elementwise::mul: return "mul";
    case Elementwise::relu: return "relu";
    case Elementwise::sigmoid: return "sigmoid";
    case Elementwise::exp: return "exp";
  }
  return "?";
}

bool is_binary(Elementwise kind) {
  return kind == Elementwise::add || kind == Elementwise::sub || kind == Elementwise::mul;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const Tensor<T>& b) {
  const bool binary = is_binary(kind);
  if (binary) {
    if (!b.defined()) throw std::invalid_argument(std::string(kind_name(kind)) + " needs two operands");
    if (a.shape() != b.shape()) {
      throw ShapeError(std::string(kind_name(kind)) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
  }
  const auto x = a.data();
  Buffer<T> y(x.size());
  switch (kind) {
    case Elementwise::add: {
      const auto z = b.data();
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
      break;
    }
    case Elementwise::sub: {
      const auto z = b.data();
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] - z[i];
      break;
    }
    case Elementwise::mul: {
      const auto z = b.data();
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
      break;
    }
    case Elementwise::relu:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Elementwise::sigmoid:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigmoid_scalar(x[i]);
      break;
    case Elementwise::exp:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(x[i]);
      break;
  }
  Tensor<T> out(a.shape(), std::move(y));
  detail::check_finite(out, kind_name(kind));

  GradTape<T>* tape = binary ? detail::tape_for<T>(a, b) : detail::tape_for<T>(a);
  if (!tape) return out;
  auto sa = a.storage();
  auto sb = binary ? b.storage() : nullptr;
  auto so = out.storage();
  std::vector<std::shared_ptr<TensorStorage<T>>> inputs{sa};
  if (sb) inputs.push_back(sb);
  detail::record(tape, kind_name(kind), std::move(inputs), out, [kind, sa, sb, so] {
    const auto& gy = so->grad;
    auto ga = detail::sink(sa);
    auto gb = detail::sink(sb);
    const auto& xa = sa->value;
    const auto& yv = so->value;
    const std::size_t n = gy.size();
    switch (kind) {
      case Elementwise::add:
        if (!ga.empty()) for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i];
        if (!gb.empty()) for (std::size_t i = 0; i < n; ++i) gb[i] += gy[i];
        break;
      case Elementwise::sub:
        if (!ga.empty()) for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i];
        if (!gb.empty()) for (std::size_t i = 0; i < n; ++i) gb[i] -= gy[i];
        break;
      case Elementwise::mul:
        if (!ga.empty()) for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i] * sb->value[i];
        if (!gb.empty()) for (std::size_t i = 0; i < n; ++i) gb[i] += gy[i] * xa[i];
        break;
      case Elementwise::relu:
        if (!ga.empty()) for (std::size_t i = 0; i < n; ++i) ga[i] += xa[i] > T(0) ? gy[i] : T(0);
        break;
      case Elementwise::sigmoid:
        if (!ga.empty()) for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i] * yv[i] * (T(1) - yv[i]);
        break;
      case Elementwise::exp:
        if (!ga.empty()) for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i] * yv[i];
        break;
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Buffer<T> y(a.data().begin(), a.data().end());
  for (T& v : y) v *= s;
  Tensor<T> out(a.shape(), std::move(y));
  if (auto* tape = detail::tape_for<T>(a)) {
    auto sa = a.storage();
    auto so = out.storage();
    detail::record(tape, "scale", {sa}, out, [sa, so, s] {
      auto ga = detail::sink(sa);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * so->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Tensor<T> out({a.dim(0), b.dim(1)});
  MutMap<T>(out.mutable_data().data(), m, n).noalias() =
      ConstMap<T>(a.data().data(), m, k) * ConstMap<T>(b.data().data(), k, n);
  if (auto* tape = detail::tape_for<T>(a, b)) {
    auto sa = a.storage();
    auto sb = b.storage();
    auto so = out.storage();
    detail::record(tape, "matmul", {sa, sb}, out, [sa, sb, so, m, k, n] {
      ConstMap<T> gy(so->grad.data(), m, n);
      if (auto ga = detail::sink(sa); !ga.empty()) {
        MutMap<T>(ga.data(), m, k).noalias() += gy * ConstMap<T>(sb->value.data(), k, n).transpose();
      }
      if (auto gb = detail::sink(sb); !gb.empty()) {
        MutMap<T>(gb.data(), k, n).noalias() += ConstMap<T>(sa->value.data(), m, k).transpose() * gy;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reduce(Reduction kind, const Tensor<T>& a, const std::vector<std::size_t>& axes) {
  const Shape& in_shape = a.shape();
  std::vector<bool> reduced(in_shape.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= in_shape.size()) {
      throw ShapeError("reduce: invalid axis " + std::to_string(ax) + " for shape " + shape_str(in_shape));
    }
    reduced[ax] = true;
  }
  Shape out_shape;
  for (std::size_t i = 0; i < in_shape.size(); ++i) {
    if (!reduced[i]) out_shape.push_back(in_shape[i]);
  }
  // Output stride of each input axis (zero for reduced axes).
  std::vector<std::size_t> out_stride(in_shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = in_shape.size(); i-- > 0;) {
    if (!reduced[i]) {
      out_stride[i] = stride;
      stride *= in_shape[i];
    }
  }
  const std::size_t out_n = shape_numel(out_shape);
  const std::size_t group = a.numel() / out_n;

  std::vector<std::size_t> target(a.numel());
  {
    std::vector<std::size_t> idx(in_shape.size(), 0);
    for (std::size_t lin = 0; lin < a.numel(); ++lin) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < idx.size(); ++d) o += idx[d] * out_stride[d];
      target[lin] = o;
      for (std::size_t d = idx.size(); d-- > 0;) {
        if (++idx[d] < in_shape[d]) break;
        idx[d] = 0;
      }
    }
  }

  const auto x = a.data();
  Buffer<T> y(out_n, T(0));
  std::vector<std::size_t> argmax;
  if (kind == Reduction::max) {
    y.assign(out_n, -std::numeric_limits<T>::infinity());
    argmax.assign(out_n, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > y[target[i]]) {
        y[target[i]] = x[i];
        argmax[target[i]] = i;
      }
    }
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) y[target[i]] += x[i];
    if (kind == Reduction::mean) {
      for (T& v : y) v /= static_cast<T>(group);
    }
  }
  Tensor<T> out(out_shape, std::move(y));

  if (auto* tape = detail::tape_for<T>(a)) {
    auto sa = a.storage();
    auto so = out.storage();
    const char* name = kind == Reduction::sum ? "reduce_sum" : kind == Reduction::mean ? "reduce_mean" : "reduce_max";
    detail::record(tape, name, {sa}, out,
                   [kind, sa, so, target = std::move(target), argmax = std::move(argmax), group] {
                     auto ga = detail::sink(sa);
                     const auto& gy = so->grad;
                     if (kind == Reduction::max) {
                       for (std::size_t o = 0; o < gy.size(); ++o) ga[argmax[o]] += gy[o];
                       return;
                     }
                     const T f = kind == Reduction::mean ? T(1) / static_cast<T>(group) : T(1);
                     for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += f * gy[target[i]];
                   });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  std::vector<std::size_t> axes(a.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(Reduction::sum, a, axes);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  std::vector<std::size_t> axes(a.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(Reduction::mean, a, axes);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, T temperature) {
  if (!(temperature > T(0))) throw std::invalid_argument("softmax: temperature must be positive");
  if (a.rank() == 0) throw ShapeError("softmax needs at least one axis");
  const std::size_t width = a.shape().back();
  const std::size_t rows = a.numel() / width;
  const auto x = a.data();
  Buffer<T> y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * width;
    T* yr = y.data() + r * width;
    const T top = *std::max_element(xr, xr + width);
    T total = 0;
    for (std::size_t j = 0; j < width; ++j) {
      yr[j] = std::exp((xr[j] - top) / temperature);
      total += yr[j];
    }
    for (std::size_t j = 0; j < width; ++j) yr[j] /= total;
  }
  Tensor<T> out(a.shape(), std::move(y));
  detail::check_finite(out, "softmax");
  if (auto* tape = detail::tape_for<T>(a)) {
    auto sa = a.storage();
    auto so = out.storage();
    detail::record(tape, "softmax", {sa}, out, [sa, so, rows, width, temperature] {
      auto ga = detail::sink(sa);
      const auto& gy = so->grad;
      const auto& yv = so->value;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * width;
        T dot = 0;
        for (std::size_t j = 0; j < width; ++j) dot += gy[base + j] * yv[base + j];
        for (std::size_t j = 0; j < width; ++j) {
          ga[base + j] += yv[base + j] * (gy[base + j] - dot) / temperature;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& a, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("l2_normalize: eps must be positive");
  if (a.rank() == 0) throw ShapeError("l2_normalize needs at least one axis");
  const std::size_t width = a.shape().back();
  const std::size_t rows = a.numel() / width;
  const auto x = a.data();
  Buffer<T> y(x.size());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * width;
    T ss = 0;
    for (std::size_t j = 0; j < width; ++j) ss += xr[j] * xr[j];
    norms[r] = std::sqrt(ss);
    const T denom = std::max(norms[r], eps);
    for (std::size_t j = 0; j < width; ++j) y[r * width + j] = xr[j] / denom;
  }
  Tensor<T> out(a.shape(), std::move(y));
  if (auto* tape = detail::tape_for<T>(a)) {
    auto sa = a.storage();
    auto so = out.storage();
    detail::record(tape, "l2_normalize", {sa}, out, [sa, so, rows, width, eps, norms = std::move(norms)] {
      auto ga = detail::sink(sa);
      const auto& gy = so->grad;
      const auto& yv = so->value;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * width;
        if (norms[r] < eps) {
          for (std::size_t j = 0; j < width; ++j) ga[base + j] += gy[base + j] / eps;
          continue;
        }
        T dot = 0;
        for (std::size_t j = 0; j < width; ++j) dot += gy[base + j] * yv[base + j];
        for (std::size_t j = 0; j < width; ++j) {
          ga[base + j] += (gy[base + j] - yv[base + j] * dot) / norms[r];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), Buffer<T>(a.data().begin(), a.data().end()));
  if (auto* tape = detail::tape_for<T>(a)) {
    auto sa = a.storage();
    auto so = out.storage();
    detail::record(tape, "reshape", {sa}, out, [sa, so] {
      auto ga = detail::sink(sa);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += so->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: invalid axis for shape " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  Tensor<T> out(out_shape);
  auto y = out.mutable_data();
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t row = p.shape()[axis] * inner;
    const auto x = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.begin() + o * row, row, y.begin() + o * out_row + offset);
    }
    offset += row;
  }

  std::vector<std::shared_ptr<TensorStorage<T>>> inputs;
  bool any = false;
  for (const auto& p : parts) {
    inputs.push_back(p.storage());
    any = any || p.requires_grad();
  }
  auto* tape = GradTape<T>::active();
  if (tape && any) {
    auto so = out.storage();
    detail::record(tape, "concat", inputs, out, [inputs, so, offsets, outer, out_row] {
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto g = detail::sink(inputs[i]);
        if (g.empty()) continue;
        const std::size_t row = g.size() / outer;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < row; ++j) g[o * row + j] += so->grad[o * out_row + offsets[i] + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> select_rows(const Tensor<T>& a, const std::vector<std::size_t>& indices) {
  if (a.rank() == 0 || indices.empty()) throw ShapeError("select_rows: need a non-scalar tensor and at least one index");
  const std::size_t rows = a.dim(0);
  const std::size_t width = a.numel() / rows;
  Shape shape = a.shape();
  shape[0] = indices.size();
  Tensor<T> out(shape);
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) throw ShapeError("select_rows: index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(a.data().begin() + indices[i] * width, width, y.begin() + i * width);
  }
  if (auto* tape = detail::tape_for<T>(a)) {
    auto sa = a.storage();
    auto so = out.storage();
    detail::record(tape, "select_rows", {sa}, out, [sa, so, indices, width] {
      auto ga = detail::sink(sa);
      for (std::size_t i = 0; i < indices.size(); ++i) {
        for (std::size_t j = 0; j < width; ++j) ga[indices[i] * width + j] += so->grad[i * width + j];
      }
    });
  }
  return out;
}

#define PV_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> elementwise(Elementwise, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> scale(const Tensor<T>&, T);                                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> reduce(Reduction, const Tensor<T>&, const std::vector<std::size_t>&); \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> mean(const Tensor<T>&);                                               \
  template Tensor<T> softmax(const Tensor<T>&, T);                                         \
  template Tensor<T> l2_normalize(const Tensor<T>&, T);                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
  template Tensor<T> select_rows(const Tensor<T>&, const std::vector<std::size_t>&);      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);

PV_INSTANTIATE_OPS(float)
PV_INSTANTIATE_OPS(double)

}  // namespace pv
