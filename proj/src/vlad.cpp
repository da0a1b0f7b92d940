#include "pv/vlad.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "record.hpp"

namespace pv {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

}  // namespace

template <typename T>
VladParams<T> VladParams<T>::tied(const Tensor<T>& centers, double alpha) {
  if (centers.rank() != 2) throw ShapeError("VladParams: centers must be (K,D), got " + shape_str(centers.shape()));
  if (!(alpha > 0.0)) throw std::invalid_argument("VladParams: alpha must be positive");
  VladParams p;
  p.centers = centers.clone();
  p.alpha = alpha;
  p.assign_w = Tensor<T>(centers.shape());
  p.assign_z = Tensor<T>({centers.dim(0)});
  p.retie();
  return p;
}

template <typename T>
void VladParams<T>::retie() {
  const std::size_t K = clusters(), D = dim();
  const auto c = centers.data();
  auto w = assign_w.mutable_data();
  auto z = assign_z.mutable_data();
  for (std::size_t k = 0; k < K; ++k) {
    double sq = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      const double v = c[k * D + j];
      w[k * D + j] = static_cast<T>(2.0 * alpha * v);
      sq += v * v;
    }
    z[k] = static_cast<T>(-alpha * sq);
  }
}

template <typename T>
Tensor<T> soft_assign(const Tensor<T>& descriptors, const Tensor<T>& assign_w, const Tensor<T>& assign_z) {
  if (descriptors.rank() != 2 || assign_w.rank() != 2 || assign_z.rank() != 1 ||
      descriptors.dim(1) != assign_w.dim(1) || assign_z.dim(0) != assign_w.dim(0)) {
    throw ShapeError("soft_assign: descriptors " + shape_str(descriptors.shape()) + ", w " +
                     shape_str(assign_w.shape()) + ", z " + shape_str(assign_z.shape()) + " disagree");
  }
  const std::size_t M = descriptors.dim(0), D = descriptors.dim(1), K = assign_w.dim(0);
  Tensor<T> out({M, K});
  MutMap<T> a(out.mutable_data().data(), idx(M), idx(K));
  a.noalias() = ConstMap<T>(descriptors.data().data(), idx(M), idx(D)) *
                ConstMap<T>(assign_w.data().data(), idx(K), idx(D)).transpose();
  const auto z = assign_z.data();
  for (std::size_t m = 0; m < M; ++m) {
    T top = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      a(idx(m), idx(k)) += z[k];
      top = std::max(top, a(idx(m), idx(k)));
    }
    T total = 0;
    for (std::size_t k = 0; k < K; ++k) {
      a(idx(m), idx(k)) = std::exp(a(idx(m), idx(k)) - top);
      total += a(idx(m), idx(k));
    }
    a.row(idx(m)) /= total;
  }
  detail::check_finite(out, "soft_assign");
  if (auto* tape = detail::tape_for<T>(descriptors, assign_w, assign_z)) {
    auto sf = descriptors.storage();
    auto sw = assign_w.storage();
    auto sz = assign_z.storage();
    auto so = out.storage();
    detail::record(tape, "soft_assign", {sf, sw, sz}, out, [sf, sw, sz, so, M, D, K] {
      ConstMap<T> a(so->value.data(), idx(M), idx(K));
      ConstMap<T> ga(so->grad.data(), idx(M), idx(K));
      RowMatrix<T> dlogit = a.array() * (ga.colwise() - (a.array() * ga.array()).matrix().rowwise().sum()).array();
      if (auto gf = detail::sink(sf); !gf.empty()) {
        MutMap<T>(gf.data(), idx(M), idx(D)).noalias() += dlogit * ConstMap<T>(sw->value.data(), idx(K), idx(D));
      }
      if (auto gw = detail::sink(sw); !gw.empty()) {
        MutMap<T>(gw.data(), idx(K), idx(D)).noalias() +=
            dlogit.transpose() * ConstMap<T>(sf->value.data(), idx(M), idx(D));
      }
      if (auto gz = detail::sink(sz); !gz.empty()) {
        for (std::size_t k = 0; k < K; ++k) gz[k] += dlogit.col(idx(k)).sum();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> residual_aggregate(const Tensor<T>& descriptors, const Tensor<T>& assignment, const Tensor<T>& centers) {
  if (descriptors.rank() != 3 || assignment.rank() != 3 || centers.rank() != 2 ||
      assignment.dim(0) != descriptors.dim(0) || assignment.dim(1) != descriptors.dim(1) ||
      assignment.dim(2) != centers.dim(0) || centers.dim(1) != descriptors.dim(2)) {
    throw ShapeError("residual_aggregate: descriptors " + shape_str(descriptors.shape()) + ", assignment " +
                     shape_str(assignment.shape()) + ", centers " + shape_str(centers.shape()) + " disagree");
  }
  const std::size_t N = descriptors.dim(0), B = descriptors.dim(1), D = descriptors.dim(2), K = centers.dim(0);
  Tensor<T> out({N, K, D});
  ConstMap<T> c(centers.data().data(), idx(K), idx(D));
  for (std::size_t n = 0; n < N; ++n) {
    ConstMap<T> f(descriptors.data().data() + n * B * D, idx(B), idx(D));
    ConstMap<T> a(assignment.data().data() + n * B * K, idx(B), idx(K));
    MutMap<T> v(out.mutable_data().data() + n * K * D, idx(K), idx(D));
    v.noalias() = a.transpose() * f;
    v -= (a.colwise().sum().transpose().asDiagonal() * c);
  }
  if (auto* tape = detail::tape_for<T>(descriptors, assignment, centers)) {
    auto sf = descriptors.storage();
    auto sa = assignment.storage();
    auto sc = centers.storage();
    auto so = out.storage();
    detail::record(tape, "residual_aggregate", {sf, sa, sc}, out, [sf, sa, sc, so, N, B, D, K] {
      auto gf = detail::sink(sf);
      auto ga = detail::sink(sa);
      auto gc = detail::sink(sc);
      ConstMap<T> c(sc->value.data(), idx(K), idx(D));
      for (std::size_t n = 0; n < N; ++n) {
        ConstMap<T> f(sf->value.data() + n * B * D, idx(B), idx(D));
        ConstMap<T> a(sa->value.data() + n * B * K, idx(B), idx(K));
        ConstMap<T> gv(so->grad.data() + n * K * D, idx(K), idx(D));
        if (!ga.empty()) {
          MutMap<T> gan(ga.data() + n * B * K, idx(B), idx(K));
          gan.noalias() += f * gv.transpose();
          const Eigen::Matrix<T, 1, Eigen::Dynamic> cdot = (c.array() * gv.array()).rowwise().sum().transpose();
          gan.rowwise() -= cdot;
        }
        if (!gf.empty()) MutMap<T>(gf.data() + n * B * D, idx(B), idx(D)).noalias() += a * gv;
        if (!gc.empty()) {
          MutMap<T>(gc.data(), idx(K), idx(D)) -= a.colwise().sum().transpose().asDiagonal() * gv;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> vlad_aggregate(const Tensor<T>& descriptors, const VladParams<T>& params) {
  const bool single = descriptors.rank() == 2;
  if (!single && descriptors.rank() != 3) {
    throw ShapeError("vlad_aggregate: descriptors must be (B,D) or (N,B,D), got " + shape_str(descriptors.shape()));
  }
  const std::size_t N = single ? 1 : descriptors.dim(0);
  const std::size_t B = descriptors.dim(single ? 0 : 1);
  const std::size_t D = descriptors.shape().back();
  const std::size_t K = params.clusters();
  if (D != params.dim()) {
    throw ShapeError("vlad_aggregate: descriptor dim " + std::to_string(D) + " vs cluster dim " +
                     std::to_string(params.dim()));
  }
  const Tensor<T> rows = reshape(descriptors, {N * B, D});
  const Tensor<T> assignment = reshape(soft_assign(rows, params.assign_w, params.assign_z), {N, B, K});
  const Tensor<T> cube = single ? reshape(descriptors, {1, B, D}) : descriptors;
  const Tensor<T> v = residual_aggregate(cube, assignment, params.centers);
  return single ? reshape(v, {K, D}) : v;
}

template <typename T>
Tensor<T> intra_normalize(const Tensor<T>& vlad, T eps) {
  if (vlad.rank() != 2 && vlad.rank() != 3) throw ShapeError("intra_normalize: expected (K,D) or (N,K,D)");
  return l2_normalize(vlad, eps);
}

template <typename T>
Tensor<T> flatten_l2(const Tensor<T>& vlad, T eps) {
  if (vlad.rank() == 2) return l2_normalize(reshape(vlad, {vlad.numel()}), eps);
  if (vlad.rank() == 3) return l2_normalize(reshape(vlad, {vlad.dim(0), vlad.dim(1) * vlad.dim(2)}), eps);
  throw ShapeError("flatten_l2: expected (K,D) or (N,K,D), got " + shape_str(vlad.shape()));
}

HardVlad hard_vlad_oracle(const Tensor<double>& descriptors, const Tensor<double>& centers) {
  if (descriptors.rank() != 2 || centers.rank() != 2 || descriptors.dim(1) != centers.dim(1)) {
    throw ShapeError("hard_vlad_oracle: descriptors " + shape_str(descriptors.shape()) + " vs centers " +
                     shape_str(centers.shape()));
  }
  const std::size_t B = descriptors.dim(0), D = descriptors.dim(1), K = centers.dim(0);
  const auto f = descriptors.data();
  const auto c = centers.data();
  HardVlad out{Tensor<double>({K, D}), std::vector<std::size_t>(B), false};
  auto v = out.matrix.mutable_data();
  for (std::size_t b = 0; b < B; ++b) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    bool tie = false;
    for (std::size_t k = 0; k < K; ++k) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        const double r = f[b * D + j] - c[k * D + j];
        d2 += r * r;
      }
      if (d2 < best) {
        best = d2;
        arg = k;
        tie = false;
      } else if (d2 == best) {
        tie = true;  // lowest index keeps the descriptor
      }
    }
    out.tie = out.tie || tie;
    out.assignment[b] = arg;
    for (std::size_t j = 0; j < D; ++j) v[arg * D + j] += f[b * D + j] - c[arg * D + j];
  }
  return out;
}

Tensor<double> kmeans_centers(const Tensor<double>& samples, std::size_t clusters, std::size_t iterations,
                              std::uint64_t seed) {
  if (samples.rank() != 2) throw ShapeError("kmeans_centers: samples must be (M,D)");
  if (clusters == 0) throw std::invalid_argument("kmeans_centers: need at least one cluster");
  const std::size_t M = samples.dim(0), D = samples.dim(1);
  Rng rng(seed);
  Tensor<double> centers({clusters, D});
  auto c = centers.mutable_data();
  if (M < clusters) {
    for (std::size_t k = 0; k < clusters; ++k) {
      double sq = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        c[k * D + j] = rng.normal();
        sq += c[k * D + j] * c[k * D + j];
      }
      const double norm = std::sqrt(sq);
      for (std::size_t j = 0; j < D; ++j) c[k * D + j] /= norm;
    }
    return centers;
  }
  const auto x = samples.data();
  std::vector<std::size_t> order(M);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t k = 0; k < clusters; ++k) std::swap(order[k], order[k + rng.index(M - k)]);
  for (std::size_t k = 0; k < clusters; ++k) std::copy_n(x.begin() + order[k] * D, D, c.begin() + k * D);

  std::vector<std::size_t> label(M, 0);
  std::vector<double> sums(clusters * D);
  std::vector<std::size_t> counts(clusters);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t m = 0; m < M; ++m) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < clusters; ++k) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
          const double r = x[m * D + j] - c[k * D + j];
          d2 += r * r;
        }
        if (d2 < best) {
          best = d2;
          label[m] = k;
        }
      }
    }
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t m = 0; m < M; ++m) {
      ++counts[label[m]];
      for (std::size_t j = 0; j < D; ++j) sums[label[m] * D + j] += x[m * D + j];
    }
    for (std::size_t k = 0; k < clusters; ++k) {
      if (counts[k] == 0) continue;  // empty cluster keeps its previous center
      for (std::size_t j = 0; j < D; ++j) c[k * D + j] = sums[k * D + j] / static_cast<double>(counts[k]);
    }
  }
  return centers;
}

#define PV_INSTANTIATE_VLAD(T)                                                                      \
  template struct VladParams<T>;                                                                    \
  template Tensor<T> soft_assign(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> residual_aggregate(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> vlad_aggregate(const Tensor<T>&, const VladParams<T>&);                        \
  template Tensor<T> intra_normalize(const Tensor<T>&, T);                                          \
  template Tensor<T> flatten_l2(const Tensor<T>&, T);

PV_INSTANTIATE_VLAD(float)
PV_INSTANTIATE_VLAD(double)

}  // namespace pv
