#include "pv/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "pv/clips.hpp"
#include "pv/eval.hpp"
#include "pv/grad_check.hpp"
#include "pv/layers.hpp"
#include "pv/model.hpp"
#include "pv/oim.hpp"
#include "pv/ops.hpp"
#include "pv/optim.hpp"
#include "pv/oracles.hpp"
#include "pv/part_attention.hpp"
#include "pv/rng.hpp"
#include "pv/vlad.hpp"

namespace pv {

namespace {

using Thunk = std::function<Tensor<double>()>;

double tol(double base, const VerifyOptions& o) { return o.full_precision ? base / 10.0 : base; }

Check make(std::string name, double error, double tolerance, std::string detail = {}) {
  Check c;
  c.name = std::move(name);
  c.error = error;
  c.tolerance = tolerance;
  c.passed = std::isfinite(error) && error <= tolerance;
  c.detail = std::move(detail);
  return c;
}

template <typename F>
Check timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  Check c = f();
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.mutable_data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Values bounded away from zero, for ops with a kink there.
Tensor<double> signed_tensor(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.mutable_data()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return t;
}

// Distinct values at least 1e-3 apart, so a small step never changes a max.
Tensor<double> distinct_tensor(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  auto v = t.mutable_data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1e-3 * static_cast<double>(i);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
  return t;
}

std::string grad_detail(const GradCheckResult& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu coords, worst #%zu analytic %.6g numeric %.6g", r.checked, r.worst_index,
                r.analytic, r.numeric);
  return buf;
}

// Near the cube root of machine epsilon, balancing truncation and roundoff.
GradCheckOptions default_step() {
  GradCheckOptions o;
  o.step = 1e-5;
  return o;
}

// Linear in the probed argument, so any step is exact up to roundoff.
GradCheckOptions linear_step() {
  GradCheckOptions o;
  o.step = 1e-3;
  return o;
}

// Checks d/dx of sum(w * op(x)) for a fixed random projection w.
Check grad_entry(const std::string& name, const std::function<Tensor<double>(const Tensor<double>&)>& op,
                 const Tensor<double>& x, double tolerance, std::uint64_t seed, GradCheckOptions opts = default_step()) {
  return timed([&] {
    Tensor<double> w;
    {
      NoGradGuard<double> guard;
      Rng rng(seed);
      w = random_tensor(op(x).shape(), rng, 0.5, 1.5);
    }
    const ScalarFunction f = [&](const Tensor<double>& v) {
      const Tensor<double> y = op(v);
      return y.rank() == 0 ? y : sum(mul(y, w));
    };
    const GradCheckResult r = grad_check(f, x, opts);
    return make(name, r.max_rel_error, tolerance, grad_detail(r));
  });
}

// Same, with respect to a tensor the thunk reads implicitly.
Check grad_param(const std::string& name, const Thunk& op, Tensor<double> param, double tolerance,
                 std::uint64_t seed, GradCheckOptions opts = default_step()) {
  return timed([&] {
    Tensor<double> w;
    {
      NoGradGuard<double> guard;
      Rng rng(seed);
      w = random_tensor(op().shape(), rng, 0.5, 1.5);
    }
    const Thunk f = [&] {
      const Tensor<double> y = op();
      return y.rank() == 0 ? y : sum(mul(y, w));
    };
    const GradCheckResult r = grad_check(f, param, opts);
    return make(name, r.max_rel_error, tolerance, grad_detail(r));
  });
}

OimState random_oim(std::size_t identities, std::size_t dim, std::size_t queue, Rng& rng, double temperature = 0.1) {
  OimConfig cfg;
  cfg.temperature = temperature;
  cfg.queue_capacity = std::max<std::size_t>(queue, 1);
  OimState state(identities, dim, cfg);
  std::vector<float> v(dim);
  auto unit = [&] {
    double n = 0.0;
    for (float& x : v) {
      x = static_cast<float>(rng.normal());
      n += static_cast<double>(x) * x;
    }
    for (float& x : v) x = static_cast<float>(x / std::sqrt(n));
  };
  OimState zero_momentum(identities, dim, OimConfig{temperature, cfg.queue_capacity, 0.0});
  for (std::size_t c = 0; c < identities; ++c) {
    unit();
    zero_momentum.lut_update(c, v);
  }
  for (std::size_t q = 0; q < queue; ++q) {
    unit();
    zero_momentum.queue_push(v);
  }
  state.load(zero_momentum.table_tensor(), zero_momentum.queue_tensor());
  return state;
}

}  // namespace

std::vector<Check> gradient_suite(const VerifyOptions& o) {
  const double t = tol(1e-6, o);
  Rng rng(derive_seed(o.seed, 1));
  std::vector<Check> out;
  std::uint64_t s = o.seed;

  const Tensor<double> y = random_tensor({3, 4}, rng);
  out.push_back(grad_entry("grad.elementwise.add", [&](const auto& x) { return add(x, y); }, random_tensor({3, 4}, rng), t, ++s));
  out.push_back(grad_entry("grad.elementwise.sub", [&](const auto& x) { return sub(y, x); }, random_tensor({3, 4}, rng), t, ++s));
  out.push_back(grad_entry("grad.elementwise.mul", [&](const auto& x) { return mul(x, mul(x, y)); }, random_tensor({3, 4}, rng), t, ++s));
  out.push_back(grad_entry("grad.elementwise.relu", [](const auto& x) { return relu(x); }, signed_tensor({3, 4}, rng), t, ++s));
  out.push_back(grad_entry("grad.elementwise.sigmoid", [](const auto& x) { return sigmoid(x); }, random_tensor({3, 4}, rng, -3, 3), t, ++s));
  out.push_back(grad_entry("grad.elementwise.exp", [](const auto& x) { return exp(x); }, random_tensor({3, 4}, rng), t, ++s));
  out.push_back(grad_entry("grad.scale", [](const auto& x) { return scale(x, -2.5); }, random_tensor({5}, rng), t, ++s));

  const Tensor<double> B = random_tensor({4, 3}, rng);
  const Tensor<double> A = random_tensor({2, 4}, rng);
  out.push_back(grad_entry("grad.matmul.lhs", [&](const auto& x) { return matmul(x, B); }, random_tensor({2, 4}, rng), t, ++s));
  out.push_back(grad_entry("grad.matmul.rhs", [&](const auto& x) { return matmul(A, x); }, random_tensor({4, 3}, rng), t, ++s));

  out.push_back(grad_entry("grad.reduce.sum", [](const auto& x) { return reduce(Reduction::sum, x, {1}); }, random_tensor({2, 3, 4}, rng), t, ++s));
  out.push_back(grad_entry("grad.reduce.mean", [](const auto& x) { return reduce(Reduction::mean, x, {0, 2}); }, random_tensor({2, 3, 4}, rng), t, ++s));
  out.push_back(grad_entry("grad.reduce.max", [](const auto& x) { return reduce(Reduction::max, x, {2}); }, distinct_tensor({2, 3, 4}, rng), t, ++s));
  out.push_back(grad_entry("grad.softmax", [](const auto& x) { return softmax(x, 0.5); }, random_tensor({3, 5}, rng), t, ++s));
  out.push_back(grad_entry("grad.l2_normalize", [](const auto& x) { return l2_normalize(x); }, random_tensor({3, 5}, rng), t, ++s));
  out.push_back(grad_entry("grad.reshape", [](const auto& x) { return mul(reshape(x, {6, 2}), reshape(x, {6, 2})); }, random_tensor({3, 4}, rng), t, ++s));
  out.push_back(grad_entry("grad.concat", [&](const auto& x) { return concat(std::vector<Tensor<double>>{x, y, x}, 1); }, random_tensor({3, 2}, rng), t, ++s));
  out.push_back(grad_entry("grad.select_rows", [](const auto& x) { return select_rows(x, {2, 0, 2}); }, random_tensor({3, 4}, rng), t, ++s));

  // Layers.
  {
    const Tensor<double> x = random_tensor({2, 3, 4, 5, 5}, rng);
    const Tensor<double> w = random_tensor({4, 3, 3, 3, 3}, rng, -0.3, 0.3);
    const Tensor<double> b = random_tensor({4}, rng);
    const Extent3 pad{1, 1, 1};
    out.push_back(grad_entry("grad.conv3d.input", [&](const auto& v) { return conv3d(v, w, b, pad); }, x, t, ++s, linear_step()));
    out.push_back(grad_entry("grad.conv3d.weight", [&](const auto& v) { return conv3d(x, v, b, pad); }, w, t, ++s, linear_step()));
    out.push_back(grad_entry("grad.conv3d.bias", [&](const auto& v) { return conv3d(x, w, v, pad); }, b, t, ++s, linear_step()));
  }
  out.push_back(grad_entry("grad.maxpool3d", [](const auto& x) { return maxpool3d(x, Extent3{2, 2, 2}); }, distinct_tensor({2, 2, 4, 5, 6}, rng), t, ++s));
  out.push_back(grad_entry("grad.global_avgpool3d", [](const auto& x) { return global_avgpool3d(x); }, random_tensor({2, 3, 2, 3, 4}, rng), t, ++s));
  {
    const Tensor<double> x = random_tensor({3, 5}, rng);
    const Tensor<double> w = random_tensor({4, 5}, rng);
    const Tensor<double> b = random_tensor({4}, rng);
    out.push_back(grad_entry("grad.fully_connected.input", [&](const auto& v) { return fully_connected(v, w, b); }, x, t, ++s));
    out.push_back(grad_entry("grad.fully_connected.weight", [&](const auto& v) { return fully_connected(x, v, b); }, w, t, ++s));
    out.push_back(grad_entry("grad.fully_connected.bias", [&](const auto& v) { return fully_connected(x, w, v); }, b, t, ++s));
  }

  // Part attention.
  {
    const Tensor<double> f = random_tensor({2, 4, 2, 3, 3}, rng, 0.0, 1.0);
    const Tensor<double> w = random_tensor({1, 4, 1, 1, 1}, rng);
    const Tensor<double> b = random_tensor({1}, rng);
    out.push_back(grad_entry("grad.part_map.features", [&](const auto& v) { return part_map(v, w, b); }, f, t, ++s));
    out.push_back(grad_entry("grad.part_map.weight", [&](const auto& v) { return part_map(f, v, b); }, w, t, ++s));
    out.push_back(grad_entry("grad.part_map.bias", [&](const auto& v) { return part_map(f, w, v); }, b, t, ++s));
    const Tensor<double> m = random_tensor({2, 2, 3, 3}, rng, 0.0, 1.0);
    out.push_back(grad_entry("grad.attend.features", [&](const auto& v) { return attend(v, m); }, f, t, ++s));
    out.push_back(grad_entry("grad.attend.map", [&](const auto& v) { return attend(f, v); }, m, t, ++s));
  }

  // Aggregation.
  {
    const std::size_t K = 3, D = 4;
    const Tensor<double> desc = random_tensor({2, 5, D}, rng);
    VladParams<double> p = VladParams<double>::tied(random_tensor({K, D}, rng), 1.0);
    // Decouple so every parameter enters independently.
    for (double& v : p.assign_w.mutable_data()) v += rng.uniform(-0.2, 0.2);
    for (double& v : p.assign_z.mutable_data()) v += rng.uniform(-0.2, 0.2);
    const Tensor<double> flat = reshape(desc, {10, D});
    out.push_back(grad_entry("grad.soft_assign.descriptors", [&](const auto& v) { return soft_assign(v, p.assign_w, p.assign_z); }, flat, t, ++s));
    out.push_back(grad_entry("grad.soft_assign.w", [&](const auto& v) { return soft_assign(flat, v, p.assign_z); }, p.assign_w, t, ++s));
    out.push_back(grad_entry("grad.soft_assign.z", [&](const auto& v) { return soft_assign(flat, p.assign_w, v); }, p.assign_z, t, ++s));
    const Tensor<double> a = softmax(random_tensor({2, 5, K}, rng));
    out.push_back(grad_entry("grad.residual_aggregate.assignment", [&](const auto& v) { return residual_aggregate(desc, v, p.centers); }, a, t, ++s));
    out.push_back(grad_entry("grad.residual_aggregate.centers", [&](const auto& v) { return residual_aggregate(desc, a, v); }, p.centers, t, ++s));
    out.push_back(grad_entry("grad.vlad_aggregate.descriptors", [&](const auto& v) { return vlad_aggregate(v, p); }, desc, t, ++s));
    out.push_back(grad_param("grad.vlad_aggregate.centers", [&] { return vlad_aggregate(desc, p); }, p.centers, t, ++s));
    out.push_back(grad_param("grad.vlad_aggregate.assign_w", [&] { return vlad_aggregate(desc, p); }, p.assign_w, t, ++s));
    out.push_back(grad_param("grad.vlad_aggregate.assign_z", [&] { return vlad_aggregate(desc, p); }, p.assign_z, t, ++s));
    out.push_back(grad_entry("grad.intra_normalize", [](const auto& v) { return intra_normalize(v); }, random_tensor({2, K, D}, rng), t, ++s));
    out.push_back(grad_entry("grad.flatten_l2", [](const auto& v) { return flatten_l2(v); }, random_tensor({2, K, D}, rng), t, ++s));
  }

  // OIM loss with respect to (normalized) descriptors, full and subsampled.
  {
    const std::size_t C = 5, D = 6;
    const OimState state = random_oim(C, D, 3, rng);
    const std::vector<std::size_t> labels{1, 4, 1};
    const auto loss = [&](const Tensor<double>& v) { return oim_loss(l2_normalize(v), labels, state).loss; };
    out.push_back(grad_entry("grad.oim_loss", loss, random_tensor({3, D}, rng), t, ++s));
    std::vector<OimSubsample> samples;
    for (std::size_t r = 0; r < labels.size(); ++r) samples.push_back(subsample_partition(state, labels[r], 4, derive_seed(o.seed, 40 + r)));
    const auto sub = [&](const Tensor<double>& v) { return oim_loss(l2_normalize(v), labels, state, samples).loss; };
    out.push_back(grad_entry("grad.oim_loss.subsampled", sub, random_tensor({3, D}, rng), t, ++s));
  }
  return out;
}

namespace {

// Pool schedule that keeps a (8, 16, 16) clip above one voxel per stage.
BackboneSpec small_backbone() {
  BackboneSpec spec;
  spec.filters = {4, 4, 6, 6, 8};
  spec.pools = {{1, 2, 2}, {2, 2, 2}, {2, 2, 2}, {1, 1, 1}, {1, 1, 1}};
  return spec;
}

}  // namespace

std::vector<Check> composed_gradient_suite(const VerifyOptions& o) {
  const double t = tol(1e-4, o);
  Rng rng(derive_seed(o.seed, 2));
  ModelConfig mc;
  mc.backbone = small_backbone();
  mc.branches = 2;
  mc.clusters = 3;
  PersonVladNet<double> model(mc, derive_seed(o.seed, 3));
  Tensor<double> clip = random_tensor({2, 3, 8, 16, 16}, rng, 0.0, 1.0);
  {
    // Centers near actual part descriptors and alpha at the scale of their
    // spread, so the assignment is soft and every parameter matters.
    NoGradGuard<double> guard;
    const Tensor<double> parts = model.forward(clip).parts;
    const std::size_t D = mc.feature_dim(), M = parts.numel() / D;
    Tensor<double> centers({mc.clusters, D});
    double spread = 0.0;
    for (std::size_t k = 0; k < mc.clusters; ++k) {
      for (std::size_t j = 0; j < D; ++j) {
        const double v = parts.data()[(k % M) * D + j];
        centers.mutable_data()[k * D + j] = v * rng.uniform(0.7, 1.3);
        spread += v * v;
      }
    }
    model.vlad().alpha = static_cast<double>(mc.clusters) / std::max(spread, 1e-12);
    model.set_centers(centers);
    for (double& v : model.vlad().assign_w.mutable_data()) v *= rng.uniform(0.9, 1.1);
  }
  const OimState state = random_oim(3, mc.descriptor_dim(), 2, rng);
  const std::vector<std::size_t> labels{0, 2};
  const Thunk loss = [&] { return oim_loss(model.forward(clip).descriptor, labels, state).loss; };

  std::vector<Check> out;
  GradCheckOptions opts = default_step();
  opts.max_coords = 96;
  opts.seed = o.seed;
  out.push_back(grad_param("grad.model.input", loss, clip, t, 0, opts));
  for (const auto& p : model.parameters()) {
    out.push_back(grad_param("grad.model." + p.name, loss, p.tensor, t, 0, opts));
  }
  return out;
}

namespace {

template <typename T>
oracle::Array to_array(const Tensor<T>& t) {
  oracle::Array a;
  a.shape = t.shape();
  a.v.assign(t.data().begin(), t.data().end());
  return a;
}

template <typename T>
double max_abs_diff(std::span<const T> a, const std::vector<double>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

template <typename T>
std::vector<Check> layer_checks(const VerifyOptions& o) {
  Rng rng(derive_seed(o.seed, 4));
  std::vector<Check> out;
  out.push_back(timed([&] {
    double worst = 0.0;
    for (int trial = 0; trial < 4; ++trial) {
      const std::size_t C = 1 + rng.index(3), O = 1 + rng.index(4);
      const Tensor<T> x = random_tensor<T>({2, C, 3 + rng.index(3), 4 + rng.index(3), 4 + rng.index(4)}, rng);
      const Extent3 k{1 + 2 * rng.index(2), 3, 1 + 2 * rng.index(2)};
      const Tensor<T> w = random_tensor<T>({O, C, k.depth, k.height, k.width}, rng);
      const Tensor<T> b = random_tensor<T>({O}, rng);
      const Extent3 pad{k.depth / 2, k.height / 2, k.width / 2};
      const Tensor<T> y = conv3d(x, w, b, pad);
      const oracle::Array ref = oracle::conv3d(to_array(x), to_array(w), to_array(b), {pad.depth, pad.height, pad.width});
      if (y.shape() != ref.shape) return make("forward.conv3d", std::numeric_limits<double>::infinity(), 0, "shape mismatch");
      worst = std::max(worst, max_abs_diff<T>(y.data(), ref.v));
    }
    return make("forward.conv3d", worst, tol(1e-4, o), "4 random configurations vs nested loops");
  }));
  out.push_back(timed([&] {
    double worst = 0.0;
    for (int trial = 0; trial < 4; ++trial) {
      const Tensor<T> x = random_tensor<T>({2, 3, 4 + rng.index(3), 5 + rng.index(4), 5 + rng.index(4)}, rng);
      const Extent3 k{1 + rng.index(2), 2, 2};
      const Tensor<T> y = maxpool3d(x, k);
      const oracle::Array ref = oracle::maxpool3d(to_array(x), {k.depth, k.height, k.width});
      if (y.shape() != ref.shape) return make("forward.maxpool3d", std::numeric_limits<double>::infinity(), 0, "shape mismatch");
      worst = std::max(worst, max_abs_diff<T>(y.data(), ref.v));
    }
    return make("forward.maxpool3d", worst, 0.0, "floor rule, exact");
  }));
  out.push_back(timed([&] {
    // Shape arithmetic for the default backbone on the desk input.
    const Extent3 e = backbone_output_extent(BackboneSpec{}, Extent3{16, 32, 64});
    const bool ok = e == Extent3{1, 1, 2};
    return make("forward.backbone_shape", ok ? 0.0 : 1.0, 0.0, "(3,16,32,64) -> " + e.str());
  }));
  return out;
}

}  // namespace

std::vector<Check> layer_suite(const VerifyOptions& o) {
  return o.full_precision ? layer_checks<double>(o) : layer_checks<float>(o);
}

namespace {

// Centers with pairwise distance >= min_sep; descriptors scattered within
// `radius` of a random center.
struct VladInstance {
  Tensor<double> centers;
  Tensor<double> descriptors;
};

VladInstance vlad_instance(std::size_t K, std::size_t D, std::size_t M, double min_sep, double radius, Rng& rng) {
  VladInstance inst;
  inst.centers = Tensor<double>({K, D});
  auto c = inst.centers.mutable_data();
  for (std::size_t k = 0; k < K;) {
    for (std::size_t j = 0; j < D; ++j) c[k * D + j] = rng.uniform(-1.0, 1.0);
    bool ok = true;
    for (std::size_t q = 0; q < k && ok; ++q) {
      double d = 0.0;
      for (std::size_t j = 0; j < D; ++j) d += (c[k * D + j] - c[q * D + j]) * (c[k * D + j] - c[q * D + j]);
      ok = std::sqrt(d) >= min_sep;
    }
    if (ok) ++k;
  }
  inst.descriptors = Tensor<double>({M, D});
  auto x = inst.descriptors.mutable_data();
  for (std::size_t i = 0; i < M; ++i) {
    const std::size_t k = rng.index(K);
    std::vector<double> dir(D);
    double n = 0.0;
    for (double& v : dir) {
      v = rng.normal();
      n += v * v;
    }
    const double r = radius * rng.uniform();
    for (std::size_t j = 0; j < D; ++j) x[i * D + j] = c[k * D + j] + r * dir[j] / std::sqrt(n);
  }
  return inst;
}

template <typename T>
double soft_vs_hard(const VladInstance& inst, double alpha) {
  const VladParams<T> p = VladParams<T>::tied(inst.centers.cast<T>(), alpha);
  const Tensor<T> soft = vlad_aggregate(inst.descriptors.cast<T>(), p);
  return max_abs_diff<T>(soft.data(), oracle::hard_vlad(to_array(inst.descriptors), to_array(inst.centers)).v);
}

}  // namespace

std::vector<Check> vlad_suite(const VerifyOptions& o) {
  std::vector<Check> out;
  out.push_back(timed([&] {
    Rng rng(derive_seed(o.seed, 5));
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const std::size_t K = std::size_t{2} << (i % 3);
      const VladInstance inst = vlad_instance(K, 8, 12, 0.5, 0.1, rng);
      worst = std::max(worst, o.full_precision ? soft_vs_hard<double>(inst, 1000.0) : soft_vs_hard<float>(inst, 1000.0));
    }
    return make("vlad.soft_matches_hard", worst, tol(1e-4, o), "100 instances, K in {2,4,8}, alpha 1000");
  }));
  out.push_back(timed([&] {
    Rng rng(derive_seed(o.seed, 6));
    std::size_t violations = 0;
    double e10 = 0, e100 = 0, e1000 = 0;
    for (int i = 0; i < 100; ++i) {
      const VladInstance inst = vlad_instance(std::size_t{2} << (i % 3), 8, 12, 0.5, 0.1, rng);
      const double a = soft_vs_hard<double>(inst, 10.0), b = soft_vs_hard<double>(inst, 100.0),
                   c = soft_vs_hard<double>(inst, 1000.0);
      // Differences below 1e-12 are roundoff once both errors hit the floor.
      if (!(b <= a + 1e-12 && c <= b + 1e-12 && (c < a || a < 1e-12))) ++violations;
      e10 = std::max(e10, a);
      e100 = std::max(e100, b);
      e1000 = std::max(e1000, c);
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "worst error %.3g / %.3g / %.3g at alpha 10 / 100 / 1000", e10, e100, e1000);
    return make("vlad.alpha_monotone", static_cast<double>(violations), 0.0, buf);
  }));
  out.push_back(timed([&] {
    Rng rng(derive_seed(o.seed, 7));
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const VladInstance inst = vlad_instance(4, 6, 10, 0.0, 1.0, rng);
      const double alpha = rng.uniform(0.5, 5.0);
      const VladParams<double> p = VladParams<double>::tied(inst.centers, alpha);
      const Tensor<double> got = flatten_l2(intra_normalize(vlad_aggregate(inst.descriptors, p)));
      const auto ref = oracle::normalize_vlad(oracle::soft_vlad(to_array(inst.descriptors), to_array(inst.centers), alpha));
      worst = std::max(worst, max_abs_diff<double>(got.data(), ref));
    }
    return make("vlad.tied_matches_distance_form", worst, tol(1e-10, o), "assignment via w.x+z vs exp(-alpha d^2)");
  }));
  out.push_back(timed([&] {
    Rng rng(derive_seed(o.seed, 8));
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const VladInstance inst = vlad_instance(4, 5, 9, 0.3, 1.0, rng);
      const HardVlad h = hard_vlad_oracle(inst.descriptors, inst.centers);
      worst = std::max(worst, max_abs_diff<double>(h.matrix.data(), oracle::hard_vlad(to_array(inst.descriptors), to_array(inst.centers)).v));
    }
    return make("vlad.hard_oracle", worst, tol(1e-12, o));
  }));
  return out;
}

std::vector<Check> normalization_suite(const VerifyOptions& o) {
  std::vector<Check> out;
  out.push_back(timed([&] {
    // Descriptors from every head variant, including all-zero inputs.
    Rng rng(derive_seed(o.seed, 9));
    double worst = 0.0;
    std::size_t zeros = 0;
    for (HeadKind head : {HeadKind::vlad, HeadKind::avg, HeadKind::max}) {
      for (PartitionKind part : {PartitionKind::learned, PartitionKind::stripes}) {
        ModelConfig mc;
        mc.backbone = small_backbone();
        mc.head = head;
        mc.partition = part;
        mc.region_count = 2;
        mc.clusters = 4;
        mc.head_dim = 8;
        mc.branches = 3;
        const PersonVladNet<float> model(mc, rng.next());
        for (int z = 0; z < 2; ++z) {
          const Tensor<float> x = z ? Tensor<float>({2, 3, 8, 16, 16}) : random_tensor<float>({2, 3, 8, 16, 16}, rng, 0, 1);
          NoGradGuard<float> guard;
          const Tensor<float> d = model.forward(x).descriptor;
          const std::size_t dim = d.dim(1);
          for (std::size_t n = 0; n < d.dim(0); ++n) {
            double sq = 0.0;
            for (std::size_t j = 0; j < dim; ++j) sq += static_cast<double>(d.data()[n * dim + j]) * d.data()[n * dim + j];
            if (sq == 0.0) {
              ++zeros;
            } else {
              worst = std::max(worst, std::abs(std::sqrt(sq) - 1.0));
            }
          }
        }
      }
    }
    // Tracklet means.
    for (int i = 0; i < 50; ++i) {
      const Tensor<float> clips = l2_normalize(random_tensor<float>({1 + rng.index(5), 32}, rng));
      const auto v = tracklet_descriptor(clips);
      double sq = 0.0;
      for (float x : v) sq += static_cast<double>(x) * x;
      worst = std::max(worst, std::abs(std::sqrt(sq) - 1.0));
    }
    return make("norm.descriptors", worst, tol(1e-5, o), std::to_string(zeros) + " exact-zero descriptors");
  }));
  out.push_back(timed([&] {
    Rng rng(derive_seed(o.seed, 10));
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const std::size_t C = 2 + rng.index(20), D = 2 + rng.index(16), Q = rng.index(8);
      const OimState state = random_oim(C, D, Q, rng, rng.uniform(0.05, 1.0));
      std::vector<double> v(D);
      for (double& x : v) x = rng.normal();
      const OimProbabilities p = oim_probabilities(v, state);
      double total = 0.0;
      for (double x : p.labeled) total += x;
      for (double x : p.unlabeled) total += x;
      worst = std::max(worst, std::abs(total - 1.0));
    }
    return make("norm.oim_probabilities", worst, tol(1e-6, o), "1000 random states");
  }));
  return out;
}

std::vector<Check> metric_suite(const VerifyOptions& o) {
  Rng rng(derive_seed(o.seed, 11));
  std::size_t cmc_mismatches = 0;
  double map_error = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t P = 1 + rng.index(50), G = 1 + rng.index(200), ids = 1 + rng.index(30), D = 1 + rng.index(6);
    RetrievalIndex index;
    auto entry = [&] {
      RetrievalEntry e;
      e.identity = static_cast<long>(rng.index(ids));
      e.camera = rng.index(3);
      // Coarse values make exact distance ties common.
      for (std::size_t j = 0; j < D; ++j) e.v.push_back(static_cast<float>(rng.index(4)) * 0.5f);
      return e;
    };
    for (std::size_t p = 0; p < P; ++p) index.probes.push_back(entry());
    for (std::size_t g = 0; g < G; ++g) index.gallery.push_back(entry());

    std::vector<std::vector<double>> gallery;
    std::vector<long> gids;
    for (const auto& e : index.gallery) {
      gallery.emplace_back(e.v.begin(), e.v.end());
      gids.push_back(e.identity);
    }
    std::vector<double> cmc(G, 0.0);
    double map = 0.0;
    std::size_t valid = 0;
    for (const auto& p : index.probes) {
      std::vector<bool> skip(G);
      for (std::size_t g = 0; g < G; ++g) skip[g] = index.gallery[g].identity == p.identity && index.gallery[g].camera == p.camera;
      const oracle::ProbeScore s = oracle::score_probe(std::vector<double>(p.v.begin(), p.v.end()), p.identity, gallery, gids, skip);
      if (!s.valid) continue;
      ++valid;
      for (std::size_t n = s.first_rank - 1; n < G; ++n) cmc[n] += 1.0;
      map += s.ap;
    }
    MetricReport r;
    try {
      r = evaluate(index, G);
    } catch (const std::invalid_argument&) {
      if (valid != 0) ++cmc_mismatches;
      continue;
    }
    if (r.evaluated != valid) {
      ++cmc_mismatches;
      continue;
    }
    for (std::size_t n = 0; n < G; ++n) {
      if (r.cmc[n] != cmc[n] / static_cast<double>(valid)) ++cmc_mismatches;
    }
    map_error = std::max(map_error, std::abs(r.map - map / static_cast<double>(valid)));
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::vector<Check> out;
  out.push_back(make("metric.cmc", static_cast<double>(cmc_mismatches), 0.0, "100 instances vs brute-force ranks, exact"));
  out.push_back(make("metric.map", map_error, o.full_precision ? 1e-13 : 1e-12, "100 instances vs brute-force AP"));
  out[0].seconds = out[1].seconds = seconds / 2;
  return out;
}

std::vector<Check> training_suite(const VerifyOptions& o) {
  std::vector<Check> out;
  out.push_back(timed([&] {
    std::size_t mismatches = 0;
    for (std::size_t n = 1; n <= 200; ++n) {
      if (clip_starts(n, 16, 8) != oracle::clip_windows(n, 16, 8)) ++mismatches;
    }
    return make("clips.windows", static_cast<double>(mismatches), 0.0, "lengths 1..200, clip 16, overlap 8");
  }));
  out.push_back(timed([&] {
    const bool ok = lr_schedule(0) == 0.003 && lr_schedule(1000) == 0.0015 && lr_schedule(2500) == 0.00075 &&
                    LrSchedule{}(Phase::step2, 2500) == 1e-4;
    return make("schedule.lr", ok ? 0.0 : 1.0, 0.0, "0.003 -> 0.0015 -> 0.00075 at 0/1000/2500");
  }));
  out.push_back(timed([&] {
    const AdamConfig cfg;
    const std::vector<double> ref = oracle::adam_quadratic(1.5, 2.0, -0.5, 0.01, cfg.beta1, cfg.beta2, cfg.epsilon, 2);
    std::vector<double> x{1.5};
    AdamMoments<double> m;
    double worst = 0.0;
    for (std::size_t t = 1; t <= 2; ++t) {
      const std::vector<double> g{2.0 * x[0] - 0.5};
      adam_step<double>(x, g, m, cfg, 0.01, t);
      worst = std::max(worst, std::abs(x[0] - ref[t - 1]));
    }
    return make("adam.replay", worst, tol(1e-10, o), "two steps on a scalar quadratic");
  }));
  return out;
}

std::vector<Check> oim_suite(const VerifyOptions& o) {
  std::vector<Check> out;
  Rng rng(derive_seed(o.seed, 12));
  out.push_back(timed([&] {
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      const std::size_t C = 2 + rng.index(10), D = 2 + rng.index(10), Q = rng.index(5);
      const OimState state = random_oim(C, D, Q, rng, rng.uniform(0.05, 1.0));
      const std::size_t label = rng.index(C);
      Tensor<double> v = l2_normalize(random_tensor({1, D}, rng));
      const double got = oim_loss<double>(v, std::vector<std::size_t>{label}, state).loss.item();
      std::vector<std::vector<double>> cols;
      auto add_col = [&](std::span<const float> e) { cols.emplace_back(e.begin(), e.end()); };
      add_col(state.table_row(label));
      for (std::size_t c = 0; c < C; ++c) {
        if (c != label) add_col(state.table_row(c));
      }
      for (std::size_t q = 0; q < state.queue_size(); ++q) add_col(state.queue_entry(q));
      const std::vector<double> vv(v.data().begin(), v.data().end());
      const double ref = oracle::oim_nll(vv, cols, state.temperature());
      worst = std::max(worst, std::abs(got - ref));
      // A subsample covering everything reproduces the exact loss.
      const OimSubsample full = subsample_partition(state, label, C + state.queue_size(), rng.next());
      const double sub = oim_loss<double>(v, std::vector<std::size_t>{label}, state, std::vector<OimSubsample>{full}).loss.item();
      worst = std::max(worst, std::abs(sub - ref));
    }
    return make("oim.loss_and_full_subsample", worst, o.full_precision ? 1e-13 : 1e-12, "200 states vs log-sum-exp oracle");
  }));
  for (std::size_t S : {2, 4}) {
    out.push_back(timed([&] {
      // Toy run: C = 10 identities, free unit-normalized embeddings trained
      // with Adam on the subsampled loss; the full loss must drop.
      const std::size_t C = 10, D = 8;
      Rng toy(derive_seed(o.seed, 13 + S));
      OimState state(C, D, OimConfig{0.1, 4, 0.5});
      Tensor<double> emb = random_tensor({C, D}, toy);
      std::vector<std::size_t> labels(C);
      for (std::size_t c = 0; c < C; ++c) labels[c] = c;
      auto refresh = [&](const Tensor<double>& normalized) {
        std::vector<float> row(D);
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t j = 0; j < D; ++j) row[j] = static_cast<float>(normalized.data()[c * D + j]);
          state.lut_update(c, row);
        }
      };
      auto full_loss = [&] {
        NoGradGuard<double> guard;
        return oim_loss(l2_normalize(emb), labels, state).loss.item();
      };
      {
        NoGradGuard<double> guard;
        refresh(l2_normalize(emb));
      }
      const double initial = full_loss();
      emb.set_requires_grad(true);
      Adam<double> adam({emb}, AdamConfig{});
      for (std::size_t it = 0; it < 200; ++it) {
        std::vector<OimSubsample> samples;
        for (std::size_t c = 0; c < C; ++c) samples.push_back(subsample_partition(state, c, S, derive_seed(o.seed, it * C + c)));
        Tensor<double> normalized;
        {
          GradTape<double> tape;
          normalized = l2_normalize(emb);
          tape.backward(oim_loss(normalized, labels, state, samples).loss);
        }
        adam.step(0.01);
        adam.zero_grad();
        refresh(normalized);
      }
      emb.set_requires_grad(false);
      const double final_loss = full_loss();
      char buf[96];
      std::snprintf(buf, sizeof buf, "full loss %.4f -> %.4f", initial, final_loss);
      // Error is the fraction of the initial loss retained; must be below 1.
      return make("oim.subsample_converges.S" + std::to_string(S), final_loss / initial, 1.0 - 1e-9, buf);
    }));
  }
  return out;
}

std::vector<Check> run_verify(const VerifyOptions& options, const std::function<void(const Check&)>& progress) {
  std::vector<Check> all;
  for (auto suite : {gradient_suite, composed_gradient_suite, layer_suite, vlad_suite, normalization_suite,
                     metric_suite, training_suite, oim_suite}) {
    for (Check& c : suite(options)) {
      if (progress) progress(c);
      all.push_back(std::move(c));
    }
  }
  return all;
}

std::string format_check(const Check& c) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-4s %-44s err %-10.3g tol %-8.2g %6.2fs  %s", c.passed ? "ok" : "FAIL",
                c.name.c_str(), c.error, c.tolerance, c.seconds, c.detail.c_str());
  return buf;
}

}  // namespace pv
