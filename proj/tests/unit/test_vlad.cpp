#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "pv/grad_check.hpp"
#include "pv/ops.hpp"
#include "pv/vlad.hpp"

using namespace pv;
using pv::test::random_tensor;
using pv::test::to_array;

namespace {

// Centers at least `gap` apart with descriptors within `radius` of a center.
struct Instance {
  Tensor<double> centers, descriptors;
};

Instance separated(std::size_t K, std::size_t D, std::size_t B, double gap, double radius, Rng& rng) {
  Instance inst{Tensor<double>({K, D}), Tensor<double>({B, D})};
  auto c = inst.centers.mutable_data();
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < D; ++j) c[k * D + j] = (j == k % D ? gap * double(k / D + 1) : 0.0) + rng.uniform(0, 0.01);
  }
  auto f = inst.descriptors.mutable_data();
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t k = rng.index(K);
    for (std::size_t j = 0; j < D; ++j) f[b * D + j] = c[k * D + j] + rng.uniform(-radius, radius) / std::sqrt(double(D));
  }
  return inst;
}

}  // namespace

TEST_CASE("tied parameters follow the center formula") {
  Rng rng(1);
  const auto c = random_tensor({3, 4}, rng);
  const auto p = VladParams<double>::tied(c, 7.0);
  for (std::size_t k = 0; k < 3; ++k) {
    double sq = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(p.assign_w.data()[k * 4 + j] == doctest::Approx(14.0 * c.data()[k * 4 + j]));
      sq += c.data()[k * 4 + j] * c.data()[k * 4 + j];
    }
    CHECK(p.assign_z.data()[k] == doctest::Approx(-7.0 * sq));
  }
}

TEST_CASE("soft_assign examples") {
  Rng rng(2);
  const auto f = random_tensor({5, 3}, rng);
  const auto one = soft_assign(f, random_tensor({1, 3}, rng), random_tensor({1}, rng));
  for (double v : one.data()) CHECK(v == 1.0);

  const Tensor<double> w({2, 3}, {0.5, -1, 2, 0.5, -1, 2}), z({2}, {0.3, 0.3});
  const auto half = soft_assign(f, w, z);
  for (double v : half.data()) CHECK(v == doctest::Approx(0.5));

  const auto w3 = random_tensor({3, 3}, rng), z3 = random_tensor({3}, rng);
  const auto a = soft_assign(f.cast<float>(), w3.cast<float>(), z3.cast<float>());
  for (std::size_t m = 0; m < 5; ++m) {
    double s[3], total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      double logit = z3.data()[k];
      for (std::size_t j = 0; j < 3; ++j) logit += w3.data()[k * 3 + j] * f.data()[m * 3 + j];
      total += (s[k] = std::exp(logit));
    }
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(a.data()[m * 3 + k] - s[k] / total) <= 1e-6);
  }
}

TEST_CASE("vlad_aggregate examples") {
  Rng rng(3);
  const auto c = random_tensor({1, 4}, rng);
  const auto v = vlad_aggregate(Tensor<double>({1, 4}, std::vector<double>(c.data().begin(), c.data().end())),
                                VladParams<double>::tied(c, 1.0));
  for (double x : v.data()) CHECK(x == 0.0);

  const auto big = vlad_aggregate(random_tensor({2, 6, 256}, rng).cast<float>(),
                                  VladParams<float>::tied(random_tensor({64, 256}, rng).cast<float>(), 1.0));
  CHECK(big.shape() == Shape{2, 64, 256});
  CHECK(big.numel() / 2 == 16384);
}

TEST_CASE("soft aggregation matches the hard oracle at high alpha") {
  Rng rng(4);
  double worst = 0.0;
  for (int i = 0; i < 30; ++i) {
    const std::size_t K = std::size_t{2} << (i % 3);
    const auto inst = separated(K, 8, 12, 0.5, 0.1, rng);
    const auto soft = vlad_aggregate(inst.descriptors.cast<float>(), VladParams<float>::tied(inst.centers.cast<float>(), 1000.0));
    worst = std::max(worst, test::max_abs_diff(soft.data(), oracle::hard_vlad(to_array(inst.descriptors), to_array(inst.centers)).v));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("soft aggregation matches the distance-form oracle at any alpha") {
  Rng rng(5);
  for (double alpha : {0.3, 2.0, 15.0}) {
    const auto f = random_tensor({7, 5}, rng), c = random_tensor({4, 5}, rng);
    const auto got = vlad_aggregate(f, VladParams<double>::tied(c, alpha));
    CHECK(test::max_abs_diff(got.data(), oracle::soft_vlad(to_array(f), to_array(c), alpha).v) <= 1e-12);
  }
}

TEST_CASE("hard_vlad_oracle examples") {
  const Tensor<double> c({2, 2}, {0, 0, 1, 1});
  const auto one = hard_vlad_oracle(Tensor<double>({1, 2}, {0.2, 0.1}), c);
  CHECK(one.assignment[0] == 0);
  CHECK(one.matrix.data()[0] == doctest::Approx(0.2));
  CHECK(one.matrix.data()[2] == 0.0);
  CHECK(one.matrix.data()[3] == 0.0);

  const auto same = hard_vlad_oracle(Tensor<double>({1, 2}, {1, 1}), c);
  for (double v : same.matrix.data()) CHECK(v == 0.0);

  const auto tie = hard_vlad_oracle(Tensor<double>({1, 2}, {0.5, 0.5}), c);
  CHECK(tie.tie);
  CHECK(tie.assignment[0] == 0);

  Rng rng(6);
  const auto f = random_tensor({10, 3}, rng), c4 = random_tensor({4, 3}, rng);
  const auto h = hard_vlad_oracle(f, c4);
  CHECK(test::max_abs_diff(h.matrix.data(), oracle::hard_vlad(to_array(f), to_array(c4)).v) <= 1e-15);
}

TEST_CASE("intra_normalize and flatten_l2") {
  const auto v = intra_normalize(Tensor<double>({2, 2}, {3, 4, 0, 0}));
  CHECK(v.data()[0] == doctest::Approx(0.6));
  CHECK(v.data()[1] == doctest::Approx(0.8));
  CHECK(v.data()[2] == 0.0);
  CHECK(v.data()[3] == 0.0);

  Rng rng(7);
  const auto m = random_tensor({4, 6}, rng);
  const auto n = intra_normalize(m);
  for (std::size_t k = 0; k < 4; ++k) {
    const double len = test::norm(std::vector<double>(m.data().begin() + k * 6, m.data().begin() + (k + 1) * 6));
    for (std::size_t j = 0; j < 6; ++j) CHECK(n.data()[k * 6 + j] == doctest::Approx(m.data()[k * 6 + j] / len));
  }

  const auto single = flatten_l2(Tensor<double>({1, 2}, {3, 4}));
  CHECK(single.data()[0] == doctest::Approx(0.6));
  const auto zero = flatten_l2(Tensor<float>({3, 4}));
  for (float x : zero.data()) CHECK(x == 0.0f);
  const auto flat = flatten_l2(random_tensor({2, 5, 3}, rng).cast<float>());
  CHECK(flat.shape() == Shape{2, 15});
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(test::norm(std::vector<float>(flat.data().begin() + i * 15, flat.data().begin() + (i + 1) * 15)) - 1.0) <=
          1e-5);
  }
  const auto ref = oracle::normalize_vlad(to_array(m));
  CHECK(test::max_abs_diff(flatten_l2(intra_normalize(m)).data(), ref) <= 1e-12);
}

TEST_CASE("kmeans recovers well-separated clusters") {
  Rng rng(8);
  const std::vector<std::vector<double>> truth{{5, 0}, {-5, 0}, {0, 5}};
  Tensor<double> samples({90, 2});
  for (std::size_t i = 0; i < 90; ++i) {
    for (std::size_t j = 0; j < 2; ++j) samples.mutable_data()[i * 2 + j] = truth[i % 3][j] + rng.uniform(-0.5, 0.5);
  }
  const auto c = kmeans_centers(samples, 3, 20, 11);
  for (const auto& t : truth) {
    double best = 1e9;
    for (std::size_t k = 0; k < 3; ++k) best = std::min(best, std::hypot(c.data()[k * 2] - t[0], c.data()[k * 2 + 1] - t[1]));
    CHECK(best < 0.3);
  }
  const auto again = kmeans_centers(samples, 3, 20, 11);
  CHECK(test::max_abs_diff(c.data(), again.data()) == 0.0);

  const auto few = kmeans_centers(Tensor<double>({2, 4}, 1.0), 3, 5, 1);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(test::norm(std::vector<double>(few.data().begin() + k * 4, few.data().begin() + (k + 1) * 4)) ==
          doctest::Approx(1.0));
  }
}

TEST_CASE("VLAD gradients pass grad_check in 64-bit") {
  Rng rng(9);
  const auto f = random_tensor({2, 3, 4}, rng);
  const auto p = VladParams<double>::tied(random_tensor({3, 4}, rng), 0.8);
  const auto a = softmax(random_tensor({2, 3, 3}, rng));
  GradCheckOptions o;
  o.step = 1e-5;
  auto project = [](const Tensor<double>& y) {
    Rng r(10);
    return sum(mul(y, random_tensor(y.shape(), r)));
  };
  const auto f2 = reshape(f, {6, 4});
  CHECK(grad_check([&](const auto& v) { return project(soft_assign(v, p.assign_w, p.assign_z)); }, f2, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(soft_assign(f2, v, p.assign_z)); }, p.assign_w, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(soft_assign(f2, p.assign_w, v)); }, p.assign_z, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(residual_aggregate(v, a, p.centers)); }, f, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(residual_aggregate(f, v, p.centers)); }, a, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(residual_aggregate(f, a, v)); }, p.centers, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(vlad_aggregate(v, p)); }, f, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(intra_normalize(v)); }, f, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(flatten_l2(v)); }, f, o).max_rel_error <= 1e-6);
}
