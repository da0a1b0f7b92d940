#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "pv/grad_check.hpp"
#include "pv/ops.hpp"
#include "pv/part_attention.hpp"

using namespace pv;
using pv::test::random_tensor;

namespace {

Linear<double> identity_linear(std::size_t d) {
  Linear<double> l{Tensor<double>({d, d}), Tensor<double>({d})};
  for (std::size_t i = 0; i < d; ++i) l.weight.mutable_data()[i * d + i] = 1.0;
  return l;
}

}  // namespace

TEST_CASE("part_map saturation and symmetry") {
  Rng rng(1);
  const auto f = random_tensor({2, 4, 2, 3, 3}, rng);
  const auto half = part_map(f, Tensor<double>({1, 4, 1, 1, 1}), Tensor<double>({1}));
  CHECK(half.shape() == Shape{2, 2, 3, 3});
  for (double v : half.data()) CHECK(v == 0.5);
  const auto off = part_map(f, Tensor<double>({1, 4, 1, 1, 1}), Tensor<double>({1}, {-20.0}));
  for (double v : off.data()) CHECK(v <= 1e-8);
}

TEST_CASE("part_map matches per-location dot-product oracle") {
  Rng rng(2);
  const std::size_t C = 256, S = 2 * 3 * 3;
  const auto f = random_tensor({1, C, 2, 3, 3}, rng);
  const auto w = random_tensor({1, C, 1, 1, 1}, rng, -0.1, 0.1);
  const Tensor<double> b({1}, {0.2});
  const auto m = part_map(f, w, b);
  for (std::size_t s = 0; s < S; ++s) {
    double z = b.data()[0];
    for (std::size_t c = 0; c < C; ++c) z += w.data()[c] * f.data()[c * S + s];
    CHECK(m.data()[s] == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-12));
  }
}

TEST_CASE("attend scales every channel by the map") {
  Rng rng(3);
  const auto f = random_tensor({2, 3, 1, 2, 2}, rng);
  CHECK(test::max_abs_diff(attend(f, Tensor<double>({2, 1, 2, 2}, 1.0)).data(), f.data()) == 0.0);
  const auto zero = attend(f, Tensor<double>({2, 1, 2, 2}));
  for (double v : zero.data()) CHECK(v == 0.0);
  CHECK(test::norm(part_descriptor(zero).data()) == 0.0);

  const auto m = random_tensor({2, 1, 2, 2}, rng, 0.0, 1.0);
  const auto a = attend(f, m);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t s = 0; s < 4; ++s) {
        CHECK(a.data()[(n * 3 + c) * 4 + s] == f.data()[(n * 3 + c) * 4 + s] * m.data()[n * 4 + s]);
      }
    }
  }
  CHECK_THROWS_AS(attend(f, Tensor<double>({2, 1, 2, 3})), ShapeError);
}

TEST_CASE("part_descriptor is the cubic mean") {
  const auto c = part_descriptor(Tensor<double>({1, 3, 2, 2, 2}, -0.75));
  for (double v : c.data()) CHECK(v == -0.75);
  Rng rng(4);
  const auto f = random_tensor({1, 2, 2, 2, 3}, rng);
  const auto d = part_descriptor(f);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < 12; ++i) s += f.data()[ch * 12 + i];
    CHECK(d.data()[ch] == doctest::Approx(s / 12).epsilon(1e-12));
  }
}

TEST_CASE("fixed region maps partition the extent") {
  CHECK(band_sizes(10, 5) == std::vector<std::size_t>{2, 2, 2, 2, 2});
  CHECK(band_sizes(11, 5) == std::vector<std::size_t>{2, 2, 2, 2, 3});

  const auto stripes = fixed_region_maps<double>(RegionMode::stripes, {1, 10, 4}, 5);
  REQUIRE(stripes.size() == 5);
  for (const auto& m : stripes) {
    double covered = 0.0;
    for (double v : m.data()) covered += v;
    CHECK(covered == 2.0 * 4.0);
  }

  const auto grid = fixed_region_maps<double>(RegionMode::grid, {2, 5, 7}, 2);
  REQUIRE(grid.size() == 4);
  std::vector<double> total(2 * 5 * 7, 0.0);
  for (const auto& m : grid) {
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += m.data()[i];
  }
  for (double v : total) CHECK(v == 1.0);
  CHECK(band_sizes(1, 5) == std::vector<std::size_t>{0, 0, 0, 0, 1});
  CHECK_THROWS(band_sizes(4, 0));
}

TEST_CASE("baseline head") {
  Rng rng(5);
  const std::size_t D = 4;
  const auto f = random_tensor({2, D, 1, 2, 2}, rng, 0.0, 1.0);
  BranchHead<double> ident{identity_linear(D), identity_linear(D)};
  const auto avg = baseline_head<double>({f}, PoolMode::avg, {ident});
  CHECK(test::max_abs_diff(avg.data(), part_descriptor(f).data()) <= 1e-15);

  const auto flat = Tensor<double>({2, D, 1, 2, 2}, 0.3);
  CHECK(test::max_abs_diff(baseline_head<double>({flat}, PoolMode::max, {ident}).data(),
                           baseline_head<double>({flat}, PoolMode::avg, {ident}).data()) == 0.0);

  std::vector<BranchHead<double>> heads;
  std::vector<Tensor<double>> parts;
  for (int b = 0; b < 6; ++b) {
    heads.push_back({Linear<double>::init(D, 128, rng), Linear<double>::init(128, 128, rng)});
    parts.push_back(f);
  }
  CHECK(baseline_head(parts, PoolMode::avg, heads).shape() == Shape{2, 768});
}

TEST_CASE("part attention gradients pass grad_check in 64-bit") {
  Rng rng(6);
  const auto f = random_tensor({2, 3, 1, 2, 2}, rng);
  const auto w = random_tensor({1, 3, 1, 1, 1}, rng);
  const auto b = random_tensor({1}, rng);
  const auto m = random_tensor({2, 1, 2, 2}, rng, 0.0, 1.0);
  GradCheckOptions o;
  o.step = 1e-5;
  auto project = [](const Tensor<double>& y) {
    Rng r(7);
    return sum(mul(y, random_tensor(y.shape(), r)));
  };
  CHECK(grad_check([&](const auto& v) { return project(part_map(v, w, b)); }, f, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(part_map(f, v, b)); }, w, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(part_map(f, w, v)); }, b, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(attend(v, m)); }, f, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(attend(f, v)); }, m, o).max_rel_error <= 1e-6);
}
