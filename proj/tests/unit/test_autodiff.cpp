#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "pv/grad_check.hpp"
#include "pv/ops.hpp"

using namespace pv;
using pv::test::random_tensor;

TEST_CASE("tensor handles share storage and clone deep-copies") {
  Tensor<float> a({2, 2}, 1.0f);
  Tensor<float> b = a;
  b.mutable_data()[0] = 5.0f;
  CHECK(a.data()[0] == 5.0f);
  Tensor<float> c = a.clone();
  c.mutable_data()[1] = 7.0f;
  CHECK(a.data()[1] == 1.0f);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST_CASE("elementwise examples") {
  const Tensor<double> a({3}, {1, 2, 3}), b({3}, {4, 5, 6});
  const auto m = mul(a, b);
  CHECK(std::vector<double>(m.data().begin(), m.data().end()) == std::vector<double>{4, 10, 18});
  const auto s = sigmoid(Tensor<double>({2}, {0, 0}));
  CHECK(s.data()[0] == 0.5);
  CHECK(s.data()[1] == 0.5);
  CHECK_THROWS_AS(add(a, Tensor<double>({2}, {1, 2})), ShapeError);
}

TEST_CASE("relu matches per-element oracle") {
  Rng rng(3);
  const auto x = random_tensor({2, 3}, rng);
  const auto y = relu(x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == std::max(0.0, x.data()[i]));
}

TEST_CASE("matmul examples and triple-loop oracle") {
  Tensor<double> eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.mutable_data()[i * 4] = 1.0;
  Rng rng(4);
  const auto x = random_tensor({3, 2}, rng);
  CHECK(test::max_abs_diff(matmul(eye, x).data(), x.data()) == 0.0);

  const auto rows = matmul(Tensor<double>({2, 2}, {1, 2, 3, 4}), Tensor<double>({2, 1}, {1, 1}));
  CHECK(rows.data()[0] == 3.0);
  CHECK(rows.data()[1] == 7.0);

  const auto a = random_tensor({4, 5}, rng).cast<float>(), b = random_tensor({5, 2}, rng).cast<float>();
  const auto c = matmul(a, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += double(a.data()[i * 5 + k]) * double(b.data()[k * 2 + j]);
      worst = std::max(worst, std::abs(s - c.data()[i * 2 + j]));
    }
  }
  CHECK(worst <= 1e-6);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("reductions") {
  const auto c = mean(Tensor<double>({2, 3, 4}, 2.5));
  CHECK(c.item() == doctest::Approx(2.5));
  CHECK(sum(Tensor<double>({3}, {1, 2, 3})).item() == 6.0);

  Rng rng(5);
  const auto x = random_tensor({3, 4}, rng);
  const auto m = reduce(Reduction::max, x, {1});
  REQUIRE(m.shape() == Shape{3});
  for (std::size_t i = 0; i < 3; ++i) {
    double best = x.data()[i * 4];
    for (std::size_t j = 1; j < 4; ++j) best = std::max(best, x.data()[i * 4 + j]);
    CHECK(m.data()[i] == best);
  }
}

TEST_CASE("softmax examples") {
  const auto eq = softmax(Tensor<double>({3}, {0.7, 0.7, 0.7}));
  for (double p : eq.data()) CHECK(p == doctest::Approx(1.0 / 3.0));
  CHECK(softmax(Tensor<double>({1}, {-42.0}), 0.3).data()[0] == 1.0);

  const auto p = softmax(Tensor<double>({3}, {1, 2, 3}), 0.1);
  const double z = std::exp(10.0) + std::exp(20.0) + std::exp(30.0);
  CHECK(p.data()[0] == doctest::Approx(std::exp(10.0) / z).epsilon(1e-12));
  CHECK(p.data()[2] == doctest::Approx(std::exp(30.0) / z).epsilon(1e-12));
}

TEST_CASE("l2_normalize examples") {
  const auto v = l2_normalize(Tensor<double>({2}, {3, 4}));
  CHECK(v.data()[0] == doctest::Approx(0.6));
  CHECK(v.data()[1] == doctest::Approx(0.8));
  const auto z = l2_normalize(Tensor<double>({4}, 0.0));
  for (double x : z.data()) CHECK(x == 0.0);
  Rng rng(6);
  const auto r = l2_normalize(random_tensor({100}, rng).cast<float>());
  CHECK(test::norm(r.data()) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("backward seeds simple gradients") {
  Rng rng(7);
  Tensor<double> x = random_tensor({2, 3}, rng);
  x.set_requires_grad();
  {
    GradTape<double> tape;
    backward(sum(x));
  }
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  {
    GradTape<double> tape;
    backward(sum(mul(x, x)));
  }
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]));
}

TEST_CASE("no-grad guard suspends recording") {
  Tensor<double> x({3}, 1.0);
  x.set_requires_grad();
  GradTape<double> tape;
  {
    NoGradGuard<double> guard;
    (void)sum(mul(x, x));
  }
  CHECK(tape.size() == 0);
  (void)sum(x);
  CHECK(tape.size() == 1);
}

TEST_CASE("composite sigmoid-matmul graph matches finite differences in 32-bit") {
  Rng rng(8);
  Tensor<float> w = random_tensor({4, 3}, rng).cast<float>();
  const Tensor<float> x = random_tensor({2, 4}, rng).cast<float>();
  w.set_requires_grad();
  {
    GradTape<float> tape;
    backward(sum(sigmoid(matmul(x, w))));
  }
  auto f = [&] {
    NoGradGuard<float> guard;
    return double(sum(sigmoid(matmul(x, w))).item());
  };
  double worst = 0.0;
  const float h = 1e-2f;
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const float keep = w.data()[i];
    w.mutable_data()[i] = keep + h;
    const double up = f();
    w.mutable_data()[i] = keep - h;
    const double down = f();
    w.mutable_data()[i] = keep;
    const double numeric = (up - down) / (2.0 * h), analytic = w.grad()[i];
    worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("grad_check examples") {
  Rng rng(9);
  const auto x = random_tensor({3, 4}, rng);
  CHECK(grad_check([](const Tensor<double>& v) { return sum(v); }, x).max_rel_error <= 1e-10);
  CHECK(grad_check([](const Tensor<double>& v) { return sum(sigmoid(v)); }, x).max_rel_error <= 1e-6);
  const auto detached = grad_check([](const Tensor<double>& v) { return sum(v.detach()); }, x);
  CHECK(detached.analytic == 0.0);
  CHECK(detached.numeric == doctest::Approx(1.0));
  CHECK(detached.max_rel_error > 0.5);
}

TEST_CASE("gradients of every basic op pass grad_check in 64-bit") {
  Rng rng(10);
  const auto x = random_tensor({3, 4}, rng, 0.1, 1.0);
  const auto w = random_tensor({3, 4}, rng);
  const auto m = random_tensor({4, 2}, rng);
  GradCheckOptions o;
  o.step = 1e-5;
  auto project = [&](const Tensor<double>& y) {
    Rng r(11);
    return sum(mul(y, random_tensor(y.shape(), r)));
  };
  CHECK(grad_check([&](const auto& v) { return project(add(v, w)); }, x, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(sub(w, v)); }, x, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(mul(v, w)); }, x, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(relu(sub(v, Tensor<double>({3, 4}, 0.55)))); }, x, o)
            .max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(exp(v)); }, x, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(matmul(v, m)); }, x, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(reduce(Reduction::mean, v, {0})); }, x, o).max_rel_error <=
        1e-6);
  CHECK(grad_check([&](const auto& v) { return project(reduce(Reduction::max, v, {1})); }, x, o).max_rel_error <=
        1e-6);
  CHECK(grad_check([&](const auto& v) { return project(softmax(v, 0.3)); }, x, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(l2_normalize(v)); }, x, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(select_rows(v, {2, 0, 2})); }, x, o).max_rel_error <= 1e-6);
  CHECK(grad_check([&](const auto& v) { return project(concat<double>({v, w}, 1)); }, x, o).max_rel_error <= 1e-6);
}

TEST_CASE("select_rows gathers and scatter-adds") {
  Tensor<double> a({3, 2}, {1, 2, 3, 4, 5, 6});
  a.set_requires_grad();
  GradTape<double> tape;
  const auto s = select_rows(a, {2, 0, 2});
  CHECK(std::vector<double>(s.data().begin(), s.data().end()) == std::vector<double>{5, 6, 1, 2, 5, 6});
  backward(sum(s));
  CHECK(std::vector<double>(a.grad().begin(), a.grad().end()) == std::vector<double>{1, 1, 0, 0, 2, 2});
  CHECK_THROWS_AS(select_rows(a, {3}), ShapeError);
}
