#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "pv/grad_check.hpp"
#include "pv/oim.hpp"
#include "pv/ops.hpp"

using namespace pv;
using pv::test::random_tensor;

namespace {

std::vector<float> unit(std::size_t dim, Rng& rng) {
  std::vector<float> v(dim);
  double sq = 0.0;
  for (float& x : v) {
    x = float(rng.normal());
    sq += double(x) * x;
  }
  for (float& x : v) x = float(x / std::sqrt(sq));
  return v;
}

OimState random_state(std::size_t C, std::size_t dim, std::size_t Q, Rng& rng, OimConfig cfg = {}) {
  cfg.queue_capacity = std::max(cfg.queue_capacity, Q);
  OimState s(C, dim, cfg);
  for (std::size_t i = 0; i < C; ++i) {
    s.lut_update(i, unit(dim, rng));
  }
  for (std::size_t i = 0; i < Q; ++i) s.queue_push(unit(dim, rng));
  return s;
}

std::vector<double> as_double(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("oim_probabilities examples") {
  OimState one(1, 3);
  const std::vector<double> v{0.2, 0.5, -0.1};
  CHECK(oim_probabilities(v, one).labeled == std::vector<double>{1.0});

  OimConfig cfg;
  cfg.queue_capacity = 2;
  OimState sym(3, 2, cfg);
  for (std::size_t i = 0; i < 3; ++i) sym.lut_update(i, std::vector<float>{1, 0});
  sym.queue_push(std::vector<float>{1, 0});
  sym.queue_push(std::vector<float>{1, 0});
  const auto p = oim_probabilities(std::vector<double>{0.6, 0.8}, sym);
  for (double x : p.labeled) CHECK(x == doctest::Approx(0.2));
  for (double x : p.unlabeled) CHECK(x == doctest::Approx(0.2));

  Rng rng(1);
  const auto st = random_state(3, 6, 2, rng);
  const auto u = unit(6, rng);
  const std::vector<double> x(u.begin(), u.end());
  const auto q = oim_probabilities(x, st);
  std::vector<double> logits;
  for (std::size_t i = 0; i < 3; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < 6; ++j) d += x[j] * st.table_row(i)[j];
    logits.push_back(d / 0.1);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < 6; ++j) d += x[j] * st.queue_entry(i)[j];
    logits.push_back(d / 0.1);
  }
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  for (std::size_t i = 0; i < 3; ++i) CHECK(q.labeled[i] == doctest::Approx(std::exp(logits[i]) / z).epsilon(1e-12));
  for (std::size_t i = 0; i < 2; ++i) CHECK(q.unlabeled[i] == doctest::Approx(std::exp(logits[3 + i]) / z).epsilon(1e-12));
}

TEST_CASE("probabilities sum to one on random states") {
  Rng rng(2);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto st = random_state(1 + rng.index(6), 5, rng.index(4), rng);
    const auto u = unit(5, rng);
    const auto p = oim_probabilities(as_double(u), st);
    const double total = std::accumulate(p.labeled.begin(), p.labeled.end(), 0.0) +
                         std::accumulate(p.unlabeled.begin(), p.unlabeled.end(), 0.0);
    worst = std::max(worst, std::abs(total - 1.0));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("oim_loss examples") {
  OimState one(1, 3);
  const std::vector<std::size_t> label0{0};
  CHECK(oim_loss(Tensor<double>({1, 3}, {0.1, 0.2, 0.3}), label0, one).loss.item() == doctest::Approx(0.0));

  OimConfig cfg;
  cfg.queue_capacity = 3;
  OimState flat(2, 2, cfg);
  for (std::size_t i = 0; i < 2; ++i) flat.lut_update(i, std::vector<float>{0, 1});
  for (int i = 0; i < 3; ++i) flat.queue_push(std::vector<float>{0, 1});
  CHECK(oim_loss(Tensor<double>({1, 2}, {1, 0}), label0, flat).loss.item() == doctest::Approx(std::log(5.0)));

  Rng rng(3);
  const auto st = random_state(4, 5, 3, rng);
  const auto u = unit(5, rng);
  std::vector<std::vector<double>> cols{as_double(st.table_row(2))};
  for (std::size_t i : {0, 1, 3}) cols.push_back(as_double(st.table_row(i)));
  for (std::size_t i = 0; i < 3; ++i) cols.push_back(as_double(st.queue_entry(i)));
  const std::vector<std::size_t> label2{2};
  CHECK(oim_loss(Tensor<double>({1, 5}, as_double(u)), label2, st).loss.item() ==
        doctest::Approx(oracle::oim_nll(as_double(u), cols, 0.1)).epsilon(1e-12));
  CHECK_THROWS_AS(oim_loss(Tensor<double>({1, 5}, as_double(u)), std::vector<std::size_t>{4}, st), std::out_of_range);
}

TEST_CASE("oim_loss gradient matches finite differences") {
  Rng rng(4);
  const auto st = random_state(5, 6, 4, rng);
  const std::vector<std::size_t> labels{1, 4, 1};
  const auto v = random_tensor({3, 6}, rng);
  GradCheckOptions o;
  o.step = 1e-5;
  CHECK(grad_check([&](const auto& x) { return oim_loss(x, labels, st).loss; }, v, o).max_rel_error <= 1e-6);
}

TEST_CASE("lut_update momentum") {
  OimConfig keep;
  keep.momentum = 1.0;
  OimState a(1, 2, keep);
  a.lut_update(0, std::vector<float>{1, 0});
  CHECK(a.table_row(0)[0] == 0.0f);

  OimConfig replace;
  replace.momentum = 0.0;
  OimState b(1, 2, replace);
  b.lut_update(0, std::vector<float>{0.6f, 0.8f});
  CHECK(b.table_row(0)[0] == doctest::Approx(0.6));
  CHECK(b.table_row(0)[1] == doctest::Approx(0.8));

  OimState c(1, 2);
  c.load(Tensor<float>({1, 2}, {1, 0}), {});
  c.lut_update(0, std::vector<float>{0, 1});
  CHECK(c.table_row(0)[0] == doctest::Approx(std::sqrt(0.5)));
  CHECK(c.table_row(0)[1] == doctest::Approx(std::sqrt(0.5)));

  OimState d(1, 2, keep);
  d.load(Tensor<float>({1, 2}, {0.6f, 0.8f}), {});
  d.lut_update(0, std::vector<float>{1, 0});
  CHECK(d.table_row(0)[0] == doctest::Approx(0.6));
}

TEST_CASE("queue is a bounded FIFO") {
  OimConfig cfg;
  cfg.queue_capacity = 2;
  OimState s(1, 1, cfg);
  for (float x : {1.0f, 2.0f, 3.0f}) s.queue_push(std::vector<float>{x});
  REQUIRE(s.queue_size() == 2);
  CHECK(s.queue_entry(0)[0] == 2.0f);
  CHECK(s.queue_entry(1)[0] == 3.0f);

  cfg.queue_capacity = 0;
  OimState none(1, 1, cfg);
  none.queue_push(std::vector<float>{1.0f});
  CHECK(none.queue_size() == 0);

  Rng rng(5);
  cfg.queue_capacity = 4;
  OimState r(1, 3, cfg);
  std::vector<std::vector<float>> pushed;
  for (int i = 0; i < 7; ++i) {
    pushed.push_back(unit(3, rng));
    r.queue_push(pushed.back());
  }
  REQUIRE(r.queue_size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto e = r.queue_entry(i);
    CHECK(std::vector<float>(e.begin(), e.end()) == pushed[3 + i]);
  }
}

TEST_CASE("subsample_partition") {
  Rng rng(6);
  const auto st = random_state(10, 4, 3, rng);
  const auto u = as_double(unit(4, rng));

  const auto full = subsample_partition(st, 3, 13, 1);
  const std::vector<std::size_t> label{3};
  const std::vector<OimSubsample> samples{full};
  CHECK(std::abs(oim_loss(Tensor<double>({1, 4}, u), label, st, samples).loss.item() -
                 oim_loss(Tensor<double>({1, 4}, u), label, st).loss.item()) <= 1e-12);

  const auto single = subsample_partition(st, 3, 1, 1);
  CHECK(single.size() == 1);
  CHECK(oim_probabilities(u, st, single).labeled == std::vector<double>{1.0});

  // replay of the sampler: partial Fisher-Yates over [others..., queue...]
  const auto s = subsample_partition(st, 3, 5, 42);
  std::vector<std::size_t> pool;
  for (std::size_t j = 0; j < 10; ++j) {
    if (j != 3) pool.push_back(j);
  }
  for (std::size_t i = 0; i < 3; ++i) pool.push_back(10 + i);
  Rng replay(42);
  std::vector<std::size_t> labeled{3}, unlabeled;
  for (std::size_t k = 0; k < 4; ++k) {
    std::swap(pool[k], pool[k + replay.index(pool.size() - k)]);
    (pool[k] < 10 ? labeled : unlabeled).push_back(pool[k] < 10 ? pool[k] : pool[k] - 10);
  }
  CHECK(s.labeled == labeled);
  CHECK(s.unlabeled == unlabeled);

  std::set<std::size_t> distinct(s.labeled.begin(), s.labeled.end());
  CHECK(distinct.size() == s.labeled.size());
  CHECK_THROWS(subsample_partition(st, 3, 0, 1));
}

TEST_CASE("state construction is validated") {
  CHECK_THROWS(OimState(0, 4));
  CHECK_THROWS(OimState(2, 0));
  CHECK_THROWS(OimState(2, 4, {0.0, 4, 0.5}));
  CHECK_THROWS(OimState(2, 4, {0.1, 4, 1.5}));
  OimState s(2, 3);
  CHECK_THROWS_AS(s.load(Tensor<float>({3, 3}), {}), ShapeError);
}
