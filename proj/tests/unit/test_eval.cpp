#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "pv/eval.hpp"

using namespace pv;
namespace fs = std::filesystem;

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

std::vector<double> widen(const std::vector<float>& v) { return {v.begin(), v.end()}; }

RetrievalEntry entry(long id, std::size_t cam, std::vector<float> v) { return {id, cam, std::move(v)}; }

}  // namespace

TEST_CASE("tracklet_descriptor") {
  const std::vector<float> a{0.6f, 0.8f, 0.0f};
  CHECK(tracklet_descriptor(Tensor<float>({1, 3}, a)) == a);
  const auto same = tracklet_descriptor(Tensor<float>({2, 3}, {0.6f, 0.8f, 0.0f, 0.6f, 0.8f, 0.0f}));
  CHECK(test::max_abs_diff(same, a) <= 1e-7);
  const auto mid = tracklet_descriptor(Tensor<float>({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f}));
  CHECK(mid[0] == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(mid[1] == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK_THROWS(tracklet_descriptor(Tensor<float>()));
}

TEST_CASE("strategy_select") {
  CHECK(strategy_select(3, Strategy::all, 1) == std::vector<std::size_t>{0, 1, 2});
  CHECK(strategy_select(1, Strategy::random, 99) == std::vector<std::size_t>{0});
  CHECK(strategy_select(7, Strategy::random, 5) == strategy_select(7, Strategy::random, 5));
  std::set<std::size_t> seen;
  for (std::uint64_t s = 0; s < 64; ++s) seen.insert(strategy_select(4, Strategy::random, s).front());
  CHECK(seen.size() == 4);
  CHECK(parse_strategy("all") == Strategy::all);
  CHECK(strategy_name(Strategy::random) == "random");
  CHECK_THROWS(parse_strategy("some"));
}

TEST_CASE("rank_euclidean") {
  Rng rng(1);
  std::vector<std::vector<float>> g;
  for (int i = 0; i < 20; ++i) g.push_back(unit(8, rng));
  const auto probe = g[7];
  const auto order = rank_euclidean(probe, g);
  CHECK(order.front() == 7);

  // exhaustive oracle: sort by (distance, index)
  std::vector<std::pair<double, std::size_t>> ref;
  std::vector<std::pair<double, std::size_t>> dots;
  for (std::size_t i = 0; i < g.size(); ++i) {
    double d = 0.0, dot = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      d += (double(probe[j]) - g[i][j]) * (double(probe[j]) - g[i][j]);
      dot += double(probe[j]) * g[i][j];
    }
    ref.emplace_back(d, i);
    dots.emplace_back(-dot, i);
  }
  std::sort(ref.begin(), ref.end());
  std::sort(dots.begin(), dots.end());
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(order[i] == ref[i].second);
    CHECK(order[i] == dots[i].second);
  }

  const std::vector<std::vector<float>> tied{{1, 0}, {0, 1}, {1, 0}};
  CHECK(rank_euclidean(std::vector<float>{1, 0}, tied) == std::vector<std::size_t>{0, 2, 1});
  CHECK_THROWS(rank_euclidean(std::vector<float>{1, 0, 0}, tied));
}

TEST_CASE("CMC and AP closed forms") {
  RetrievalIndex perfect;
  for (long id = 0; id < 3; ++id) {
    std::vector<float> v(3, 0.0f);
    v[id] = 1.0f;
    perfect.probes.push_back(entry(id, 0, v));
    perfect.gallery.push_back(entry(id, 1, v));
  }
  for (double c : cmc_curve(perfect, 3)) CHECK(c == 1.0);
  CHECK(mean_ap(perfect) == 1.0);

  // one probe whose match sits at rank 3
  RetrievalIndex third;
  third.probes.push_back(entry(0, 0, {1, 0}));
  third.gallery = {entry(1, 1, {1, 0}), entry(2, 1, {0.9f, 0.1f}), entry(0, 1, {0, 1})};
  CHECK(cmc_curve(third, 4) == std::vector<double>{0, 0, 1, 1});

  // relevant items at ranks 1 and 3
  RetrievalIndex two;
  two.probes.push_back(entry(0, 0, {1, 0}));
  two.gallery = {entry(0, 1, {1, 0}), entry(1, 1, {0.9f, 0.1f}), entry(0, 1, {0.5f, 0.5f}), entry(2, 1, {0, 1})};
  CHECK(mean_ap(two) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("same identity and camera gallery entries are skipped") {
  RetrievalIndex idx;
  idx.probes.push_back(entry(0, 0, {1, 0}));
  idx.gallery = {entry(0, 0, {1, 0}), entry(1, 1, {0.9f, 0.1f}), entry(0, 1, {0.5f, 0.5f})};
  const auto r = evaluate(idx, 2);
  CHECK(r.cmc == std::vector<double>{0, 1});
  CHECK(r.map == doctest::Approx(0.5));

  RetrievalIndex orphan;
  orphan.probes = {entry(0, 0, {1, 0}), entry(5, 0, {0, 1})};
  orphan.gallery = {entry(0, 1, {1, 0})};
  const auto o = evaluate(orphan, 1);
  CHECK(o.rejected == std::vector<std::size_t>{1});
  CHECK(o.evaluated == 1);
  orphan.probes.erase(orphan.probes.begin());
  CHECK_THROWS(evaluate(orphan, 1));
}

TEST_CASE("CMC and mAP match the brute-force oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    RetrievalIndex idx;
    const std::size_t ids = 2 + rng.index(10), P = 1 + rng.index(50), G = 1 + rng.index(200);
    for (std::size_t i = 0; i < G; ++i) idx.gallery.push_back(entry(long(rng.index(ids)), rng.index(2), unit(4, rng)));
    for (std::size_t i = 0; i < P; ++i) idx.probes.push_back(entry(long(rng.index(ids)), rng.index(2), unit(4, rng)));

    std::vector<std::vector<double>> gallery;
    std::vector<long> gids;
    for (const auto& g : idx.gallery) {
      gallery.push_back(widen(g.v));
      gids.push_back(g.identity);
    }
    const std::size_t max_rank = 20;
    std::vector<double> cmc(max_rank, 0.0);
    double ap = 0.0;
    std::size_t valid = 0;
    for (const auto& p : idx.probes) {
      std::vector<bool> skip;
      for (const auto& g : idx.gallery) skip.push_back(g.identity == p.identity && g.camera == p.camera);
      const auto s = oracle::score_probe(widen(p.v), p.identity, gallery, gids, skip);
      if (!s.valid) continue;
      ++valid;
      ap += s.ap;
      for (std::size_t r = s.first_rank; r <= max_rank; ++r) cmc[r - 1] += 1.0;
    }
    if (valid == 0) {
      CHECK_THROWS(evaluate(idx, max_rank));
      continue;
    }
    const auto got = evaluate(idx, max_rank);
    CHECK(got.evaluated == valid);
    for (std::size_t r = 0; r < max_rank; ++r) CHECK(got.cmc[r] == cmc[r] / double(valid));
    CHECK(std::abs(got.map - ap / double(valid)) <= 1e-12);
    CHECK(std::is_sorted(got.cmc.begin(), got.cmc.end()));
  }
}

TEST_CASE("build_index and strategies") {
  Rng rng(3);
  std::vector<DescriptorRecord> recs;
  std::size_t tid = 0;
  for (long id = 0; id < 4; ++id) {
    for (std::size_t t = 0; t < 4; ++t) recs.push_back({id, t % 2, tid++, unit(6, rng)});
  }
  recs.push_back({-1, 1, tid++, unit(6, rng)});

  const auto all = build_index(recs, 0, 1, Strategy::all, Strategy::all, 1);
  CHECK(all.probes.size() == 4);
  CHECK(all.gallery.size() == 5);
  // averaged tracklets: mean of the two camera-0 descriptors, re-normalized
  std::vector<float> mean(6, 0.0f);
  for (std::size_t j = 0; j < 6; ++j) mean[j] = recs[0].v[j] + recs[2].v[j];
  const double len = test::norm(mean);
  for (std::size_t j = 0; j < 6; ++j) CHECK(all.probes[0].v[j] == doctest::Approx(mean[j] / len).epsilon(1e-6));

  const auto rnd = build_index(recs, 0, 1, Strategy::random, Strategy::all, 9);
  CHECK(rnd.probes.size() == 4);
  const auto again = build_index(recs, 0, 1, Strategy::random, Strategy::all, 9);
  CHECK(rnd.probes[2].v == again.probes[2].v);

  std::vector<StrategyResult> results;
  for (Strategy p : {Strategy::random, Strategy::all}) {
    for (Strategy g : {Strategy::random, Strategy::all}) results.push_back(evaluate_strategy(recs, p, g, 3, 4, 5));
  }
  CHECK(results.back().repeats == 1);
  CHECK(results.front().repeats == 3);
  const auto a = evaluate_strategy(recs, Strategy::random, Strategy::all, 1, 8, 5);
  const auto b = evaluate_strategy(recs, Strategy::random, Strategy::all, 1, 8, 5);
  CHECK(a.report.cmc == b.report.cmc);
  CHECK(a.report.map == b.report.map);
  const std::string table = format_strategy_table(results);
  CHECK(table.find("random") != std::string::npos);
  CHECK(table.find("all") != std::string::npos);
}

TEST_CASE("descriptor files round-trip") {
  const fs::path dir = fs::temp_directory_path() / "pv_unit_desc";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(4);
  const DescriptorRecord r{3, 1, 12, unit(5, rng)};
  write_descriptor(dir, r);
  write_descriptor(dir, {-1, 0, 2, unit(5, rng)});
  const auto back = read_descriptors(dir);
  REQUIRE(back.size() == 2);
  CHECK(back[0].tracklet_id == 2);
  CHECK(back[1].identity == 3);
  CHECK(back[1].camera == 1);
  CHECK(back[1].v == r.v);
}
