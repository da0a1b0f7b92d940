#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "helpers.hpp"
#include "pv/trainer.hpp"

using namespace pv;
namespace fs = std::filesystem;

namespace {

const fs::path& data_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "pv_unit_trainer";
    fs::remove_all(d);
    SyntheticSpec s;
    s.identities = 3;
    s.tracklets_per_identity = 2;
    s.frames = 20;
    s.height = 16;
    s.width = 16;
    s.distractors = 1;
    generate_synthetic(s, d);
    return d;
  }();
  return dir;
}

const TrainingSet& data() {
  static const TrainingSet set = TrainingSet::load(read_manifest(data_dir() / "manifest.json"));
  return set;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.backbone.filters = {2, 2, 4, 4, 4};
  m.backbone.pools = {{1, 2, 2}, {2, 2, 2}, {2, 2, 2}, {1, 1, 1}, {1, 1, 1}};
  m.branches = 2;
  m.clusters = 3;
  m.alpha = 10.0;
  return m;
}

TrainConfig tiny_train(std::size_t n1, std::size_t n2) {
  TrainConfig t;
  t.batch_size = 4;
  t.step1_iterations = n1;
  t.step2_iterations = n2;
  t.kmeans_clips = 8;
  t.schedule.base_lr = 1e-3;
  t.schedule.finetune_lr = 1e-3;
  t.seed = 5;
  return t;
}

struct Run {
  std::vector<LossRecord> trace;
  NamedTensors state;
};

Run train(std::size_t n1, std::size_t n2, TrainConfig cfg, OimConfig oim_config = {0.1, 8, 0.5}) {
  cfg.step1_iterations = n1;
  cfg.step2_iterations = n2;
  PersonVladNet<float> model(tiny_model(), 3);
  OimState oim(data().identities, model.config().descriptor_dim(), oim_config);
  Run r;
  r.trace = train_two_step(model, oim, data(), cfg, Steps::both);
  r.state = model.state_dict();
  return r;
}

bool same_bits(const std::vector<LossRecord>& a, const std::vector<LossRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].iteration != b[i].iteration || std::memcmp(&a[i].loss, &b[i].loss, sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("training set labels are contiguous and distractors unlabeled") {
  const auto& d = data();
  CHECK(d.identities == 3);
  CHECK(d.tracklets.size() == 8);
  CHECK(d.labels == std::vector<long>{0, 0, 1, 1, 2, 2, -1, -1});
}

TEST_CASE("a single identity is rejected") {
  TrainingSet one;
  one.tracklets = {data().tracklets[0], data().tracklets[1]};
  one.labels = {0, 0};
  one.identities = 1;
  PersonVladNet<float> model(tiny_model(), 1);
  OimState oim(1, model.config().descriptor_dim());
  CHECK_THROWS_AS(Trainer(model, oim, one, tiny_train(1, 1)), std::invalid_argument);
  OimState wrong(2, model.config().descriptor_dim());
  CHECK_THROWS_AS(Trainer(model, wrong, data(), tiny_train(1, 1)), std::invalid_argument);
}

TEST_CASE("step 1 leaves the aggregation parameters bitwise unchanged") {
  PersonVladNet<float> model(tiny_model(), 2);
  OimState oim(data().identities, model.config().descriptor_dim());
  Trainer trainer(model, oim, data(), tiny_train(5, 5));
  trainer.init_centers();
  std::vector<std::pair<std::string, std::vector<float>>> before;
  for (const auto& p : model.parameters()) before.emplace_back(p.name, std::vector<float>(p.tensor.data().begin(), p.tensor.data().end()));
  trainer.run(Phase::step1, 5);
  std::size_t frozen = 0, moved = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto now = model.parameters()[i].tensor.data();
    const bool same = std::memcmp(now.data(), before[i].second.data(), now.size() * sizeof(float)) == 0;
    if (PersonVladNet<float>::is_vlad_parameter(before[i].first)) {
      CHECK_MESSAGE(same, before[i].first);
      ++frozen;
    } else {
      moved += same ? 0 : 1;
    }
  }
  CHECK(frozen == 3);
  CHECK(moved > 0);

  trainer.run(Phase::step2, 3, 5);
  CHECK(std::memcmp(model.vlad().centers.data().data(), before[before.size() - 3].second.data(),
                    before[before.size() - 3].second.size() * sizeof(float)) != 0);
}

TEST_CASE("fixed seed gives bitwise-identical traces and parameters") {
  const auto a = train(30, 20, tiny_train(0, 0));
  const auto b = train(30, 20, tiny_train(0, 0));
  REQUIRE(a.trace.size() == 50);
  CHECK(same_bits(a.trace, b.trace));
  for (std::size_t i = 0; i < a.state.size(); ++i) {
    const auto x = a.state[i].second.data(), y = b.state[i].second.data();
    CHECK(std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
  }
  CHECK(a.trace[29].lr == 1e-3);
  CHECK(a.trace.back().iteration == 49);
}

TEST_CASE("loss on the overfit task falls below its initial value within 200 iterations") {
  const auto r = train(50, 150, tiny_train(0, 0), {0.1, 0, 0.5});
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += r.trace[i].loss;
    tail += r.trace[r.trace.size() - 1 - i].loss;
  }
  CHECK(tail < head);
}

TEST_CASE("epsilon changes the loss trace") {
  TrainConfig small = tiny_train(0, 0);
  small.adam.epsilon = 1e-8;
  const auto a = train(10, 10, tiny_train(0, 0));
  const auto b = train(10, 10, small);
  CHECK_FALSE(same_bits(a.trace, b.trace));
}

TEST_CASE("checkpoints restore the model and OIM state") {
  PersonVladNet<float> model(tiny_model(), 4);
  OimState oim(data().identities, model.config().descriptor_dim(), {0.1, 8, 0.5});
  train_two_step(model, oim, data(), tiny_train(3, 3), Steps::both);
  const fs::path dir = fs::temp_directory_path() / "pv_unit_ckpt";
  fs::create_directories(dir);
  save_checkpoint(dir / "c.pvt", model, oim);

  PersonVladNet<float> fresh(tiny_model(), 99);
  OimState restored(data().identities, fresh.config().descriptor_dim(), {0.1, 8, 0.5});
  load_checkpoint(dir / "c.pvt", fresh, &restored);
  const Tensor<float> clip = test::random_float({1, 3, 16, 16, 16}, *std::make_unique<Rng>(1), 0.0, 1.0);
  NoGradGuard<float> guard;
  CHECK(test::max_abs_diff(model.forward(clip).descriptor.data(), fresh.forward(clip).descriptor.data()) == 0.0);
  CHECK(test::max_abs_diff(oim.table_tensor().data(), restored.table_tensor().data()) == 0.0);
  CHECK(restored.queue_size() == oim.queue_size());

  ModelConfig other = tiny_model();
  other.clusters = 4;
  PersonVladNet<float> mismatch(other, 1);
  CHECK_THROWS(load_checkpoint(dir / "c.pvt", mismatch));
}

TEST_CASE("loss CSV format") {
  const fs::path p = fs::temp_directory_path() / "pv_unit_loss.csv";
  write_loss_csv(p, {{0, 0.003, 2.5}, {1, 0.003, 0.125}});
  std::ifstream is(p);
  const std::string text{std::istreambuf_iterator<char>(is), {}};
  CHECK(text == "iteration,lr,loss\n0,0.003,2.5\n1,0.003,0.125\n");
}
