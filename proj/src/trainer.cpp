#include "pv/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "pv/clips.hpp"
#include "pv/ops.hpp"
#include "pv/tensor_io.hpp"

namespace pv {

TrainingSet TrainingSet::load(const Manifest& manifest, const std::string& split) {
  TrainingSet set;
  std::set<long> ids;
  const auto records = manifest.select(split);
  for (const auto& r : records) {
    if (r.identity >= 0) ids.insert(r.identity);
  }
  std::map<long, long> label_of;
  for (long id : ids) label_of.emplace(id, static_cast<long>(label_of.size()));
  for (const auto& r : records) {
    Tensor<float> t = load_tensor(manifest.resolve(r));
    if (t.rank() != 4 || t.dim(0) != 3) {
      throw ShapeError("tracklet " + std::to_string(r.id) + " has shape " + shape_str(t.shape()) +
                       ", expected (3, L, H, W)");
    }
    set.tracklets.push_back(std::move(t));
    set.labels.push_back(r.identity >= 0 ? label_of.at(r.identity) : -1);
  }
  set.identities = ids.size();
  return set;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (clip_len == 0 || overlap >= clip_len) throw std::invalid_argument("need clip_len > overlap >= 0");
  if (flip_probability < 0.0 || flip_probability > 1.0) throw std::invalid_argument("flip probability must lie in [0,1]");
  if (!(schedule.base_lr > 0.0) || !(schedule.finetune_lr > 0.0)) {
    throw std::invalid_argument("learning rates must be positive");
  }
  adam.validate();
}

Trainer::Trainer(PersonVladNet<float>& model, OimState& oim, const TrainingSet& data, TrainConfig config)
    : model_(model), oim_(oim), data_(data), config_(config) {
  config_.validate();
  if (data_.identities < 2) {
    throw std::invalid_argument("training needs at least 2 labeled identities, dataset has " +
                                std::to_string(data_.identities));
  }
  if (oim_.identities() != data_.identities) {
    throw std::invalid_argument("OIM table has " + std::to_string(oim_.identities()) + " identities, dataset has " +
                                std::to_string(data_.identities));
  }
  if (oim_.dim() != model_.config().descriptor_dim()) {
    throw std::invalid_argument("OIM table width does not match the descriptor length");
  }
  for (std::size_t t = 0; t < data_.tracklets.size(); ++t) {
    for (std::size_t s : clip_starts(data_.tracklets[t].dim(1), config_.clip_len, config_.overlap)) {
      clips_.push_back({t, s});
    }
  }
}

Tensor<float> Trainer::batch(const std::vector<std::size_t>& picks, Rng* flips) const {
  std::vector<Tensor<float>> clips;
  clips.reserve(picks.size());
  for (std::size_t i : picks) {
    Tensor<float> c = extract_clip(data_.tracklets[clips_[i].tracklet], clips_[i].start, config_.clip_len);
    if (flips) c = augment_flip(c, *flips, config_.flip_probability).clip;
    clips.push_back(std::move(c));
  }
  const Shape& s = clips.front().shape();
  Tensor<float> out({clips.size(), s[0], s[1], s[2], s[3]});
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < clips.size(); ++i) {
    std::copy(clips[i].data().begin(), clips[i].data().end(), dst.begin() + i * clips[i].numel());
  }
  return out;
}

void Trainer::init_centers() {
  if (model_.config().head != HeadKind::vlad) return;
  NoGradGuard<float> no_grad;
  std::vector<std::size_t> order(clips_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(config_.seed, 5));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  order.resize(std::min(order.size(), std::max<std::size_t>(config_.kmeans_clips, 1)));

  const std::size_t D = model_.config().feature_dim();
  std::vector<double> samples;
  for (std::size_t first = 0; first < order.size(); first += config_.batch_size) {
    const std::vector<std::size_t> picks(order.begin() + first,
                                         order.begin() + std::min(order.size(), first + config_.batch_size));
    const auto out = model_.forward(batch(picks, nullptr));
    for (float v : out.parts.data()) samples.push_back(v);
  }
  const std::size_t M = samples.size() / D;
  const Tensor<double> centers =
      kmeans_centers(Tensor<double>({M, D}, std::move(samples)), model_.config().clusters, config_.kmeans_iterations,
                     derive_seed(config_.seed, 6));
  model_.set_centers(centers.cast<float>());
}

std::vector<LossRecord> Trainer::run(Phase phase, std::size_t iterations, std::size_t first_iteration,
                                     const ProgressFn& progress) {
  const std::uint64_t stream = phase == Phase::step1 ? 1 : 2;
  Rng order(derive_seed(config_.seed, 10 + stream));
  Rng flips(derive_seed(config_.seed, 20 + stream));
  const std::uint64_t subsample_seed = derive_seed(config_.seed, 30 + stream);

  std::vector<Tensor<float>> trainable;
  for (const auto& p : model_.parameters()) {
    Tensor<float> t = p.tensor;
    const bool frozen = phase == Phase::step1 && PersonVladNet<float>::is_vlad_parameter(p.name);
    t.set_requires_grad(!frozen);
    t.zero_grad();
    if (!frozen) trainable.push_back(t);
  }
  Adam<float> adam(trainable, config_.adam);

  std::vector<std::size_t> perm(clips_.size());
  std::size_t cursor = perm.size();
  std::vector<LossRecord> trace;
  trace.reserve(iterations);
  for (std::size_t it = 0; it < iterations; ++it) {
    const std::size_t iteration = first_iteration + it;
    std::vector<std::size_t> picks;
    for (std::size_t b = 0; b < config_.batch_size; ++b) {
      if (cursor == perm.size()) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[order.index(i)]);
        cursor = 0;
      }
      picks.push_back(perm[cursor++]);
    }

    std::vector<std::size_t> rows, labels;
    for (std::size_t r = 0; r < picks.size(); ++r) {
      const long label = data_.labels[clips_[picks[r]].tracklet];
      if (label >= 0) {
        rows.push_back(r);
        labels.push_back(static_cast<std::size_t>(label));
      }
    }

    const double lr = config_.schedule(phase, phase == Phase::step1 ? iteration : it);
    LossRecord record{iteration, lr, 0.0};
    Tensor<float> descriptors;
    {
      GradTape<float> tape;
      descriptors = model_.forward(batch(picks, &flips)).descriptor;
      if (!rows.empty()) {
        const Tensor<float> labeled = rows.size() == picks.size() ? descriptors : select_rows(descriptors, rows);
        std::vector<OimSubsample> samples;
        if (config_.oim_sample_size > 0) {
          for (std::size_t r = 0; r < labels.size(); ++r) {
            samples.push_back(subsample_partition(oim_, labels[r], config_.oim_sample_size,
                                                  derive_seed(subsample_seed, iteration * config_.batch_size + r)));
          }
        }
        const OimLoss<float> loss = oim_loss<float>(labeled, labels, oim_, samples);
        clamped_ = clamped_ || loss.clamped;
        record.loss = static_cast<double>(loss.loss.item());
        tape.backward(loss.loss);
        adam.step(lr);
      }
      adam.zero_grad();
    }

    // Memory updates use the features computed before this step's update.
    const std::size_t dim = oim_.dim();
    for (std::size_t r = 0; r < picks.size(); ++r) {
      const auto v = descriptors.data().subspan(r * dim, dim);
      const long label = data_.labels[clips_[picks[r]].tracklet];
      if (label >= 0) {
        oim_.lut_update(static_cast<std::size_t>(label), v);
      } else {
        oim_.queue_push(v);
      }
    }
    trace.push_back(record);
    if (progress) progress(phase, record);
  }
  for (const auto& p : model_.parameters()) {
    Tensor<float> t = p.tensor;
    t.set_requires_grad(false);
    t.zero_grad();
  }
  return trace;
}

std::vector<LossRecord> train_two_step(PersonVladNet<float>& model, OimState& oim, const TrainingSet& data,
                                       const TrainConfig& config, Steps steps, bool init_centers,
                                       const ProgressFn& progress) {
  Trainer trainer(model, oim, data, config);
  std::vector<LossRecord> trace;
  if (steps != Steps::second) {
    if (init_centers) trainer.init_centers();
    trace = trainer.run(Phase::step1, config.step1_iterations, 0, progress);
  }
  if (steps != Steps::first) {
    auto tail = trainer.run(Phase::step2, config.step2_iterations, trace.size(), progress);
    trace.insert(trace.end(), tail.begin(), tail.end());
  }
  return trace;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "iteration,lr,loss\n";
  char line[96];
  for (const auto& r : trace) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g\n", r.iteration, r.lr, r.loss);
    os << line;
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const PersonVladNet<float>& model, const OimState& oim) {
  NamedTensors entries = model.state_dict();
  entries.emplace_back("oim.table", oim.table_tensor());
  if (oim.queue_size() > 0) entries.emplace_back("oim.queue", oim.queue_tensor());
  entries.emplace_back("oim.tau", Tensor<float>({1}, std::vector<float>{static_cast<float>(oim.temperature())}));
  save_archive(path, entries);
}

NamedTensors load_checkpoint(const std::filesystem::path& path, PersonVladNet<float>& model, OimState* oim) {
  NamedTensors entries = load_archive(path);
  model.load_state_dict(entries);
  if (oim) {
    const Tensor<float>* table = nullptr;
    const Tensor<float>* queue = nullptr;
    for (const auto& [name, t] : entries) {
      if (name == "oim.table") table = &t;
      if (name == "oim.queue") queue = &t;
    }
    if (table && table->rank() == 2 && table->dim(0) == oim->identities() && table->dim(1) == oim->dim()) {
      oim->load(*table, queue ? *queue : Tensor<float>{});
    }
  }
  return entries;
}

}  // namespace pv
