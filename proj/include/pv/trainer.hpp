#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "pv/dataset.hpp"
#include "pv/model.hpp"
#include "pv/oim.hpp"
#include "pv/optim.hpp"

namespace pv {

/// Tracklets held in memory with contiguous training labels; unlabeled
/// tracklets carry label -1.
struct TrainingSet {
  std::vector<Tensor<float>> tracklets;  // (3, L, H, W)
  std::vector<long> labels;
  std::size_t identities = 0;

  static TrainingSet load(const Manifest& manifest, const std::string& split = "train");
};

struct TrainConfig {
  std::size_t batch_size = 15;
  std::size_t step1_iterations = 50000;
  std::size_t step2_iterations = 10000;
  LrSchedule schedule;
  AdamConfig adam;
  double flip_probability = 0.5;
  std::size_t clip_len = 16;
  std::size_t overlap = 8;
  /// Entries in the OIM denominator per sample; 0 uses all of them.
  std::size_t oim_sample_size = 0;
  std::size_t kmeans_iterations = 10;
  /// Clips whose part descriptors seed the k-means center initialization.
  std::size_t kmeans_clips = 64;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LossRecord {
  std::size_t iteration = 0;
  double lr = 0.0;
  double loss = 0.0;
};

using ProgressFn = std::function<void(Phase, const LossRecord&)>;

/// Drives the two optimization phases over one model and OIM state. The
/// batch order, flips and OIM subsamples are functions of the seed only.
class Trainer {
 public:
  Trainer(PersonVladNet<float>& model, OimState& oim, const TrainingSet& data, TrainConfig config);

  /// Replaces the VLAD centers by k-means over part descriptors of training
  /// clips under the current backbone, and re-ties the assignment.
  void init_centers();

  /// Runs `iterations` steps of the given phase. Step 1 freezes the VLAD
  /// parameters; step 2 trains everything. Iteration numbers continue from
  /// `first_iteration`.
  std::vector<LossRecord> run(Phase phase, std::size_t iterations, std::size_t first_iteration = 0,
                              const ProgressFn& progress = {});

  /// Whether any OIM label probability fell under the clamp floor so far.
  bool clamped() const { return clamped_; }

 private:
  struct ClipRef {
    std::size_t tracklet;
    std::size_t start;
  };

  Tensor<float> batch(const std::vector<std::size_t>& picks, Rng* flips) const;

  PersonVladNet<float>& model_;
  OimState& oim_;
  const TrainingSet& data_;
  TrainConfig config_;
  std::vector<ClipRef> clips_;
  bool clamped_ = false;
};

enum class Steps { first, second, both };

/// Step 1 (with k-means center initialization when `init_centers`) followed
/// by step 2, as selected. Returns the concatenated loss trace.
std::vector<LossRecord> train_two_step(PersonVladNet<float>& model, OimState& oim, const TrainingSet& data,
                                       const TrainConfig& config, Steps steps, bool init_centers = true,
                                       const ProgressFn& progress = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& trace);

/// Model parameters plus OIM table, queue and temperature in one archive.
void save_checkpoint(const std::filesystem::path& path, const PersonVladNet<float>& model, const OimState& oim);
/// Loads model parameters; restores the OIM state when `oim` is non-null and
/// its table shape matches. Returns the archive for further inspection.
NamedTensors load_checkpoint(const std::filesystem::path& path, PersonVladNet<float>& model, OimState* oim = nullptr);

}  // namespace pv
