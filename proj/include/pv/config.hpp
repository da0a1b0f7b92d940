#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "pv/dataset.hpp"
#include "pv/eval.hpp"
#include "pv/model.hpp"
#include "pv/oim.hpp"
#include "pv/trainer.hpp"

namespace pv {

struct EvalConfig {
  Strategy probe = Strategy::random;
  Strategy gallery = Strategy::all;
  std::size_t repeats = 10;
  std::size_t max_rank = 20;
  std::size_t probe_camera = 0;
  std::size_t gallery_camera = 1;
  std::size_t batch = 8;  // clips per forward pass during extraction
};

/// Every setting of a run. Defaults: K=64, alpha=1000, tau=0.1, B=6, batch 15,
/// flip 0.5, Q=5000.
struct RunConfig {
  std::uint64_t seed = 1;
  SyntheticSpec dataset;
  ModelConfig model;
  OimConfig oim{0.1, 5000, 0.5};
  TrainConfig train;
  EvalConfig eval;
};

nlohmann::json to_json(const RunConfig& config);
/// Overlays `doc` on `base`. Unknown keys and ill-typed values throw
/// std::invalid_argument naming the offending key.
RunConfig apply_json(RunConfig base, const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
void save_config(const std::filesystem::path& path, const RunConfig& config);

/// Applies PV_SEED when set; throws on a malformed value.
void apply_seed_env(RunConfig& config);

/// Throws std::invalid_argument for inconsistent settings, e.g. a clip too
/// short for the backbone's pooling.
void validate(const RunConfig& config);

std::string to_string(HeadKind h);
std::string to_string(PartitionKind p);

}  // namespace pv
