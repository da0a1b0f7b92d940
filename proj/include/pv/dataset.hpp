#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pv/tensor.hpp"

namespace pv {

/// One manifest entry. identity < 0 marks an unlabeled (distractor)
/// tracklet; split is "train" or "test".
struct TrackletRecord {
  std::size_t id = 0;
  long identity = 0;
  std::size_t camera = 0;
  std::size_t frame_count = 0;
  std::string tensor_path;  // relative to the manifest directory
  std::string split = "train";
};

struct Manifest {
  std::vector<TrackletRecord> tracklets;
  std::filesystem::path root;  // directory holding the manifest

  std::filesystem::path resolve(const TrackletRecord& r) const { return root / r.tensor_path; }
  std::vector<TrackletRecord> select(const std::string& split) const;
};

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t identities = 8;
  std::size_t tracklets_per_identity = 4;
  std::size_t frames = 32;
  std::size_t height = 32;
  std::size_t width = 64;
  std::size_t cameras = 2;
  /// Extra tracklets per identity rendered for evaluation only.
  std::size_t held_out_per_identity = 0;
  /// Unlabeled identities with tracklets in the training split.
  std::size_t distractors = 0;
  std::uint64_t seed = 7;
  std::size_t clip_len = 16;

  void validate() const;
};

/// Deterministic (3, frames, height, width) clip of a body-shaped blob with a
/// per-identity hue pair and size, oscillating horizontally, seen through a
/// per-camera brightness/contrast transform. `person` indexes identities
/// first, then distractors.
Tensor<float> render_tracklet(const SyntheticSpec& spec, std::size_t person, std::size_t tracklet, std::size_t camera);

/// Writes every tracklet tensor plus manifest.json into `dir` and returns the
/// manifest.
Manifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace pv
