#pragma once

#include <cstddef>
#include <vector>

#include "pv/rng.hpp"
#include "pv/tensor.hpp"

namespace pv {

/// Window starts over a tracklet of `frame_count` frames: stride
/// clip_len - overlap, plus a tail window at frame_count - clip_len when the
/// stride overshoots. Shorter tracklets give the single start 0.
std::vector<std::size_t> clip_starts(std::size_t frame_count, std::size_t clip_len = 16, std::size_t overlap = 8);

/// (3, clip_len, H, W) window of a (3, L, H, W) tracklet; frame indices wrap
/// around so short tracklets repeat cyclically.
Tensor<float> extract_clip(const Tensor<float>& tracklet, std::size_t start, std::size_t clip_len);

std::vector<Tensor<float>> clip_split(const Tensor<float>& tracklet, std::size_t clip_len = 16,
                                      std::size_t overlap = 8);

/// Mirrors every frame left-right (last axis).
Tensor<float> flip_horizontal(const Tensor<float>& clip);

struct FlipResult {
  Tensor<float> clip;
  bool flipped = false;
};

FlipResult augment_flip(const Tensor<float>& clip, Rng& rng, double probability = 0.5);

}  // namespace pv
