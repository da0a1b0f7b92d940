#include "pv/clips.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace pv {

std::vector<std::size_t> clip_starts(std::size_t frame_count, std::size_t clip_len, std::size_t overlap) {
  if (clip_len == 0 || overlap >= clip_len) {
    throw std::invalid_argument("clip_split: need clip_len > overlap >= 0 (got " + std::to_string(clip_len) + ", " +
                                std::to_string(overlap) + ")");
  }
  if (frame_count == 0) throw std::invalid_argument("clip_split: empty tracklet");
  if (frame_count <= clip_len) return {0};
  const std::size_t stride = clip_len - overlap;
  std::vector<std::size_t> starts;
  std::size_t s = 0;
  for (; s + clip_len <= frame_count; s += stride) starts.push_back(s);
  if (starts.back() + clip_len < frame_count) starts.push_back(frame_count - clip_len);
  return starts;
}

Tensor<float> extract_clip(const Tensor<float>& tracklet, std::size_t start, std::size_t clip_len) {
  if (tracklet.rank() != 4) throw ShapeError("extract_clip: expected (C, L, H, W), got " + shape_str(tracklet.shape()));
  const std::size_t C = tracklet.dim(0), L = tracklet.dim(1), H = tracklet.dim(2), W = tracklet.dim(3);
  if (start >= L) throw std::out_of_range("extract_clip: start beyond tracklet end");
  const std::size_t plane = H * W;
  Tensor<float> clip({C, clip_len, H, W});
  auto dst = clip.mutable_data();
  const auto src = tracklet.data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < clip_len; ++t) {
      const std::size_t f = (start + t) % L;
      std::copy_n(src.begin() + (c * L + f) * plane, plane, dst.begin() + (c * clip_len + t) * plane);
    }
  }
  return clip;
}

std::vector<Tensor<float>> clip_split(const Tensor<float>& tracklet, std::size_t clip_len, std::size_t overlap) {
  if (tracklet.rank() != 4) throw ShapeError("clip_split: expected (C, L, H, W), got " + shape_str(tracklet.shape()));
  std::vector<Tensor<float>> clips;
  for (std::size_t s : clip_starts(tracklet.dim(1), clip_len, overlap)) clips.push_back(extract_clip(tracklet, s, clip_len));
  return clips;
}

Tensor<float> flip_horizontal(const Tensor<float>& clip) {
  if (clip.rank() == 0) throw ShapeError("flip_horizontal: scalar input");
  const std::size_t W = clip.shape().back();
  Tensor<float> out = clip.clone();
  auto v = out.mutable_data();
  for (std::size_t row = 0; row < v.size(); row += W) std::reverse(v.begin() + row, v.begin() + row + W);
  return out;
}

FlipResult augment_flip(const Tensor<float>& clip, Rng& rng, double probability) {
  if (rng.bernoulli(probability)) return {flip_horizontal(clip), true};
  return {clip, false};
}

}  // namespace pv
