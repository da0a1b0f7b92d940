#include "pv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <stdexcept>

#include "pv/rng.hpp"
#include "pv/tensor_io.hpp"

namespace pv {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<TrackletRecord> Manifest::select(const std::string& split) const {
  std::vector<TrackletRecord> out;
  for (const auto& r : tracklets) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  json doc;
  doc["tracklets"] = json::array();
  for (const auto& r : manifest.tracklets) {
    doc["tracklets"].push_back({{"id", r.id},
                                {"identity", r.identity},
                                {"camera", r.camera},
                                {"frame_count", r.frame_count},
                                {"tensor_path", r.tensor_path},
                                {"split", r.split}});
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest " + path.string());
  os << doc.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing manifest " + path.string());
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  try {
    const json doc = json::parse(is);
    for (const auto& e : doc.at("tracklets")) {
      TrackletRecord r;
      r.id = e.at("id").get<std::size_t>();
      r.identity = e.at("identity").get<long>();
      r.camera = e.at("camera").get<std::size_t>();
      r.frame_count = e.at("frame_count").get<std::size_t>();
      r.tensor_path = e.at("tensor_path").get<std::string>();
      r.split = e.value("split", std::string("train"));
      m.tracklets.push_back(std::move(r));
    }
  } catch (const json::exception& ex) {
    throw std::runtime_error("malformed manifest " + path.string() + ": " + ex.what());
  }
  return m;
}

void SyntheticSpec::validate() const {
  if (identities < 2) throw std::invalid_argument("synthetic dataset needs at least 2 identities");
  if (tracklets_per_identity < 2) throw std::invalid_argument("synthetic dataset needs at least 2 tracklets per identity");
  if (frames < clip_len) {
    throw std::invalid_argument("synthetic tracklets need at least " + std::to_string(clip_len) + " frames");
  }
  if (cameras == 0) throw std::invalid_argument("synthetic dataset needs at least one camera");
  if (height < 8 || width < 8) throw std::invalid_argument("synthetic frames must be at least 8x8");
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = (h - std::floor(h)) * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Appearance {
  Rgb upper, lower;
  double half_width;  // torso half-width, fraction of frame width
  double height;      // body height, fraction of frame height
  double amplitude;   // oscillation amplitude, fraction of frame width
  double period;      // frames
};

Appearance appearance(const SyntheticSpec& spec, std::size_t person) {
  Rng rng(derive_seed(spec.seed, person));
  const double people = static_cast<double>(spec.identities + spec.distractors);
  const double hue = (static_cast<double>(person) + 0.5) / people;
  Appearance a;
  a.upper = hsv(hue, rng.uniform(0.65, 0.95), rng.uniform(0.75, 0.95));
  a.lower = hsv(hue + rng.uniform(0.3, 0.7), rng.uniform(0.4, 0.9), rng.uniform(0.35, 0.7));
  a.half_width = rng.uniform(0.06, 0.11);
  a.height = rng.uniform(0.75, 0.92);
  a.amplitude = rng.uniform(0.08, 0.2);
  a.period = rng.uniform(6.0, 14.0);
  return a;
}

}  // namespace

Tensor<float> render_tracklet(const SyntheticSpec& spec, std::size_t person, std::size_t tracklet, std::size_t camera) {
  const Appearance a = appearance(spec, person);
  Rng rng(derive_seed(derive_seed(spec.seed, person), 1000 + tracklet));
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double shift = rng.uniform(-0.1, 0.1);

  const double cams = static_cast<double>(spec.cameras);
  const double brightness = 0.16 * (static_cast<double>(camera) - (cams - 1.0) / 2.0) / std::max(1.0, cams - 1.0);
  const double contrast = camera % 2 == 0 ? 1.0 : 0.85;
  const double background = 0.3 + 0.25 * static_cast<double>(camera) / std::max(1.0, cams - 1.0);

  const std::size_t L = spec.frames, H = spec.height, W = spec.width;
  // Static background texture per tracklet.
  std::vector<double> texture(H * W);
  for (double& t : texture) t = background + 0.05 * rng.normal();

  Tensor<float> out({3, L, H, W});
  auto px = out.mutable_data();
  const double Hd = static_cast<double>(H), Wd = static_cast<double>(W);
  const double top = (1.0 - a.height) * Hd * 0.5;
  const double bottom = top + a.height * Hd;
  const double head = top + 0.15 * a.height * Hd;
  const double waist = top + 0.55 * a.height * Hd;
  for (std::size_t t = 0; t < L; ++t) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(t) / a.period + phase;
    const double cx = Wd * (0.5 + shift + a.amplitude * std::sin(angle));
    const double stride = 0.5 + 0.5 * std::abs(std::cos(angle));
    for (std::size_t y = 0; y < H; ++y) {
      const double yc = static_cast<double>(y) + 0.5;
      for (std::size_t x = 0; x < W; ++x) {
        const double dx = std::abs(static_cast<double>(x) + 0.5 - cx) / Wd;
        Rgb c{texture[y * W + x], texture[y * W + x], texture[y * W + x]};
        if (yc >= top && yc < head) {
          const double r = (head - top) * 0.5;
          const double dy = yc - (top + r);
          if (dx * dx * Wd * Wd + dy * dy <= r * r) c = {0.85, 0.7, 0.6};
        } else if (yc >= head && yc < waist) {
          if (dx <= a.half_width) c = a.upper;
        } else if (yc >= waist && yc < bottom) {
          const double spread = a.half_width * (0.6 + 0.6 * stride * (yc - waist) / (bottom - waist));
          if (dx <= spread) c = a.lower;
        }
        const double noise[3] = {rng.normal(), rng.normal(), rng.normal()};
        const double rgb[3] = {c.r, c.g, c.b};
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double v = contrast * (rgb[ch] - 0.5) + 0.5 + brightness + 0.02 * noise[ch];
          px[((ch * L + t) * H + y) * W + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

Manifest generate_synthetic(const SyntheticSpec& spec, const fs::path& dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(dir / "tracklets", ec);
  if (ec) throw std::runtime_error("cannot create " + (dir / "tracklets").string() + ": " + ec.message());

  Manifest m;
  m.root = dir;
  auto emit = [&](std::size_t person, long identity, std::size_t t, const std::string& split) {
    TrackletRecord r;
    r.id = m.tracklets.size();
    r.identity = identity;
    r.camera = t % spec.cameras;
    r.frame_count = spec.frames;
    r.split = split;
    char name[32];
    std::snprintf(name, sizeof name, "t%05zu.pvt", r.id);
    r.tensor_path = std::string("tracklets/") + name;
    save_tensor(dir / r.tensor_path, render_tracklet(spec, person, t, r.camera));
    m.tracklets.push_back(std::move(r));
  };
  for (std::size_t p = 0; p < spec.identities; ++p) {
    for (std::size_t t = 0; t < spec.tracklets_per_identity + spec.held_out_per_identity; ++t) {
      emit(p, static_cast<long>(p), t, t < spec.tracklets_per_identity ? "train" : "test");
    }
  }
  for (std::size_t d = 0; d < spec.distractors; ++d) {
    for (std::size_t t = 0; t < spec.tracklets_per_identity; ++t) emit(spec.identities + d, -1, t, "train");
  }
  write_manifest(dir / "manifest.json", m);
  return m;
}

}  // namespace pv
