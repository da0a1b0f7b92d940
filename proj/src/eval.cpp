#include "pv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "pv/clips.hpp"
#include "pv/ops.hpp"
#include "pv/rng.hpp"
#include "pv/tensor_io.hpp"

namespace pv {

namespace fs = std::filesystem;

std::vector<float> tracklet_descriptor(const Tensor<float>& clip_descriptors) {
  if (!clip_descriptors.defined() || clip_descriptors.rank() != 2 || clip_descriptors.dim(0) == 0) {
    throw std::invalid_argument("tracklet_descriptor: need at least one clip descriptor");
  }
  const std::size_t M = clip_descriptors.dim(0), D = clip_descriptors.dim(1);
  std::vector<double> mean(D, 0.0);
  const auto x = clip_descriptors.data();
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t j = 0; j < D; ++j) mean[j] += x[m * D + j];
  }
  double sq = 0.0;
  for (double& v : mean) {
    v /= static_cast<double>(M);
    sq += v * v;
  }
  const double denom = std::max(std::sqrt(sq), kNormEpsilon);
  std::vector<float> out(D);
  for (std::size_t j = 0; j < D; ++j) out[j] = static_cast<float>(mean[j] / denom);
  return out;
}

std::vector<float> extract_descriptor(const PersonVladNet<float>& model, const Tensor<float>& tracklet,
                                      std::size_t clip_len, std::size_t overlap, std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("extract_descriptor: batch must be positive");
  NoGradGuard<float> no_grad;
  const std::vector<Tensor<float>> clips = clip_split(tracklet, clip_len, overlap);
  const std::size_t dim = model.config().descriptor_dim();
  Tensor<float> all({clips.size(), dim});
  auto dst = all.mutable_data();
  for (std::size_t first = 0; first < clips.size(); first += batch) {
    const std::size_t n = std::min(batch, clips.size() - first);
    const Shape& s = clips[first].shape();
    Tensor<float> x({n, s[0], s[1], s[2], s[3]});
    auto xs = x.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(clips[first + i].data().begin(), clips[first + i].data().end(), xs.begin() + i * clips[first + i].numel());
    }
    const Tensor<float> d = model.forward(x).descriptor;
    std::copy(d.data().begin(), d.data().end(), dst.begin() + first * dim);
  }
  return tracklet_descriptor(all);
}

std::vector<std::size_t> strategy_select(std::size_t count, Strategy mode, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("strategy_select: identity has no tracklets");
  if (mode == Strategy::random) {
    Rng rng(seed);
    return {rng.index(count)};
  }
  std::vector<std::size_t> all(count);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

namespace {

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = static_cast<double>(a[j]) - static_cast<double>(b[j]);
    s += d * d;
  }
  return s;
}

// Orders the candidate gallery indices by distance to the probe, ties by index.
std::vector<std::size_t> rank_subset(std::span<const float> probe, const std::vector<RetrievalEntry>& gallery,
                                     std::vector<std::size_t> candidates) {
  std::vector<double> dist(gallery.size(), 0.0);
  for (std::size_t g : candidates) {
    if (gallery[g].v.size() != probe.size()) {
      throw ShapeError("rank_euclidean: probe has dim " + std::to_string(probe.size()) + ", gallery entry " +
                       std::to_string(g) + " has " + std::to_string(gallery[g].v.size()));
    }
    dist[g] = squared_distance(probe, gallery[g].v);
  }
  std::sort(candidates.begin(), candidates.end(),
            [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
  return candidates;
}

}  // namespace

std::vector<std::size_t> rank_euclidean(std::span<const float> probe, const std::vector<std::vector<float>>& gallery) {
  std::vector<RetrievalEntry> entries(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) entries[i].v = gallery[i];
  std::vector<std::size_t> all(gallery.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return rank_subset(probe, entries, std::move(all));
}

MetricReport evaluate(const RetrievalIndex& index, std::size_t max_rank) {
  if (max_rank == 0) throw std::invalid_argument("evaluate: max_rank must be positive");
  MetricReport report;
  report.cmc.assign(max_rank, 0.0);
  for (std::size_t p = 0; p < index.probes.size(); ++p) {
    const RetrievalEntry& probe = index.probes[p];
    std::vector<std::size_t> candidates;
    bool has_match = false;
    for (std::size_t g = 0; g < index.gallery.size(); ++g) {
      const RetrievalEntry& e = index.gallery[g];
      if (e.identity == probe.identity && e.camera == probe.camera) continue;
      candidates.push_back(g);
      has_match = has_match || e.identity == probe.identity;
    }
    if (!has_match) {
      report.rejected.push_back(p);
      continue;
    }
    const std::vector<std::size_t> ranking = rank_subset(probe.v, index.gallery, std::move(candidates));
    std::size_t hits = 0, first = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < ranking.size(); ++r) {
      if (index.gallery[ranking[r]].identity != probe.identity) continue;
      if (hits++ == 0) first = r;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    for (std::size_t n = first; n < max_rank; ++n) report.cmc[n] += 1.0;
    report.map += ap / static_cast<double>(hits);
    ++report.evaluated;
  }
  if (report.evaluated == 0) throw std::invalid_argument("evaluate: no probe has a cross-camera match in the gallery");
  for (double& c : report.cmc) c /= static_cast<double>(report.evaluated);
  report.map /= static_cast<double>(report.evaluated);
  return report;
}

void write_descriptor(const fs::path& dir, const DescriptorRecord& record) {
  char stem[32];
  std::snprintf(stem, sizeof stem, "d%05zu", record.tracklet_id);
  save_tensor(dir / (std::string(stem) + ".pvt"), Tensor<float>({record.v.size()}, record.v));
  nlohmann::json side{{"identity", record.identity}, {"camera", record.camera}, {"tracklet_id", record.tracklet_id}};
  std::ofstream os(dir / (std::string(stem) + ".json"));
  os << side.dump() << '\n';
  if (!os) throw std::runtime_error("cannot write descriptor sidecar in " + dir.string());
}

std::vector<DescriptorRecord> read_descriptors(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("descriptor directory " + dir.string() + " does not exist");
  std::vector<DescriptorRecord> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json" || entry.path().stem().string().rfind('d', 0) != 0) continue;
    std::ifstream is(entry.path());
    DescriptorRecord r;
    try {
      const auto side = nlohmann::json::parse(is);
      r.identity = side.at("identity").get<long>();
      r.camera = side.at("camera").get<std::size_t>();
      r.tracklet_id = side.at("tracklet_id").get<std::size_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw std::runtime_error("malformed sidecar " + entry.path().string() + ": " + ex.what());
    }
    fs::path tensor = entry.path();
    tensor.replace_extension(".pvt");
    const Tensor<float> v = load_tensor(tensor);
    r.v.assign(v.data().begin(), v.data().end());
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.tracklet_id < b.tracklet_id; });
  if (out.empty()) throw std::runtime_error("no descriptors found in " + dir.string());
  return out;
}

namespace {

RetrievalEntry combine(const std::vector<const DescriptorRecord*>& group, Strategy mode, std::uint64_t seed) {
  const std::vector<std::size_t> picks = strategy_select(group.size(), mode, seed);
  const std::size_t D = group.front()->v.size();
  Tensor<float> stacked({picks.size(), D});
  auto dst = stacked.mutable_data();
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const auto& v = group[picks[i]]->v;
    if (v.size() != D) throw ShapeError("descriptors of differing length in one identity");
    std::copy(v.begin(), v.end(), dst.begin() + i * D);
  }
  RetrievalEntry e;
  e.identity = group.front()->identity;
  e.camera = group.front()->camera;
  e.v = picks.size() == 1 ? group[picks[0]]->v : tracklet_descriptor(stacked);
  return e;
}

}  // namespace

RetrievalIndex build_index(const std::vector<DescriptorRecord>& records, std::size_t probe_camera,
                           std::size_t gallery_camera, Strategy probe, Strategy gallery, std::uint64_t seed) {
  if (probe_camera == gallery_camera) throw std::invalid_argument("probe and gallery cameras must differ");
  std::map<long, std::vector<const DescriptorRecord*>> probes, galleries;
  RetrievalIndex index;
  for (const auto& r : records) {
    if (r.camera == probe_camera && r.identity >= 0) probes[r.identity].push_back(&r);
    if (r.camera != gallery_camera) continue;
    if (r.identity >= 0) {
      galleries[r.identity].push_back(&r);
    } else {
      index.gallery.push_back({r.identity, r.camera, r.v});
    }
  }
  for (const auto& [id, group] : probes) {
    index.probes.push_back(combine(group, probe, derive_seed(seed, static_cast<std::uint64_t>(id) * 2)));
  }
  for (const auto& [id, group] : galleries) {
    index.gallery.push_back(combine(group, gallery, derive_seed(seed, static_cast<std::uint64_t>(id) * 2 + 1)));
  }
  return index;
}

StrategyResult evaluate_strategy(const std::vector<DescriptorRecord>& records, Strategy probe, Strategy gallery,
                                 std::size_t repeats, std::uint64_t seed, std::size_t max_rank,
                                 std::size_t probe_camera, std::size_t gallery_camera) {
  if (repeats == 0) throw std::invalid_argument("repeats must be at least 1");
  StrategyResult result;
  result.probe = probe;
  result.gallery = gallery;
  result.repeats = probe == Strategy::all && gallery == Strategy::all ? 1 : repeats;
  result.report.cmc.assign(max_rank, 0.0);
  std::set<std::size_t> rejected;
  for (std::size_t r = 0; r < result.repeats; ++r) {
    const RetrievalIndex index =
        build_index(records, probe_camera, gallery_camera, probe, gallery, derive_seed(seed, r));
    const MetricReport m = evaluate(index, max_rank);
    for (std::size_t n = 0; n < max_rank; ++n) result.report.cmc[n] += m.cmc[n];
    result.report.map += m.map;
    result.report.evaluated = m.evaluated;
    rejected.insert(m.rejected.begin(), m.rejected.end());
  }
  for (double& c : result.report.cmc) c /= static_cast<double>(result.repeats);
  result.report.map /= static_cast<double>(result.repeats);
  result.report.rejected.assign(rejected.begin(), rejected.end());
  return result;
}

std::string strategy_name(Strategy s) { return s == Strategy::random ? "random" : "all"; }

Strategy parse_strategy(const std::string& s) {
  if (s == "random") return Strategy::random;
  if (s == "all") return Strategy::all;
  throw std::invalid_argument("unknown strategy '" + s + "' (expected random or all)");
}

std::string format_strategy_table(const std::vector<StrategyResult>& results) {
  auto cell = [&](Strategy p, Strategy g) -> std::string {
    for (const auto& r : results) {
      if (r.probe == p && r.gallery == g) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "%6.2f / %6.2f", 100.0 * r.report.cmc.front(), 100.0 * r.report.map);
        return buf;
      }
    }
    return "      -         ";
  };
  std::ostringstream os;
  os << "rank-1 / mAP (%)   gallery: random    gallery: all\n";
  for (Strategy p : {Strategy::random, Strategy::all}) {
    char label[32];
    std::snprintf(label, sizeof label, "probe: %-10s ", strategy_name(p).c_str());
    os << label << "  " << cell(p, Strategy::random) << "   " << cell(p, Strategy::all) << '\n';
  }
  return os.str();
}

}  // namespace pv
