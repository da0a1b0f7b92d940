#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pv/model.hpp"

namespace pv {

/// Mean of the (M, dim) clip descriptors, re-normalized to unit length.
std::vector<float> tracklet_descriptor(const Tensor<float>& clip_descriptors);

/// Splits a (3, L, H, W) tracklet into clips, runs the model without
/// recording gradients and averages the clip descriptors.
std::vector<float> extract_descriptor(const PersonVladNet<float>& model, const Tensor<float>& tracklet,
                                      std::size_t clip_len = 16, std::size_t overlap = 8, std::size_t batch = 8);

enum class Strategy { random, all };

/// Indices into an identity's `count` tracklets: one seeded pick, or all.
std::vector<std::size_t> strategy_select(std::size_t count, Strategy mode, std::uint64_t seed);

/// Gallery indices by ascending Euclidean distance, ties by index.
std::vector<std::size_t> rank_euclidean(std::span<const float> probe, const std::vector<std::vector<float>>& gallery);

struct RetrievalEntry {
  long identity = 0;
  std::size_t camera = 0;
  std::vector<float> v;
};

struct RetrievalIndex {
  std::vector<RetrievalEntry> probes;
  std::vector<RetrievalEntry> gallery;
};

struct MetricReport {
  std::vector<double> cmc;                  // cmc[n - 1] = match rate within rank n
  double map = 0.0;
  std::vector<std::size_t> rejected;        // probe indices without a valid match
  std::size_t evaluated = 0;
};

/// CMC and mAP over every probe that has a same-identity gallery entry from
/// another camera. Gallery entries sharing the probe's identity and camera
/// are skipped. Throws when no probe can be evaluated.
MetricReport evaluate(const RetrievalIndex& index, std::size_t max_rank);

inline std::vector<double> cmc_curve(const RetrievalIndex& index, std::size_t max_rank) {
  return evaluate(index, max_rank).cmc;
}
inline double mean_ap(const RetrievalIndex& index) { return evaluate(index, 1).map; }

/// Per-tracklet descriptor with its labels, as written by `extract`.
struct DescriptorRecord {
  long identity = 0;
  std::size_t camera = 0;
  std::size_t tracklet_id = 0;
  std::vector<float> v;
};

/// "PVT1" tensor plus a JSON sidecar {identity, camera, tracklet_id}.
void write_descriptor(const std::filesystem::path& dir, const DescriptorRecord& record);
/// Every descriptor in `dir`, ordered by tracklet id.
std::vector<DescriptorRecord> read_descriptors(const std::filesystem::path& dir);

/// Probes from `probe_camera`, gallery from `gallery_camera`; one entry per
/// identity and camera, either a seeded random tracklet or the re-normalized
/// mean of all of them.
RetrievalIndex build_index(const std::vector<DescriptorRecord>& records, std::size_t probe_camera,
                           std::size_t gallery_camera, Strategy probe, Strategy gallery, std::uint64_t seed);

struct StrategyResult {
  Strategy probe = Strategy::random;
  Strategy gallery = Strategy::all;
  MetricReport report;  // CMC and mAP averaged over repeats
  std::size_t repeats = 1;
};

/// Averages over `repeats` seeded draws when either side is random; a single
/// run otherwise.
StrategyResult evaluate_strategy(const std::vector<DescriptorRecord>& records, Strategy probe, Strategy gallery,
                                 std::size_t repeats, std::uint64_t seed, std::size_t max_rank,
                                 std::size_t probe_camera = 0, std::size_t gallery_camera = 1);

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& s);

/// Plain-text 2x2 table (probe rows, gallery columns) of rank-1 and mAP.
std::string format_strategy_table(const std::vector<StrategyResult>& results);

}  // namespace pv
