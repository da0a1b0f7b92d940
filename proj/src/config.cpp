#include "pv/config.hpp"

#include <cstdlib>
#include <fstream>
#include <stdexcept>

namespace pv {

using nlohmann::json;

std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::vlad: return "vlad";
    case HeadKind::avg: return "avg";
    case HeadKind::max: return "max";
  }
  return "?";
}

std::string to_string(PartitionKind p) {
  switch (p) {
    case PartitionKind::learned: return "learned";
    case PartitionKind::stripes: return "stripes";
    case PartitionKind::grid: return "grid";
  }
  return "?";
}

namespace {

HeadKind parse_head(const std::string& s) {
  for (HeadKind h : {HeadKind::vlad, HeadKind::avg, HeadKind::max}) {
    if (to_string(h) == s) return h;
  }
  throw std::invalid_argument("model.head: unknown value '" + s + "' (expected vlad, avg or max)");
}

PartitionKind parse_partition(const std::string& s) {
  for (PartitionKind p : {PartitionKind::learned, PartitionKind::stripes, PartitionKind::grid}) {
    if (to_string(p) == s) return p;
  }
  throw std::invalid_argument("model.partition: unknown value '" + s + "' (expected learned, stripes or grid)");
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() || a.is_number_unsigned()) || b.is_number_integer() || b.is_number_unsigned();
  return a.type() == b.type();
}

// Overlays `patch` on `target`, which already holds every admissible key.
void merge(json& target, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw std::invalid_argument((where.empty() ? "config" : where) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!target.contains(key)) throw std::invalid_argument("unknown config key '" + path + "'");
    json& slot = target[key];
    if (slot.is_object()) {
      merge(slot, value, path);
    } else if (!same_kind(slot, value)) {
      throw std::invalid_argument("config key '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                                  value.type_name());
    } else {
      slot = value;
    }
  }
}

RunConfig from_json(const json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();

  const json& d = j.at("dataset");
  c.dataset.identities = d.at("identities");
  c.dataset.tracklets_per_identity = d.at("tracklets_per_identity");
  c.dataset.held_out_per_identity = d.at("held_out_per_identity");
  c.dataset.distractors = d.at("distractors");
  c.dataset.frames = d.at("frames");
  c.dataset.height = d.at("height");
  c.dataset.width = d.at("width");
  c.dataset.cameras = d.at("cameras");

  const json& m = j.at("model");
  c.model.backbone.filters = m.at("filters").get<std::vector<std::size_t>>();
  c.model.backbone.pools.clear();
  for (const auto& p : m.at("pools")) {
    const auto v = p.get<std::vector<std::size_t>>();
    if (v.size() != 3) throw std::invalid_argument("model.pools entries must be [depth, height, width]");
    c.model.backbone.pools.push_back({v[0], v[1], v[2]});
  }
  c.model.branches = m.at("branches");
  c.model.partition = parse_partition(m.at("partition"));
  c.model.region_count = m.at("region_count");
  c.model.head = parse_head(m.at("head"));
  c.model.clusters = m.at("clusters");
  c.model.alpha = m.at("alpha");
  c.model.head_dim = m.at("head_dim");

  const json& o = j.at("oim");
  c.oim.temperature = o.at("temperature");
  c.oim.queue_capacity = o.at("queue_capacity");
  c.oim.momentum = o.at("momentum");
  c.train.oim_sample_size = o.at("sample_size");

  const json& t = j.at("train");
  c.train.batch_size = t.at("batch_size");
  c.train.step1_iterations = t.at("step1_iterations");
  c.train.step2_iterations = t.at("step2_iterations");
  c.train.schedule.base_lr = t.at("base_lr");
  c.train.schedule.halve_every = t.at("halve_every");
  c.train.schedule.finetune_lr = t.at("finetune_lr");
  c.train.adam.beta1 = t.at("adam_beta1");
  c.train.adam.beta2 = t.at("adam_beta2");
  c.train.adam.epsilon = t.at("adam_epsilon");
  c.train.flip_probability = t.at("flip_probability");
  c.train.clip_len = t.at("clip_len");
  c.train.overlap = t.at("overlap");
  c.train.kmeans_iterations = t.at("kmeans_iterations");
  c.train.kmeans_clips = t.at("kmeans_clips");

  const json& e = j.at("eval");
  c.eval.probe = parse_strategy(e.at("probe"));
  c.eval.gallery = parse_strategy(e.at("gallery"));
  c.eval.repeats = e.at("repeats");
  c.eval.max_rank = e.at("max_rank");
  c.eval.probe_camera = e.at("probe_camera");
  c.eval.gallery_camera = e.at("gallery_camera");
  c.eval.batch = e.at("batch");

  c.dataset.seed = c.seed;
  c.dataset.clip_len = c.train.clip_len;
  c.train.seed = c.seed;
  return c;
}

}  // namespace

json to_json(const RunConfig& c) {
  json pools = json::array();
  for (const Extent3& p : c.model.backbone.pools) pools.push_back({p.depth, p.height, p.width});
  return {
      {"seed", c.seed},
      {"dataset",
       {{"identities", c.dataset.identities},
        {"tracklets_per_identity", c.dataset.tracklets_per_identity},
        {"held_out_per_identity", c.dataset.held_out_per_identity},
        {"distractors", c.dataset.distractors},
        {"frames", c.dataset.frames},
        {"height", c.dataset.height},
        {"width", c.dataset.width},
        {"cameras", c.dataset.cameras}}},
      {"model",
       {{"filters", c.model.backbone.filters},
        {"pools", pools},
        {"branches", c.model.branches},
        {"partition", to_string(c.model.partition)},
        {"region_count", c.model.region_count},
        {"head", to_string(c.model.head)},
        {"clusters", c.model.clusters},
        {"alpha", c.model.alpha},
        {"head_dim", c.model.head_dim}}},
      {"oim",
       {{"temperature", c.oim.temperature},
        {"queue_capacity", c.oim.queue_capacity},
        {"momentum", c.oim.momentum},
        {"sample_size", c.train.oim_sample_size}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"step1_iterations", c.train.step1_iterations},
        {"step2_iterations", c.train.step2_iterations},
        {"base_lr", c.train.schedule.base_lr},
        {"halve_every", c.train.schedule.halve_every},
        {"finetune_lr", c.train.schedule.finetune_lr},
        {"adam_beta1", c.train.adam.beta1},
        {"adam_beta2", c.train.adam.beta2},
        {"adam_epsilon", c.train.adam.epsilon},
        {"flip_probability", c.train.flip_probability},
        {"clip_len", c.train.clip_len},
        {"overlap", c.train.overlap},
        {"kmeans_iterations", c.train.kmeans_iterations},
        {"kmeans_clips", c.train.kmeans_clips}}},
      {"eval",
       {{"probe", strategy_name(c.eval.probe)},
        {"gallery", strategy_name(c.eval.gallery)},
        {"repeats", c.eval.repeats},
        {"max_rank", c.eval.max_rank},
        {"probe_camera", c.eval.probe_camera},
        {"gallery_camera", c.eval.gallery_camera},
        {"batch", c.eval.batch}}},
  };
}

RunConfig apply_json(RunConfig base, const json& doc) {
  json merged = to_json(base);
  merge(merged, doc, "");
  try {
    return from_json(merged);
  } catch (const json::exception& ex) {
    throw std::invalid_argument(std::string("config: ") + ex.what());
  }
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& ex) {
    throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + ex.what());
  }
  return apply_json(std::move(base), doc);
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << to_json(config).dump(2) << '\n';
}

void apply_seed_env(RunConfig& config) {
  const char* env = std::getenv("PV_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || env[0] == '-') throw std::invalid_argument(std::string("PV_SEED is not an unsigned integer: ") + env);
  config.seed = v;
  config.dataset.seed = v;
  config.train.seed = v;
}

void validate(const RunConfig& c) {
  c.model.validate();
  c.train.validate();
  if (c.eval.repeats == 0) throw std::invalid_argument("eval.repeats must be at least 1");
  if (c.eval.max_rank == 0) throw std::invalid_argument("eval.max_rank must be at least 1");
  if (c.eval.batch == 0) throw std::invalid_argument("eval.batch must be at least 1");
  if (!(c.oim.temperature > 0.0)) throw std::invalid_argument("oim.temperature must be positive");
  backbone_output_extent(c.model.backbone, Extent3{c.train.clip_len, c.dataset.height, c.dataset.width});
}

}  // namespace pv
