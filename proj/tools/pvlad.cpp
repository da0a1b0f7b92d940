// pvlad: synthetic data, training, descriptor extraction, retrieval
// evaluation and self-verification for the PersonVLAD pipeline.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "pv/clips.hpp"
#include "pv/config.hpp"
#include "pv/fault.hpp"
#include "pv/tensor_io.hpp"
#include "pv/verify.hpp"

namespace fs = std::filesystem;
using namespace pv;

namespace {

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kVerifyFailed = 2;

// Flag values that override the config file; unset flags leave it alone.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> identities, tracklets, held_out, distractors, frames, height, width, cameras;
  std::optional<std::size_t> batch, clusters, branches, iterations, sample_size, queue;
  std::optional<double> alpha, tau, lr, finetune_lr, epsilon;
  std::optional<std::string> head, partition;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Seed (overrides config and PV_SEED)");
}

void add_model(CLI::App* app, Overrides& o) {
  app->add_option("--clusters", o.clusters, "VLAD clusters K");
  app->add_option("--branches", o.branches, "Part branches B");
  app->add_option("--alpha", o.alpha, "Soft-assignment sharpness");
  app->add_option("--head", o.head, "Aggregation head")->check(CLI::IsMember({"vlad", "avg", "max"}));
  app->add_option("--partition", o.partition, "Part maps")->check(CLI::IsMember({"learned", "stripes", "grid"}));
}

RunConfig resolve(const Overrides& o) {
  RunConfig c;
  if (!o.config_path.empty()) c = load_config(o.config_path);
  apply_seed_env(c);
  nlohmann::json patch = nlohmann::json::object();
  if (o.seed) patch["seed"] = *o.seed;
  auto set = [&](const char* section, const char* key, const auto& v) {
    if (v) patch[section][key] = *v;
  };
  set("dataset", "identities", o.identities);
  set("dataset", "tracklets_per_identity", o.tracklets);
  set("dataset", "held_out_per_identity", o.held_out);
  set("dataset", "distractors", o.distractors);
  set("dataset", "frames", o.frames);
  set("dataset", "height", o.height);
  set("dataset", "width", o.width);
  set("dataset", "cameras", o.cameras);
  set("model", "clusters", o.clusters);
  set("model", "branches", o.branches);
  set("model", "alpha", o.alpha);
  set("model", "head", o.head);
  set("model", "partition", o.partition);
  set("oim", "temperature", o.tau);
  set("oim", "sample_size", o.sample_size);
  set("oim", "queue_capacity", o.queue);
  set("train", "batch_size", o.batch);
  set("train", "base_lr", o.lr);
  set("train", "finetune_lr", o.finetune_lr);
  set("train", "adam_epsilon", o.epsilon);
  if (o.iterations) {
    patch["train"]["step1_iterations"] = *o.iterations;
    patch["train"]["step2_iterations"] = *o.iterations;
  }
  c = apply_json(c, patch);
  validate(c);
  return c;
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

int cmd_synth(const Overrides& o, const fs::path& out) {
  RunConfig c = resolve(o);
  prepare_dir(out);
  const Manifest m = generate_synthetic(c.dataset, out);
  save_config(out / "config.json", c);
  std::size_t clips = 0;
  for (const auto& r : m.select("train")) clips += clip_starts(r.frame_count, c.train.clip_len, c.train.overlap).size();
  std::printf("manifest %s\n", (out / "manifest.json").string().c_str());
  std::printf("%zu identities, %zu tracklets (%zu train, %zu test), %zu training clips\n", c.dataset.identities,
              m.tracklets.size(), m.select("train").size(), m.select("test").size(), clips);
  return kOk;
}

struct TrainArgs {
  fs::path manifest, out;
  std::string step = "both";
  std::string finetune, resume;
};

int cmd_train(const Overrides& o, const TrainArgs& a) {
  RunConfig c = resolve(o);
  if (a.step == "2" && a.finetune.empty() && a.resume.empty()) {
    throw std::invalid_argument("--step 2 needs --finetune or --resume: step 1 must run first");
  }
  if (!a.finetune.empty() && !a.resume.empty()) throw std::invalid_argument("--finetune and --resume are exclusive");
  const Manifest manifest = read_manifest(a.manifest);
  const TrainingSet data = TrainingSet::load(manifest, "train");
  if (data.identities < 2) {
    throw std::invalid_argument("training needs at least 2 labeled identities, manifest has " +
                                std::to_string(data.identities));
  }
  for (const auto& t : data.tracklets) {
    backbone_output_extent(c.model.backbone, Extent3{c.train.clip_len, t.dim(2), t.dim(3)});
  }

  PersonVladNet<float> model(c.model, derive_seed(c.seed, 1));
  OimState oim(data.identities, c.model.descriptor_dim(), c.oim);
  bool init_centers = true;
  if (!a.resume.empty()) {
    load_checkpoint(a.resume, model, &oim);
    init_centers = false;
  } else if (!a.finetune.empty()) {
    // Fresh lookup table sized for this dataset's identities.
    load_checkpoint(a.finetune, model, nullptr);
    init_centers = false;
  }

  prepare_dir(a.out);
  save_config(a.out / "config.json", c);
  const Steps steps = a.step == "1" ? Steps::first : a.step == "2" ? Steps::second : Steps::both;
  const auto t0 = std::chrono::steady_clock::now();
  const auto trace = train_two_step(model, oim, data, c.train, steps, init_centers, [&](Phase phase, const LossRecord& r) {
    if ((r.iteration + 1) % 50 == 0) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "step%d it %zu lr %.3g loss %.4f (%.0fs)\n", phase == Phase::step1 ? 1 : 2, r.iteration + 1,
                   r.lr, r.loss, s);
    }
  });
  write_loss_csv(a.out / "loss.csv", trace);
  save_checkpoint(a.out / "checkpoint.pvt", model, oim);
  std::printf("%zu iterations, final loss %.6g\n", trace.size(), trace.empty() ? 0.0 : trace.back().loss);
  std::printf("checkpoint %s\nloss trace %s\n", (a.out / "checkpoint.pvt").string().c_str(),
              (a.out / "loss.csv").string().c_str());
  return kOk;
}

int cmd_extract(const Overrides& o, const fs::path& manifest_path, const fs::path& checkpoint, const fs::path& out,
                const std::string& split) {
  RunConfig c = resolve(o);
  const Manifest manifest = read_manifest(manifest_path);
  PersonVladNet<float> model(c.model, derive_seed(c.seed, 1));
  load_checkpoint(checkpoint, model);
  prepare_dir(out);
  save_config(out / "config.json", c);
  std::size_t count = 0;
  for (const auto& r : manifest.tracklets) {
    if (split != "all" && r.split != split) continue;
    DescriptorRecord d;
    d.identity = r.identity;
    d.camera = r.camera;
    d.tracklet_id = r.id;
    d.v = extract_descriptor(model, load_tensor(manifest.resolve(r)), c.train.clip_len, c.train.overlap, c.eval.batch);
    write_descriptor(out, d);
    ++count;
  }
  std::printf("%zu descriptors of length %zu in %s\n", count, c.model.descriptor_dim(), out.string().c_str());
  return kOk;
}

int cmd_eval(const Overrides& o, const fs::path& descriptors, const fs::path& out, std::optional<std::string> probe,
             std::optional<std::string> gallery, std::optional<std::size_t> repeats, bool table) {
  RunConfig c = resolve(o);
  if (probe) c.eval.probe = parse_strategy(*probe);
  if (gallery) c.eval.gallery = parse_strategy(*gallery);
  if (repeats) c.eval.repeats = *repeats;
  validate(c);
  const auto records = read_descriptors(descriptors);
  std::vector<StrategyResult> results;
  std::vector<std::pair<Strategy, Strategy>> cells{{c.eval.probe, c.eval.gallery}};
  if (table) {
    cells = {{Strategy::random, Strategy::random},
             {Strategy::random, Strategy::all},
             {Strategy::all, Strategy::random},
             {Strategy::all, Strategy::all}};
  }
  for (auto [p, g] : cells) {
    results.push_back(evaluate_strategy(records, p, g, c.eval.repeats, c.seed, c.eval.max_rank, c.eval.probe_camera,
                                        c.eval.gallery_camera));
  }
  std::size_t chosen = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].probe == c.eval.probe && results[i].gallery == c.eval.gallery) chosen = i;
  }
  const StrategyResult& main = results[chosen];
  for (std::size_t p : main.report.rejected) {
    std::fprintf(stderr, "probe %zu has no cross-camera match in the gallery; skipped\n", p);
  }
  std::printf("probe %s / gallery %s, %zu probes, %zu repeats\n", strategy_name(main.probe).c_str(),
              strategy_name(main.gallery).c_str(), main.report.evaluated, main.repeats);
  for (std::size_t n : {1, 5, 10, 20}) {
    if (n <= main.report.cmc.size()) std::printf("rank-%-2zu %.4f\n", n, main.report.cmc[n - 1]);
  }
  std::printf("mAP     %.4f\n", main.report.map);
  if (table) std::printf("\n%s", format_strategy_table(results).c_str());

  if (!out.empty()) {
    prepare_dir(out);
    save_config(out / "config.json", c);
    std::ofstream csv(out / "cmc.csv");
    csv << "rank,cmc\n";
    for (std::size_t n = 0; n < main.report.cmc.size(); ++n) csv << n + 1 << ',' << main.report.cmc[n] << '\n';
    std::ofstream(out / "map.txt") << main.report.map << '\n';
    if (table) std::ofstream(out / "table.txt") << format_strategy_table(results);
  }
  return kOk;
}

int cmd_verify(const Overrides& o, int precision, const std::string& fault_name, const fs::path& out) {
  RunConfig c = resolve(o);
  if (fault_name == "conv3d") fault::inject(fault::Point::conv3d_weight_grad);
  VerifyOptions opts;
  opts.full_precision = precision == 64;
  opts.seed = c.seed;
  std::size_t failed = 0;
  const auto checks = run_verify(opts, [&](const Check& ch) {
    std::printf("%s\n", format_check(ch).c_str());
    std::fflush(stdout);
    if (!ch.passed) ++failed;
  });
  if (!out.empty()) {
    prepare_dir(out);
    save_config(out / "config.json", c);
    std::ofstream report(out / "verify.txt");
    for (const auto& ch : checks) report << format_check(ch) << '\n';
  }
  std::printf("%zu checks, %zu failed (%d-bit tolerances)\n", checks.size(), failed, precision);
  if (failed > 0) {
    for (const auto& ch : checks) {
      if (!ch.passed) std::printf("failed: %s\n", ch.name.c_str());
    }
    return kVerifyFailed;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PersonVLAD: 3D part-aligned video descriptors for person re-identification"};
  app.require_subcommand(1);
  Overrides o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic tracklet dataset");
  fs::path synth_out = "data";
  add_common(synth, o);
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_option("--identities", o.identities, "Labeled identities");
  synth->add_option("--tracklets", o.tracklets, "Training tracklets per identity");
  synth->add_option("--held-out", o.held_out, "Test tracklets per identity");
  synth->add_option("--distractors", o.distractors, "Unlabeled identities");
  synth->add_option("--frames", o.frames, "Frames per tracklet");
  synth->add_option("--height", o.height, "Frame height");
  synth->add_option("--width", o.width, "Frame width");
  synth->add_option("--cameras", o.cameras, "Cameras");

  auto* train = app.add_subcommand("train", "Two-step training on a manifest");
  TrainArgs ta;
  ta.out = "run";
  add_common(train, o);
  add_model(train, o);
  train->add_option("--manifest", ta.manifest, "Dataset manifest")->required();
  train->add_option("--out", ta.out, "Output directory");
  train->add_option("--step", ta.step, "Phases to run")->check(CLI::IsMember({"1", "2", "both"}));
  train->add_option("--finetune", ta.finetune, "Start from a checkpoint with a fresh lookup table");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint including its OIM state");
  train->add_option("--iterations", o.iterations, "Iterations per selected step");
  train->add_option("--batch", o.batch, "Clips per batch");
  train->add_option("--lr", o.lr, "Step-1 base learning rate");
  train->add_option("--finetune-lr", o.finetune_lr, "Step-2 learning rate");
  train->add_option("--epsilon", o.epsilon, "Adam epsilon");
  train->add_option("--tau", o.tau, "OIM temperature");
  train->add_option("--queue", o.queue, "OIM queue capacity");
  train->add_option("--sample-size", o.sample_size, "OIM denominator sample size (0 = all)");

  auto* extract = app.add_subcommand("extract", "Write one descriptor per tracklet");
  fs::path ex_manifest, ex_checkpoint, ex_out = "descriptors";
  std::string ex_split = "all";
  add_common(extract, o);
  add_model(extract, o);
  extract->add_option("--manifest", ex_manifest, "Dataset manifest")->required();
  extract->add_option("--checkpoint", ex_checkpoint, "Trained checkpoint")->required();
  extract->add_option("--out", ex_out, "Output directory");
  extract->add_option("--split", ex_split, "Tracklets to describe")->check(CLI::IsMember({"train", "test", "all"}));

  auto* eval = app.add_subcommand("eval", "CMC and mAP over extracted descriptors");
  fs::path ev_desc, ev_out;
  std::optional<std::string> ev_probe, ev_gallery;
  std::optional<std::size_t> ev_repeats;
  bool ev_table = false;
  add_common(eval, o);
  eval->add_option("--descriptors", ev_desc, "Descriptor directory")->required();
  eval->add_option("--out", ev_out, "Report directory");
  eval->add_option("--probe", ev_probe, "Probe strategy")->check(CLI::IsMember({"random", "all"}));
  eval->add_option("--gallery", ev_gallery, "Gallery strategy")->check(CLI::IsMember({"random", "all"}));
  eval->add_option("--repeats", ev_repeats, "Repetitions of random draws");
  eval->add_flag("--table", ev_table, "Evaluate all four strategy combinations");

  auto* verify = app.add_subcommand("verify", "Run gradient and oracle checks");
  int precision = 32;
  std::string fault_name;
  fs::path vf_out;
  add_common(verify, o);
  verify->add_option("--precision", precision, "Tolerance set")->check(CLI::IsMember({32, 64}));
  verify->add_option("--inject-fault", fault_name, "Negative control")->check(CLI::IsMember({"conv3d"}));
  verify->add_option("--out", vf_out, "Report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUserError;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, synth_out);
    if (train->parsed()) return cmd_train(o, ta);
    if (extract->parsed()) return cmd_extract(o, ex_manifest, ex_checkpoint, ex_out, ex_split);
    if (eval->parsed()) return cmd_eval(o, ev_desc, ev_out, ev_probe, ev_gallery, ev_repeats, ev_table);
    if (verify->parsed()) return cmd_verify(o, precision, fault_name, vf_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUserError;
  }
  return kUserError;
}
