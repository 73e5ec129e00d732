#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "spikegraph/checkpoint.hpp"
#include "spikegraph/config.hpp"
#include "spikegraph/energy.hpp"
#include "spikegraph/errors.hpp"
#include "spikegraph/trainer.hpp"

namespace spikegraph::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointName = "checkpoint.sgck";
constexpr const char* kTeacherName = "teacher.sgck";
constexpr std::uint64_t kTeacherSalt = 0x7eac4e7eac4e7eacULL;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

struct TrainFlags {
  std::optional<std::string> kd;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> width;
  std::optional<std::string> data;
  bool resume = false;
};

struct EvalFlags {
  std::optional<std::string> checkpoint;
  std::string split = "test";
};

struct ProfileFlags {
  std::optional<std::string> checkpoint;
  bool ann_equivalent = false;
  std::optional<double> flops_only;
};

RunConfig resolve_config(const GlobalFlags& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.out) cfg.output_dir = *g.out;
  if (const char* cache = std::getenv("SPIKEGRAPH_CACHE"); cache && *cache) cfg.dataset.cache_dir = cache;
  return cfg;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string());
}

struct Dataset {
  Split split;
  SkeletonTopology topo;
};

Dataset load_dataset(const RunConfig& cfg) {
  Dataset d;
  std::vector<SkeletonSequence> all;
  if (cfg.dataset.source_dir.empty()) {
    all = synthesize(cfg.dataset.synth);
    d.topo = SkeletonTopology::for_joints(cfg.dataset.synth.num_joints);
  } else {
    std::optional<DatasetCache> cache;
    if (!cfg.dataset.cache_dir.empty()) cache.emplace(cfg.dataset.cache_dir);
    all = load_ntu_directory(cfg.dataset.source_dir, cfg.preprocessing.target_frames, cache ? &*cache : nullptr);
    d.topo = SkeletonTopology::ntu25();
    if (all.empty()) throw InvalidInputError("no .skeleton files in " + cfg.dataset.source_dir);
    for (const auto& s : all)
      if (s.label < 0 || static_cast<std::size_t>(s.label) >= cfg.num_classes())
        throw FormatError("label " + std::to_string(s.label) + " outside the configured " +
                          std::to_string(cfg.num_classes()) + " classes");
  }
  d.split = split_holdout(all, cfg.dataset.holdout_every);
  return d;
}

std::uint64_t teacher_hash(const RunConfig& cfg) { return cfg.model_config().plan_hash() ^ kTeacherSalt; }

json eval_json(const EvalReport& r) {
  return {{"accuracy", r.accuracy}, {"count", r.count}, {"confusion", r.confusion}};
}

json step_json(const StepMetrics& m) {
  json rates = json::object();
  for (const auto& [name, r] : m.firing_rates) rates[name] = r;
  return {{"type", "step"},     {"epoch", m.epoch},   {"step", m.step},     {"lr", m.lr},
          {"loss", m.loss},     {"l_task", m.l_task}, {"l_sdk", m.l_sdk},   {"l_fkd", m.l_fkd},
          {"acc", m.acc},       {"fusion_weights", m.fusion_weights},      {"firing_rates", rates}};
}

// Keeps the metric lines written up to (and including) `step` steps and `epochs` epochs.
void truncate_metrics(const fs::path& path, std::size_t steps, std::size_t epochs) {
  std::ifstream in(path);
  if (!in) return;
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    const bool keep = j.value("type", "") == "step" ? j.value("step", 0u) < steps
                                                     : j.value("epoch", 0u) < epochs;
    if (keep) kept += line + "\n";
  }
  in.close();
  write_text(path, kept);
}

int cmd_synth(const RunConfig& cfg) {
  if (!cfg.dataset.source_dir.empty()) throw ConfigError("synth writes the synthetic set; unset dataset.source_dir");
  const fs::path out = cfg.output_dir;
  const fs::path data = out / "data";
  ensure_dir(data);
  const SynthParams& p = cfg.dataset.synth;
  const auto seqs = synthesize(p);
  json files = json::array();
  std::uint64_t hash = fnv1a(cfg.to_json()["dataset"].dump());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "synth%05zuA%03d.skeleton", i, seqs[i].label + 1);
    const std::string text = serialize_ntu(seqs[i]);
    write_text(data / name, text);
    const std::uint64_t h = fnv1a(text);
    hash = fnv1a(std::string_view(reinterpret_cast<const char*>(&h), sizeof h), hash);
    files.push_back({{"name", name}, {"label", seqs[i].label}, {"fnv1a", h}});
  }
  json classes = json::array();
  for (std::size_t c = 0; c < p.classes; ++c) {
    const SynthClassSpec s = synth_class_spec(c, p.num_joints);
    classes.push_back({{"class", c},
                       {"limb", s.limb},
                       {"axis", s.axis},
                       {"freq", s.freq},
                       {"secondary_limb", s.secondary_limb},
                       {"secondary_axis", s.secondary_axis}});
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
  const json manifest = {{"classes", p.classes},
                         {"samples_per_class", p.samples_per_class},
                         {"count", seqs.size()},
                         {"num_joints", p.num_joints},
                         {"frames", p.frames},
                         {"seed", p.seed},
                         {"noise", p.noise},
                         {"amplitude", p.amplitude},
                         {"class_parameters", classes},
                         {"files", files},
                         {"hash", hex}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << seqs.size() << " sequences to " << data.string() << " (manifest hash " << hex << ")\n";
  return kExitOk;
}

int cmd_train(RunConfig cfg, const TrainFlags& f) {
  if (f.kd) cfg.kd.mode = KdMode::parse(*f.kd);
  if (f.epochs) cfg.optimizer.epochs = *f.epochs;
  if (f.batch) cfg.preprocessing.batch_size = *f.batch;
  if (f.width) cfg.model.width = *f.width;
  if (f.data) cfg.dataset.source_dir = *f.data;
  cfg.validate();

  const fs::path out = cfg.output_dir;
  ensure_dir(out);
  save_config(cfg, out / "config.json");
  const Dataset ds = load_dataset(cfg);
  const std::size_t T = cfg.preprocessing.target_frames;
  const PreparedData train = prepare(ds.split.train, T, ds.topo);
  const PreparedData test = prepare(ds.split.test, T, ds.topo);
  const ModelConfig mc = cfg.model_config();

  MkSgnModel model(mc, cfg.seed);
  std::unique_ptr<TeacherModel> teacher;
  if (cfg.kd.mode.any()) {
    teacher = std::make_unique<TeacherModel>(mc, cfg.seed ^ kTeacherSalt);
    const fs::path tpath = out / kTeacherName;
    if (f.resume && fs::exists(tpath)) {
      const Checkpoint tc = load_checkpoint(tpath);
      require_plan(tc, teacher_hash(cfg));
      NamedTensors targets = teacher->parameters();
      const NamedTensors bufs = teacher->buffers();
      targets.insert(targets.end(), bufs.begin(), bufs.end());
      restore_into(tc, targets);
      teacher->freeze();
    } else {
      train_teacher(*teacher, train, cfg.kd.teacher, cfg.seed ^ kTeacherSalt);
      NamedTensors all = teacher->parameters();
      const NamedTensors bufs = teacher->buffers();
      all.insert(all.end(), bufs.begin(), bufs.end());
      save_checkpoint(tpath, teacher_hash(cfg), all);
    }
    const EvalReport te = evaluate_teacher(*teacher, test, cfg.preprocessing.batch_size);
    std::cout << "teacher held-out accuracy " << te.accuracy << "\n";
  }

  Trainer trainer(model, teacher.get(), cfg.train_options(), cfg.seed);
  const fs::path ckpt = out / kCheckpointName;
  const fs::path metrics_path = out / "metrics.jsonl";
  if (f.resume) {
    if (!fs::exists(ckpt)) throw IoError("nothing to resume: " + ckpt.string() + " does not exist");
    const Checkpoint c = load_checkpoint(ckpt);
    require_plan(c, mc.plan_hash());
    trainer.load_state(c.tensors);
    truncate_metrics(metrics_path, trainer.step(), trainer.epoch());
  } else {
    write_text(metrics_path, "");
  }
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw IoError("cannot write " + metrics_path.string());

  trainer.on_step = [&](const StepMetrics& m) { metrics << step_json(m).dump() << '\n'; };
  trainer.on_epoch = [&](const EpochSummary& e) {
    const EvalReport r = evaluate(model, test, cfg.preprocessing.batch_size);
    metrics << json{{"type", "epoch"},          {"epoch", e.epoch},     {"loss", e.loss},
                    {"train_acc", e.train_acc}, {"test_acc", r.accuracy}, {"steps", e.steps}}
                   .dump()
            << '\n';
    metrics.flush();
    save_checkpoint(ckpt, mc.plan_hash(), trainer.state());
    std::printf("epoch %3zu  loss %.4f  train %.3f  test %.3f\n", e.epoch, e.loss, e.train_acc, r.accuracy);
    std::fflush(stdout);
  };

  const auto t0 = std::chrono::steady_clock::now();
  trainer.fit(train);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(ckpt, mc.plan_hash(), trainer.state());

  const EvalReport tr = evaluate(model, train, cfg.preprocessing.batch_size);
  const EvalReport te = evaluate(model, test, cfg.preprocessing.batch_size);
  const json summary = {{"epochs", trainer.epoch()},  {"steps", trainer.step()},
                        {"kd", cfg.kd.mode.str()},    {"seed", cfg.seed},
                        {"train", eval_json(tr)},     {"test", eval_json(te)},
                        {"seconds", seconds}};
  write_text(out / "train_summary.json", summary.dump(2) + "\n");
  std::printf("final train accuracy %.4f, held-out accuracy %.4f\n", tr.accuracy, te.accuracy);
  return kExitOk;
}

MkSgnModel load_model(const RunConfig& cfg, const std::optional<std::string>& path) {
  const fs::path ckpt = path ? fs::path(*path) : fs::path(cfg.output_dir) / kCheckpointName;
  const Checkpoint c = load_checkpoint(ckpt);
  const ModelConfig mc = cfg.model_config();
  require_plan(c, mc.plan_hash());
  MkSgnModel model(mc, cfg.seed);
  restore_into(c, model.parameters(), "model.");
  restore_into(c, model.buffers(), "model.");
  if (mc.use_smf) restore_into(c, model.smf().parameters(), "smf.");
  return model;
}

int cmd_eval(const RunConfig& cfg, const EvalFlags& f) {
  if (f.split != "test" && f.split != "train") throw ConfigError("--split must be 'train' or 'test'");
  MkSgnModel model = load_model(cfg, f.checkpoint);
  const Dataset ds = load_dataset(cfg);
  const PreparedData data =
      prepare(f.split == "test" ? ds.split.test : ds.split.train, cfg.preprocessing.target_frames, ds.topo);
  const EvalReport r = evaluate(model, data, cfg.preprocessing.batch_size);
  json j = eval_json(r);
  j["split"] = f.split;
  ensure_dir(cfg.output_dir);
  write_text(fs::path(cfg.output_dir) / ("eval_" + f.split + ".json"), j.dump(2) + "\n");
  std::printf("%s accuracy %.4f over %zu samples\n", f.split.c_str(), r.accuracy, r.count);
  return kExitOk;
}

int cmd_profile(const RunConfig& cfg, const ProfileFlags& f) {
  if (f.flops_only) {
    if (!(*f.flops_only >= 0.0)) throw ConfigError("--flops-only needs a non-negative FLOP count");
    std::printf("%.3f mJ\n", energy_ann(*f.flops_only));
    return kExitOk;
  }
  MkSgnModel model = load_model(cfg, f.checkpoint);
  const Dataset ds = load_dataset(cfg);
  const PreparedData test = prepare(ds.split.test, cfg.preprocessing.target_frames, ds.topo);
  std::vector<std::size_t> idx(std::min(test.size(), cfg.preprocessing.batch_size));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  EnergyReport rep = profile_model(model, test.gather(idx));
  if (!f.ann_equivalent) rep.ann_equivalent_mJ.reset();
  const fs::path out = cfg.output_dir;
  ensure_dir(out);
  write_text(out / "energy_report.json", rep.to_json().dump(2) + "\n");
  write_text(out / "energy_report.csv", rep.to_csv());
  std::printf("SNN energy %.6f mJ (%.4g SOPs)\n", rep.energy_mJ, rep.sops_total);
  if (rep.ann_equivalent_mJ) std::printf("ANN-equivalent energy %.6f mJ\n", *rep.ann_equivalent_mJ);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Spiking graph networks for skeleton-based action recognition"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "Overrides the config seed");
  app.add_option("--out", g.out, "Overrides the config output directory");

  auto* synth = app.add_subcommand("synth", "Write the synthetic dataset and its manifest");

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train the student, optionally with distillation");
  train->add_option("--kd", tf.kd, "none | soft | feature | soft,feature");
  train->add_option("--epochs", tf.epochs, "Overrides optimizer.epochs");
  train->add_option("--batch", tf.batch, "Overrides preprocessing.batch");
  train->add_option("--width", tf.width, "Overrides blocks.width");
  train->add_option("--data", tf.data, "Overrides dataset.source_dir");
  train->add_flag("--resume", tf.resume, "Continue from the checkpoint in the output directory");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Accuracy and confusion counts of a checkpoint");
  eval->add_option("--checkpoint", ef.checkpoint, "Defaults to <out>/checkpoint.sgck");
  eval->add_option("--split", ef.split, "test | train");

  ProfileFlags pf;
  auto* profile = app.add_subcommand("profile", "Energy report of a checkpoint");
  profile->add_option("--checkpoint", pf.checkpoint, "Defaults to <out>/checkpoint.sgck");
  profile->add_flag("--ann-equivalent", pf.ann_equivalent, "Also report dense-FLOP energy of the same plan");
  profile->add_option("--flops-only", pf.flops_only, "Print the dense energy of a FLOP count and exit");

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg = resolve_config(g);
    if (synth->parsed()) return cmd_synth(cfg);
    if (train->parsed()) return cmd_train(cfg, tf);
    if (eval->parsed()) return cmd_eval(cfg, ef);
    if (profile->parsed()) return cmd_profile(cfg, pf);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace spikegraph::cli
