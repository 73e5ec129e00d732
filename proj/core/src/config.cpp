#include "spikegraph/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "spikegraph/errors.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

namespace {

using nlohmann::json;

// Reads the keys of one object, rejecting unknown or mistyped entries.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void operator()(const char* key, T& field) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(where(key) + " must be a boolean");
        field = it->template get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer() || (std::is_unsigned_v<T> && it->is_number_integer() &&
                                          !it->is_number_unsigned() && it->template get<long long>() < 0))
          throw ConfigError(where(key) + " must be a non-negative integer");
        field = it->template get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(where(key) + " must be a number");
        field = static_cast<T>(it->template get<double>());
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError(where(key) + " must be a string");
        field = it->template get<std::string>();
      } else {
        field = it->template get<T>();
      }
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  Reader group(const char* key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    auto it = j_.find(key);
    return Reader(it == j_.end() ? kEmpty : *it, path_.empty() ? key : path_ + "." + key);
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where(k) + "'");
  }

 private:
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
void rethrow_as_config(F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Reader root(j, "");

  auto ds = root.group("dataset");
  ds("source_dir", c.dataset.source_dir);
  ds("classes", c.dataset.synth.classes);
  ds("samples_per_class", c.dataset.synth.samples_per_class);
  ds("num_joints", c.dataset.synth.num_joints);
  ds("frames", c.dataset.synth.frames);
  ds("synth_seed", c.dataset.synth.seed);
  ds("noise", c.dataset.synth.noise);
  ds("amplitude", c.dataset.synth.amplitude);
  ds("holdout_every", c.dataset.holdout_every);
  ds("cache_dir", c.dataset.cache_dir);
  ds.finish();

  auto pp = root.group("preprocessing");
  pp("target_T", c.preprocessing.target_frames);
  pp("batch", c.preprocessing.batch_size);
  pp.finish();

  auto nr = root.group("neuron");
  nr("v_threshold", c.neuron.v_threshold);
  nr("v_reset", c.neuron.v_reset);
  nr("decay_tau", c.neuron.decay_tau);
  nr("surrogate_window_a", c.neuron.surrogate_window_a);
  nr.finish();

  auto ssc = root.group("ssc");
  ssc("spike_steps", c.ssc.spike_steps);
  ssc("hidden_channels", c.ssc.hidden_channels);
  ssc.finish();

  auto smf = root.group("smf");
  smf("enabled", c.model.use_smf);
  smf("smic_hidden", c.smf.smic_hidden);
  smf("smic_lr", c.smf.smic_lr);
  smf("smic_threshold", c.smf.smic_threshold);
  smf("shuffle_seed", c.smf.shuffle_seed);
  smf.finish();

  auto bl = root.group("blocks");
  bl("attention_scale", c.blocks.attention_scale);
  bl("temporal_kernel", c.blocks.temporal_kernel);
  bl("branches", c.blocks.branches);
  bl("width", c.model.width);
  bl("dropout", c.model.dropout);
  bl.finish();

  auto ls = root.group("loss");
  if (ls.has("alpha")) {
    const json& a = ls.raw("alpha");
    if (!a.is_array() || a.size() != kNumModalities)
      throw ConfigError("loss.alpha must be an array of 4 numbers");
    for (std::size_t i = 0; i < kNumModalities; ++i) {
      if (!a[i].is_number()) throw ConfigError("loss.alpha must be an array of 4 numbers");
      c.loss.alpha[i] = a[i].get<double>();
    }
  }
  ls("beta1", c.loss.beta1);
  ls("beta2", c.loss.beta2);
  ls("gamma1", c.loss.gamma1);
  ls("gamma2", c.loss.gamma2);
  ls("gamma3", c.loss.gamma3);
  ls.finish();

  auto op = root.group("optimizer");
  op("lr", c.optimizer.sgd.lr);
  op("momentum", c.optimizer.sgd.momentum);
  op("weight_decay", c.optimizer.sgd.weight_decay);
  op("epochs", c.optimizer.epochs);
  op("lr_step", c.optimizer.lr_step);
  op("lr_decay", c.optimizer.lr_decay);
  op("early_stop_train_acc", c.optimizer.early_stop_train_acc);
  op.finish();

  auto kd = root.group("kd");
  std::string mode = c.kd.mode.str();
  kd("mode", mode);
  c.kd.mode = KdMode::parse(mode);
  kd("teacher_epochs", c.kd.teacher.epochs);
  kd("teacher_batch", c.kd.teacher.batch_size);
  kd("teacher_lr", c.kd.teacher.sgd.lr);
  kd("teacher_early_stop", c.kd.teacher.early_stop_train_acc);
  kd.finish();

  root("seed", c.seed);
  root("output_dir", c.output_dir);
  root.finish();

  c.validate();
  return c;
}

json RunConfig::to_json() const {
  json j;
  j["dataset"] = {{"source_dir", dataset.source_dir},
                  {"classes", dataset.synth.classes},
                  {"samples_per_class", dataset.synth.samples_per_class},
                  {"num_joints", dataset.synth.num_joints},
                  {"frames", dataset.synth.frames},
                  {"synth_seed", dataset.synth.seed},
                  {"noise", dataset.synth.noise},
                  {"amplitude", dataset.synth.amplitude},
                  {"holdout_every", dataset.holdout_every},
                  {"cache_dir", dataset.cache_dir}};
  j["preprocessing"] = {{"target_T", preprocessing.target_frames}, {"batch", preprocessing.batch_size}};
  j["neuron"] = {{"v_threshold", static_cast<double>(neuron.v_threshold)},
                 {"v_reset", static_cast<double>(neuron.v_reset)},
                 {"decay_tau", static_cast<double>(neuron.decay_tau)},
                 {"surrogate_window_a", static_cast<double>(neuron.surrogate_window_a)}};
  j["ssc"] = {{"spike_steps", ssc.spike_steps}, {"hidden_channels", ssc.hidden_channels}};
  j["smf"] = {{"enabled", model.use_smf},
              {"smic_hidden", smf.smic_hidden},
              {"smic_lr", smf.smic_lr},
              {"smic_threshold", smf.smic_threshold},
              {"shuffle_seed", smf.shuffle_seed}};
  j["blocks"] = {{"attention_scale", blocks.attention_scale},
                 {"temporal_kernel", blocks.temporal_kernel},
                 {"branches", blocks.branches},
                 {"width", model.width},
                 {"dropout", model.dropout}};
  j["loss"] = {{"alpha", loss.alpha}, {"beta1", loss.beta1}, {"beta2", loss.beta2},
               {"gamma1", loss.gamma1}, {"gamma2", loss.gamma2}, {"gamma3", loss.gamma3}};
  j["optimizer"] = {{"lr", optimizer.sgd.lr},
                    {"momentum", optimizer.sgd.momentum},
                    {"weight_decay", optimizer.sgd.weight_decay},
                    {"epochs", optimizer.epochs},
                    {"lr_step", optimizer.lr_step},
                    {"lr_decay", optimizer.lr_decay},
                    {"early_stop_train_acc", optimizer.early_stop_train_acc}};
  j["kd"] = {{"mode", kd.mode.str()},
             {"teacher_epochs", kd.teacher.epochs},
             {"teacher_batch", kd.teacher.batch_size},
             {"teacher_lr", kd.teacher.sgd.lr},
             {"teacher_early_stop", kd.teacher.early_stop_train_acc}};
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  return j;
}

std::size_t RunConfig::num_joints() const {
  return dataset.source_dir.empty() ? dataset.synth.num_joints : 25;
}

std::size_t RunConfig::num_classes() const { return dataset.synth.classes; }

void RunConfig::validate() const {
  if (dataset.synth.classes < 2) throw ConfigError("dataset.classes must be at least 2");
  if (dataset.source_dir.empty() && dataset.synth.samples_per_class == 0)
    throw ConfigError("dataset.samples_per_class must be positive");
  if (dataset.synth.num_joints < 2) throw ConfigError("dataset.num_joints must be at least 2");
  if (dataset.holdout_every < 2) throw ConfigError("dataset.holdout_every must be at least 2");
  if (preprocessing.batch_size == 0) throw ConfigError("preprocessing.batch must be positive");
  if (!(model.dropout >= 0.0 && model.dropout < 1.0)) throw ConfigError("blocks.dropout must lie in [0, 1)");
  if (!(optimizer.sgd.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
  if (!(smf.smic_lr > 0.0)) throw ConfigError("smf.smic_lr must be positive");
  if (!(smf.smic_threshold > neuron.v_reset)) throw ConfigError("smf.smic_threshold must exceed neuron.v_reset");
  if (kd.teacher.batch_size == 0) throw ConfigError("kd.teacher_batch must be positive");
  rethrow_as_config([&] {
    model_config().validate();
    loss.validate();
  });
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.num_classes = num_classes();
  m.num_joints = num_joints();
  m.frames = preprocessing.target_frames;
  m.width = model.width;
  m.lif = neuron;
  m.ssc = ssc;
  m.smf = smf;
  m.use_smf = model.use_smf;
  m.blocks = blocks;
  m.dropout = model.dropout;
  return m;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions t;
  t.epochs = optimizer.epochs;
  t.batch_size = preprocessing.batch_size;
  t.sgd = optimizer.sgd;
  t.lr_step = optimizer.lr_step;
  t.lr_decay = optimizer.lr_decay;
  t.early_stop_train_acc = optimizer.early_stop_train_acc;
  t.kd = kd.mode;
  t.loss = loss;
  return t;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file " + path.string());
  out << cfg.to_json().dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
