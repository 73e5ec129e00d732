#include "spikegraph/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "spikegraph/errors.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/tape.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL * (epoch + 1));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  return idx;
}

// Replaces every running statistic with the plain mean of its per-batch value
// over one pass. Each training-mode BN call updates new = (1 - m) old + m batch,
// so the batch value is recovered from the snapshot taken before the call.
void average_running_stats(NamedTensors buffers, std::size_t n, std::size_t batch_size,
                           std::uint64_t seed, const std::function<void(std::span<const std::size_t>)>& forward) {
  if (n == 0) return;
  NoGradScope ng;
  const double m = ops::kBnMomentum;
  std::vector<std::vector<double>> sum(buffers.size());
  std::vector<std::vector<Real>> before(buffers.size());
  for (std::size_t k = 0; k < buffers.size(); ++k) sum[k].assign(buffers[k].tensor.size(), 0.0);
  const auto order = epoch_order(n, seed, 0);
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < n; begin += batch_size, ++batches) {
    for (std::size_t k = 0; k < buffers.size(); ++k) {
      const auto d = buffers[k].tensor.data();
      before[k].assign(d.begin(), d.end());
    }
    forward({order.data() + begin, std::min(batch_size, n - begin)});
    for (std::size_t k = 0; k < buffers.size(); ++k) {
      const auto d = buffers[k].tensor.data();
      for (std::size_t i = 0; i < d.size(); ++i) sum[k][i] += (d[i] - (1.0 - m) * before[k][i]) / m;
    }
  }
  for (std::size_t k = 0; k < buffers.size(); ++k) {
    auto d = buffers[k].tensor.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<Real>(sum[k][i] / static_cast<double>(batches));
  }
}

std::size_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
  std::size_t c = 0;
  for (std::size_t b = 0; b < labels.size(); ++b)
    if (static_cast<int>(argmax_row(logits, b)) == labels[b]) ++c;
  return c;
}

double activity(const Tensor& t) {
  if (t.size() == 0) return 0.0;
  std::size_t nz = 0;
  for (Real v : t.data()) nz += v != 0;
  return static_cast<double>(nz) / static_cast<double>(t.size());
}

std::string rates_text(const std::vector<std::pair<std::string, double>>& rates) {
  std::ostringstream s;
  for (const auto& [name, r] : rates) s << " " << name << "=" << r;
  return s.str();
}

}  // namespace

ModalityBatch PreparedData::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw InvalidInputError("cannot gather an empty batch");
  const Shape& full = streams.joint.shape();
  const std::size_t per = full[1] * full[2] * full[3];
  const Shape shape{indices.size(), full[1], full[2], full[3]};
  ModalityBatch b;
  const std::pair<const Tensor*, Tensor*> pairs[] = {{&streams.joint, &b.streams.joint},
                                                     {&streams.bone, &b.streams.bone},
                                                     {&streams.joint_motion, &b.streams.joint_motion},
                                                     {&streams.bone_motion, &b.streams.bone_motion}};
  for (auto [src, dst] : pairs) {
    *dst = Tensor::zeros(shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= size()) throw InvalidInputError("gather index out of range");
      std::copy_n(src->data().begin() + indices[i] * per, per, dst->data().begin() + i * per);
    }
  }
  for (std::size_t i : indices) b.labels.push_back(labels[i]);
  return b;
}

PreparedData prepare(std::span<const SkeletonSequence> sequences, std::size_t target_frames,
                     const SkeletonTopology& topo) {
  if (sequences.empty()) throw InvalidInputError("prepare: empty input set");
  std::vector<std::size_t> idx(sequences.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  ModalityBatch all = make_batch(sequences, idx, target_frames, topo);
  return PreparedData{std::move(all.streams), std::move(all.labels)};
}

Split split_holdout(const std::vector<SkeletonSequence>& all, std::size_t holdout_every) {
  if (holdout_every < 2) throw InvalidInputError("holdout_every must be >= 2");
  Split s;
  std::map<int, std::size_t> seen;
  for (const auto& seq : all) {
    const std::size_t k = seen[seq.label]++;
    (k % holdout_every == holdout_every - 1 ? s.test : s.train).push_back(seq);
  }
  return s;
}

KdMode KdMode::parse(const std::string& text) {
  KdMode m;
  if (text == "none" || text.empty()) return m;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part == "soft") m.soft = true;
    else if (part == "feature") m.feature = true;
    else throw ConfigError("unknown distillation mode '" + part + "' (expected none, soft, feature)");
  }
  return m;
}

std::string KdMode::str() const {
  if (soft && feature) return "soft,feature";
  if (soft) return "soft";
  if (feature) return "feature";
  return "none";
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t U = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t u = 1; u < U; ++u)
    if (logits[row * U + u] > logits[row * U + best]) best = u;
  return best;
}

std::vector<std::pair<std::string, double>> layer_rates(const StudentOutput& out) {
  std::vector<std::pair<std::string, double>> r;
  for (std::size_t m = 0; m < kNumModalities; ++m)
    r.emplace_back(std::string("ssc.") + kModalityNames[m], firing_rate(out.modality_spikes[m]));
  for (std::size_t b = 0; b < out.block_outputs.size(); ++b)
    r.emplace_back("block" + std::to_string(b + 1), activity(out.block_outputs[b]));
  r.emplace_back("head", firing_rate(out.head_spikes));
  return r;
}

EvalReport evaluate(MkSgnModel& model, const PreparedData& data, std::size_t batch_size) {
  if (batch_size == 0) throw InvalidInputError("batch size must be >= 1");
  const std::size_t U = model.config().num_classes;
  EvalReport rep;
  rep.confusion.assign(U, std::vector<std::size_t>(U, 0));
  NoGradScope ng;
  std::vector<std::size_t> idx;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    idx.clear();
    for (std::size_t i = begin; i < std::min(begin + batch_size, data.size()); ++i) idx.push_back(i);
    const ModalityBatch b = data.gather(idx);
    const StudentOutput out = student_forward(b.streams, model, {});
    for (std::size_t i = 0; i < b.size(); ++i) {
      const std::size_t p = argmax_row(out.logits, i);
      ++rep.confusion.at(static_cast<std::size_t>(b.labels[i])).at(p);
      correct += static_cast<int>(p) == b.labels[i];
    }
  }
  rep.count = data.size();
  rep.accuracy = rep.count ? static_cast<double>(correct) / static_cast<double>(rep.count) : 0.0;
  return rep;
}

EvalReport evaluate_teacher(TeacherModel& teacher, const PreparedData& data, std::size_t batch_size) {
  const std::size_t U = teacher.config().num_classes;
  EvalReport rep;
  rep.confusion.assign(U, std::vector<std::size_t>(U, 0));
  NoGradScope ng;
  std::vector<std::size_t> idx;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    idx.clear();
    for (std::size_t i = begin; i < std::min(begin + batch_size, data.size()); ++i) idx.push_back(i);
    const ModalityBatch b = data.gather(idx);
    const TeacherOutput out = teacher_forward(b.streams, teacher, false);
    const Tensor avg = ops::weighted_sum({out.logits.begin(), out.logits.end()}, {0.25, 0.25, 0.25, 0.25});
    for (std::size_t i = 0; i < b.size(); ++i) {
      const std::size_t p = argmax_row(avg, i);
      ++rep.confusion.at(static_cast<std::size_t>(b.labels[i])).at(p);
      correct += static_cast<int>(p) == b.labels[i];
    }
  }
  rep.count = data.size();
  rep.accuracy = rep.count ? static_cast<double>(correct) / static_cast<double>(rep.count) : 0.0;
  return rep;
}

void train_teacher(TeacherModel& teacher, const PreparedData& data, const TeacherTrainOptions& opt,
                   std::uint64_t seed) {
  Sgd sgd(teacher.parameters(), opt.sgd);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto order = epoch_order(data.size(), seed ^ 0x7ea7c4e5ULL, epoch);
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += opt.batch_size) {
      const std::span<const std::size_t> idx(order.data() + begin,
                                             std::min(opt.batch_size, order.size() - begin));
      const ModalityBatch b = data.gather(idx);
      Tape tape;
      TapeScope scope(tape);
      const TeacherOutput out = teacher_forward(b.streams, teacher, true);
      Tensor loss = task_loss(out.logits[0], b.labels);
      for (std::size_t m = 1; m < kNumModalities; ++m) loss = ops::add(loss, task_loss(out.logits[m], b.labels));
      if (!std::isfinite(loss.item())) throw NumericalError("teacher loss diverged");
      const Tensor avg = ops::weighted_sum({out.logits.begin(), out.logits.end()}, {0.25, 0.25, 0.25, 0.25});
      correct += count_correct(avg, b.labels);
      sgd.zero_grad();
      tape.backward(loss);
      sgd.step();
    }
    if (static_cast<double>(correct) / static_cast<double>(data.size()) >= opt.early_stop_train_acc) break;
  }
  recalibrate_bn(teacher, data, opt.batch_size, seed);
  teacher.freeze();
}

Trainer::Trainer(MkSgnModel& model, TeacherModel* teacher, const TrainOptions& opt, std::uint64_t seed)
    : model_(model), teacher_(teacher), opt_(opt), seed_(seed), meta_(Tensor::zeros({4})) {
  opt_.loss.validate();
  if (opt_.batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (opt_.kd.any() && !teacher_) throw ConfigError("distillation requested without a teacher");
  NamedTensors params = model_.parameters();
  if (opt_.kd.feature) {
    Rng rng(seed ^ 0xf7a1f7a1ULL);
    ftm_ = std::make_unique<FtmPair>(model_.config(), rng);
    append_prefixed(params, "ftm.", ftm_->parameters());
  }
  sgd_ = std::make_unique<Sgd>(params, opt_.sgd);
}

StepMetrics Trainer::train_step(const ModalityBatch& batch) {
  StepMetrics m;
  m.epoch = epoch_;
  m.step = step_;
  m.lr = sgd_->lr();
  Tape tape;
  TapeScope scope(tape);
  ForwardOptions fo;
  fo.training = true;
  fo.train_smic = model_.config().use_smf;
  fo.dropout_seed = seed_ * 0x2545f4914f6cdd1dULL + step_;
  const StudentOutput s = student_forward(batch.streams, model_, fo);
  const Tensor l_task = task_loss(s.logits, batch.labels);
  Tensor l_sdk = Tensor::scalar(0), l_fkd1 = Tensor::scalar(0), l_fkd2 = Tensor::scalar(0);
  if (opt_.kd.any()) {
    TeacherOutput t;
    {
      NoGradScope ng;
      t = teacher_forward(batch.streams, *teacher_, false);
    }
    if (opt_.kd.soft) {
      const Tensor y_mm = aggregate_soft_labels(t.logits[0], t.logits[1], t.logits[2], t.logits[3], opt_.loss);
      l_sdk = sdk_loss(s.logits, y_mm);
    }
    if (opt_.kd.feature) {
      l_fkd1 = fkd_loss(ftm_->modules[0].forward(t.taps[0], true), s.taps[0]);
      l_fkd2 = fkd_loss(ftm_->modules[1].forward(t.taps[1], true), s.taps[1]);
    }
  }
  LossWeights w = opt_.loss;
  if (!opt_.kd.soft) w.gamma2 = 0;
  if (!opt_.kd.feature) w.gamma3 = 0;
  m.firing_rates = layer_rates(s);
  const Tensor loss = [&] {
    try {
      return total_loss(l_task, l_sdk, l_fkd1, l_fkd2, w);
    } catch (const NumericalError&) {
      throw NumericalError("non-finite loss at step " + std::to_string(step_) + "; firing rates:" +
                           rates_text(m.firing_rates));
    }
  }();
  m.loss = loss.item();
  m.l_task = l_task.item();
  m.l_sdk = l_sdk.item();
  m.l_fkd = w.beta1 * l_fkd1.item() + w.beta2 * l_fkd2.item();
  m.acc = static_cast<double>(count_correct(s.logits, batch.labels)) / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < kNumModalities; ++i) m.fusion_weights[i] = s.weights.w[i];
  sgd_->zero_grad();
  tape.backward(loss);
  sgd_->step();
  ++step_;
  if (on_step) on_step(m);
  return m;
}

EpochSummary Trainer::run_epoch(const PreparedData& train) {
  sgd_->set_lr(step_lr(opt_.sgd.lr, opt_.lr_decay, opt_.lr_step, epoch_));
  const auto order = epoch_order(train.size(), seed_, epoch_);
  EpochSummary sum;
  sum.epoch = epoch_;
  double correct = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += opt_.batch_size) {
    const std::span<const std::size_t> idx(order.data() + begin, std::min(opt_.batch_size, order.size() - begin));
    const StepMetrics m = train_step(train.gather(idx));
    sum.loss += m.loss * static_cast<double>(idx.size());
    correct += m.acc * static_cast<double>(idx.size());
    ++sum.steps;
  }
  sum.loss /= static_cast<double>(train.size());
  sum.train_acc = correct / static_cast<double>(train.size());
  ++epoch_;
  if (sum.train_acc >= opt_.early_stop_train_acc) stopped_ = true;
  if (on_epoch) on_epoch(sum);
  return sum;
}

EpochSummary Trainer::fit(const PreparedData& train) {
  EpochSummary last;
  while (!stopped_ && epoch_ < opt_.epochs) last = run_epoch(train);
  recalibrate_bn(model_, train, opt_.batch_size, seed_);
  return last;
}

void recalibrate_bn(MkSgnModel& model, const PreparedData& data, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw InvalidInputError("batch size must be >= 1");
  average_running_stats(model.buffers(), data.size(), batch_size, seed ^ 0xb7e15162ULL,
                        [&](std::span<const std::size_t> idx) {
                          ForwardOptions fo;
                          fo.training = true;
                          student_forward(data.gather(idx).streams, model, fo);
                        });
}

void recalibrate_bn(TeacherModel& teacher, const PreparedData& data, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw InvalidInputError("batch size must be >= 1");
  average_running_stats(teacher.buffers(), data.size(), batch_size, seed ^ 0xb7e15162ULL,
                        [&](std::span<const std::size_t> idx) {
                          teacher_forward(data.gather(idx).streams, teacher, true);
                        });
}

NamedTensors Trainer::state() const {
  NamedTensors out;
  append_prefixed(out, "model.", model_.parameters());
  append_prefixed(out, "model.", model_.buffers());
  if (model_.config().use_smf) {
    append_prefixed(out, "smf.", model_.smf().parameters());
    append_prefixed(out, "smf_opt.", model_.smf().optimizer_state());
  }
  if (ftm_) {
    append_prefixed(out, "ftm.", ftm_->parameters());
    append_prefixed(out, "ftm.", ftm_->buffers());
  }
  append_prefixed(out, "sgd.", sgd_->state());
  Tensor meta = meta_;
  meta[0] = static_cast<Real>(epoch_);
  meta[1] = static_cast<Real>(step_);
  meta[2] = static_cast<Real>(model_.smf().counter());
  meta[3] = stopped_ ? Real(1) : Real(0);
  out.push_back({"meta", meta});
  return out;
}

void Trainer::load_state(const NamedTensors& tensors) {
  std::map<std::string, Tensor> by_name;
  for (const auto& t : tensors) by_name[t.name] = t.tensor;
  for (const auto& target : state()) {
    const auto it = by_name.find(target.name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor '" + target.name + "'");
    if (it->second.shape() != target.tensor.shape())
      throw FormatError("checkpoint tensor '" + target.name + "' has shape " + to_string(it->second.shape()) +
                        ", expected " + to_string(target.tensor.shape()));
    Tensor dst = target.tensor;
    std::copy(it->second.data().begin(), it->second.data().end(), dst.data().begin());
  }
  epoch_ = static_cast<std::size_t>(meta_[0]);
  step_ = static_cast<std::size_t>(meta_[1]);
  model_.smf().set_counter(static_cast<std::uint64_t>(meta_[2]));
  stopped_ = meta_[3] != 0;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
