#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pabm/checkpoint.hpp"
#include "pabm/data.hpp"
#include "pabm/model.hpp"
#include "pabm/optim.hpp"

namespace pabm {

// Seed derivations: FPS seeds are stable across epochs (a sample keeps its
// patchification for the whole run); augmentation, dropout and masking
// streams vary per (epoch, sample).
inline uint64_t fps_seed_for(uint64_t run_seed, size_t sample_index) {
  return Rng::mix(run_seed, 0xF5000000ULL + sample_index);
}
inline uint64_t epoch_sample_seed(uint64_t run_seed, uint64_t salt, size_t epoch,
                                  size_t sample_index) {
  return Rng::mix(Rng::mix(run_seed, salt + epoch), sample_index);
}

struct TrainOptions {
  size_t epochs = 50;
  size_t batch_size = 16;
  double lr_max = 1e-3;
  double lr_min = 1e-6;
  double weight_decay = 0.05;
  uint64_t seed = 0;
  AugmentSpec augment;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<size_t> per_class_correct;
  std::vector<size_t> per_class_total;
};

// Deterministic evaluation pass: no augmentation, no dropout, no graph.
inline EvalResult evaluate(const ClassifierModel& model, const Dataset& ds,
                           uint64_t run_seed) {
  check(!ds.samples.empty(), "evaluate: empty dataset");
  NoGradGuard ng;
  EvalResult res;
  res.per_class_correct.assign(model.cfg.num_classes, 0);
  res.per_class_total.assign(model.cfg.num_classes, 0);
  size_t correct = 0;
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const PointCloud& c = ds.samples[i];
    Tensor logits = forward_logits(c, model, fps_seed_for(run_seed, i));
    res.mean_loss += cross_entropy_logits(logits, static_cast<size_t>(c.label)).item();
    size_t pred = predict_class(logits);
    res.per_class_total[static_cast<size_t>(c.label)] += 1;
    if (pred == static_cast<size_t>(c.label)) {
      ++correct;
      res.per_class_correct[static_cast<size_t>(c.label)] += 1;
    }
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(ds.samples.size());
  res.mean_loss /= static_cast<double>(ds.samples.size());
  return res;
}

struct EpochResult {
  double mean_loss = 0.0;
  double last_lr = 0.0;
};

// One epoch of shuffled mini-batches; one AdamW update per batch, cosine
// learning rate per step.
inline EpochResult train_epoch_classifier(ClassifierModel& model, const Dataset& ds,
                                          std::vector<Tensor>& params, AdamWState& state,
                                          const TrainOptions& opts, size_t epoch,
                                          int64_t total_steps, int64_t& global_step,
                                          Rng& shuffle_rng) {
  check(!ds.samples.empty(), "train_epoch: empty dataset");
  std::vector<size_t> order = all_positions(ds.samples.size());
  shuffle_rng.shuffle(order);
  EpochResult er;
  size_t batches = 0;
  for (size_t start = 0; start < order.size(); start += opts.batch_size) {
    size_t end = std::min(order.size(), start + opts.batch_size);
    for (Tensor& p : params) p.zero_grad();
    Tensor total = Tensor::scalar(0.0);
    for (size_t bi = start; bi < end; ++bi) {
      size_t idx = order[bi];
      const PointCloud& raw = ds.samples[idx];
      Rng aug_rng(epoch_sample_seed(opts.seed, 0xA4600000ULL, epoch, idx));
      PointCloud cloud = augment(raw, opts.augment, aug_rng);
      cloud.label = raw.label;
      Rng drop_rng(epoch_sample_seed(opts.seed, 0xD8000000ULL, epoch, idx));
      Tensor logits = forward_logits(cloud, model, fps_seed_for(opts.seed, idx),
                                     /*train_mode=*/true, &drop_rng);
      total = total + cross_entropy_logits(logits, static_cast<size_t>(raw.label));
    }
    Tensor loss = scalar_mul(total, 1.0 / static_cast<double>(end - start));
    er.mean_loss += loss.item();
    loss.backward();
    er.last_lr = cosine_lr(global_step, total_steps, opts.lr_max, opts.lr_min);
    state.lr = er.last_lr;
    adamw_step(params, state);
    ++global_step;
    ++batches;
  }
  er.mean_loss /= static_cast<double>(batches);
  return er;
}

// MAE pretraining epoch: Chamfer reconstruction of masked patches.
inline EpochResult train_epoch_mae(MaeModel& model, const Dataset& ds,
                                   std::vector<Tensor>& params, AdamWState& state,
                                   const TrainOptions& opts, size_t epoch,
                                   int64_t total_steps, int64_t& global_step,
                                   Rng& shuffle_rng) {
  check(!ds.samples.empty(), "train_epoch_mae: empty dataset");
  std::vector<size_t> order = all_positions(ds.samples.size());
  shuffle_rng.shuffle(order);
  EpochResult er;
  size_t batches = 0;
  for (size_t start = 0; start < order.size(); start += opts.batch_size) {
    size_t end = std::min(order.size(), start + opts.batch_size);
    for (Tensor& p : params) p.zero_grad();
    Tensor total = Tensor::scalar(0.0);
    for (size_t bi = start; bi < end; ++bi) {
      size_t idx = order[bi];
      const PointCloud& raw = ds.samples[idx];
      Rng aug_rng(epoch_sample_seed(opts.seed, 0xA4600000ULL, epoch, idx));
      PointCloud cloud = augment(raw, opts.augment, aug_rng);
      Rng mask_rng(epoch_sample_seed(opts.seed, 0x3A5C0000ULL, epoch, idx));
      total = total + mae_loss(cloud, model, fps_seed_for(opts.seed, idx), mask_rng);
    }
    Tensor loss = scalar_mul(total, 1.0 / static_cast<double>(end - start));
    er.mean_loss += loss.item();
    loss.backward();
    er.last_lr = cosine_lr(global_step, total_steps, opts.lr_max, opts.lr_min);
    state.lr = er.last_lr;
    adamw_step(params, state);
    ++global_step;
    ++batches;
  }
  er.mean_loss /= static_cast<double>(batches);
  return er;
}

struct EpochMetrics {
  size_t epoch = 0;
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_acc = std::numeric_limits<double>::quiet_NaN();
  double val_acc = std::numeric_limits<double>::quiet_NaN();
};

// CSV rows, one per epoch; NaN cells print empty.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : out_(path, std::ios::binary) {
    check(out_.good(), "metrics: cannot open " + path);
    out_ << "epoch,step,lr,loss,train_acc,val_acc\n";
    out_.flush();
  }

  void append(const EpochMetrics& m) {
    out_ << m.epoch << ',' << m.step << ',' << cell(m.lr) << ',' << cell(m.loss) << ','
         << cell(m.train_acc) << ',' << cell(m.val_acc) << '\n';
    out_.flush();
  }

 private:
  static std::string cell(double v) {
    if (std::isnan(v)) return "";
    return strformat("%.10g", v);
  }
  std::ofstream out_;
};

inline int64_t steps_per_epoch(size_t n_samples, size_t batch_size) {
  return static_cast<int64_t>((n_samples + batch_size - 1) / batch_size);
}

using EpochCallback = std::function<void(size_t epoch, const EpochMetrics&)>;

// Full classification training run; test_ds may be null.
inline std::vector<EpochMetrics> train_classifier(ClassifierModel& model,
                                                  const Dataset& train_ds,
                                                  const Dataset* test_ds,
                                                  const TrainOptions& opts,
                                                  const EpochCallback& on_epoch = {}) {
  std::vector<Tensor> params = model.params.tensors();
  AdamWState state = AdamWState::init(params);
  state.weight_decay = opts.weight_decay;
  int64_t total_steps =
      std::max<int64_t>(1, static_cast<int64_t>(opts.epochs) *
                               steps_per_epoch(train_ds.size(), opts.batch_size));
  int64_t global_step = 0;
  Rng shuffle_rng(Rng::mix(opts.seed, 0x54aff1e));
  std::vector<EpochMetrics> all;
  for (size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    EpochResult er = train_epoch_classifier(model, train_ds, params, state, opts, epoch,
                                            total_steps, global_step, shuffle_rng);
    EpochMetrics m;
    m.epoch = epoch;
    m.step = global_step;
    m.lr = er.last_lr;
    m.loss = er.mean_loss;
    m.train_acc = evaluate(model, train_ds, opts.seed).accuracy;
    if (test_ds) m.val_acc = evaluate(model, *test_ds, opts.seed).accuracy;
    all.push_back(m);
    if (on_epoch) on_epoch(epoch, m);
  }
  return all;
}

// MAE pretraining run (labels ignored).
inline std::vector<EpochMetrics> train_mae(MaeModel& model, const Dataset& train_ds,
                                           const TrainOptions& opts,
                                           const EpochCallback& on_epoch = {}) {
  std::vector<Tensor> params = model.params.tensors();
  AdamWState state = AdamWState::init(params);
  state.weight_decay = opts.weight_decay;
  int64_t total_steps =
      std::max<int64_t>(1, static_cast<int64_t>(opts.epochs) *
                               steps_per_epoch(train_ds.size(), opts.batch_size));
  int64_t global_step = 0;
  Rng shuffle_rng(Rng::mix(opts.seed, 0x54aff1e));
  std::vector<EpochMetrics> all;
  for (size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    EpochResult er = train_epoch_mae(model, train_ds, params, state, opts, epoch,
                                     total_steps, global_step, shuffle_rng);
    EpochMetrics m;
    m.epoch = epoch;
    m.step = global_step;
    m.lr = er.last_lr;
    m.loss = er.mean_loss;
    all.push_back(m);
    if (on_epoch) on_epoch(epoch, m);
  }
  return all;
}

// Encoder-only checkpoint for fine-tuning with cmd train --init.
inline Checkpoint encoder_checkpoint(const MaeModel& model, json metadata) {
  Checkpoint ckpt;
  ckpt.config = model.cfg;
  ckpt.metadata = std::move(metadata);
  for (const auto& [name, t] : model.params.items())
    if (name.rfind("encoder.", 0) == 0) ckpt.tensors.emplace_back(name, t);
  return ckpt;
}

}  // namespace pabm
