#include "fgfp/nn/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "fgfp/errors.hpp"

namespace fgfp::nn {

void TrainConfig::check() const {
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw UsageError("lr must be > 0");
  if (!(epochs >= 0.0)) throw UsageError("epochs must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw UsageError("momentum must be in [0, 1)");
}

double TrainConfig::lr_at(std::int64_t step, std::int64_t total_steps) const {
  double rate = lr;
  if (total_steps <= 0) return rate;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  for (const auto& [at, factor] : lr_schedule) {
    if (progress >= at) rate *= factor;
  }
  return rate;
}

std::string format_log(const LogRecord& r) {
  char buf[160];
  if (r.split_acc >= 0.0) {
    std::snprintf(buf, sizeof buf, "%d,%lld,%.6f,%.6g,%.4f", r.epoch, static_cast<long long>(r.step), r.loss, r.lr,
                  r.split_acc);
  } else {
    std::snprintf(buf, sizeof buf, "%d,%lld,%.6f,%.6g,", r.epoch, static_cast<long long>(r.step), r.loss, r.lr);
  }
  return buf;
}

TrainResult train(Model& model, const data::Dataset& train, const TrainConfig& cfg, const data::Dataset* val,
                  const LogSink& sink) {
  cfg.check();
  if (train.size() == 0) throw UsageError("training split is empty");
  data::BatchIterator it(train, cfg.batch_size, cfg.seed, cfg.augment);
  const auto per_epoch = static_cast<std::int64_t>(it.batches_per_epoch());
  const auto total = static_cast<std::int64_t>(std::ceil(cfg.epochs * static_cast<double>(per_epoch) - 1e-9));

  TrainResult result;
  OptimizerState opt;
  data::Batch batch;
  double running = 0.0;
  int running_n = 0;
  auto emit = [&](LogRecord r) {
    result.log.push_back(r);
    if (sink) sink(r);
  };
  for (std::int64_t step = 0; step < total; ++step) {
    it.next(batch);
    const double lr = cfg.lr_at(step, total);
    const double loss = backward_and_step(model, batch.images, batch.labels, lr, cfg.momentum, opt);
    result.last_loss = loss;
    result.steps = step + 1;
    running += loss;
    ++running_n;
    const bool epoch_end = (step + 1) % per_epoch == 0 || step + 1 == total;
    const bool periodic = cfg.log_every > 0 && (step + 1) % cfg.log_every == 0;
    if (epoch_end || periodic) {
      LogRecord r;
      r.epoch = static_cast<int>(step / per_epoch) + 1;
      r.step = step + 1;
      r.loss = running / running_n;
      r.lr = lr;
      if (epoch_end && val && val->size() > 0) r.split_acc = evaluate(model, *val);
      emit(r);
      running = 0.0;
      running_n = 0;
    }
  }
  model.meta.epoch += static_cast<int>((total + per_epoch - 1) / std::max<std::int64_t>(per_epoch, 1));
  return result;
}

double evaluate(const Model& model, const data::Dataset& split, int batch_size) {
  if (split.size() == 0) throw UsageError("cannot evaluate on an empty split");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < split.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(split.size(), begin + static_cast<std::size_t>(batch_size));
    const auto b = data::slice(split, begin, end);
    const auto logits = predict(model, b.images);
    const auto k = logits.dim(1);
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < k; ++j) {
        if (logits[i * k + j] > logits[i * k + best]) best = j;
      }
      if (best == b.labels[i]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(split.size());
}

Model build_small_cnn(const CnnShape& shape, std::uint64_t seed) {
  if (shape.input.size() != 3) throw UsageError("input shape must be [C, H, W]");
  if (shape.kernel < 1 || shape.kernel % 2 == 0) throw UsageError("kernel size must be odd");
  Rng rng = Rng::derive(seed, "init");
  Model m;
  m.input_shape = shape.input;
  m.num_classes = shape.num_classes;
  m.meta.name = "small_cnn";
  m.meta.seed = seed;

  auto kaiming = [&](nd::Shape s, std::int64_t fan_in) {
    nd::Tensor t(std::move(s));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data()) v = static_cast<float>(rng.normal() * std);
    return t;
  };

  std::int64_t ch = shape.input[0], h = shape.input[1], w = shape.input[2];
  const std::int64_t k = shape.kernel;
  for (std::size_t i = 0; i < shape.widths.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    const std::int64_t out = shape.widths[i];
    Conv2d conv{"conv" + n, kaiming({out, ch, k, k}, ch * k * k), {}, {1, static_cast<int>(k / 2)}};
    m.layers.emplace_back(std::move(conv));
    BatchNorm2d bn;
    bn.id = "bn" + n;
    bn.gamma = nd::Tensor({out}, 1.0f);
    bn.beta = nd::Tensor({out}, 0.0f);
    bn.running_mean = nd::Tensor({out}, 0.0f);
    bn.running_var = nd::Tensor({out}, 1.0f);
    m.layers.emplace_back(std::move(bn));
    m.layers.emplace_back(Relu{"relu" + n});
    m.layers.emplace_back(MaxPool2d{"pool" + n, 2});
    ch = out;
    h /= 2;
    w /= 2;
    if (h < 1 || w < 1) throw UsageError("input too small for " + std::to_string(shape.widths.size()) + " blocks");
  }
  m.layers.emplace_back(Flatten{"flatten"});
  const std::int64_t feat = ch * h * w;
  Linear fc{"fc", kaiming({shape.num_classes, feat}, feat), nd::Tensor({shape.num_classes}, 0.0f), {}};
  m.layers.emplace_back(std::move(fc));
  validate(m);
  return m;
}

}  // namespace fgfp::nn
