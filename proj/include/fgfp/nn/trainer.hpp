#pragma once

#include <functional>
#include <map>
#include <ostream>
#include <string>

#include "fgfp/data/dataset.hpp"
#include "fgfp/nn/engine.hpp"

namespace fgfp::nn {

struct TrainConfig {
  int batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double epochs = 1.0;  // fractional budgets allowed; rounded up to whole batches
  std::uint64_t seed = 0;
  // fraction of the run -> lr multiplier applied from that point on
  std::map<double, double> lr_schedule{{0.5, 0.1}, {0.75, 0.1}};
  bool augment = false;
  int log_every = 0;  // steps between log records; 0 logs once per epoch only

  void check() const;  // UsageError unless batch_size >= 1, lr > 0, epochs >= 0
  double lr_at(std::int64_t step, std::int64_t total_steps) const;
};

struct LogRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double split_acc = -1.0;  // negative when not evaluated at this record
};

// "epoch,step,loss,lr,split_acc"
std::string format_log(const LogRecord& r);

struct TrainResult {
  std::int64_t steps = 0;
  double last_loss = 0.0;
  std::vector<LogRecord> log;
};

using LogSink = std::function<void(const LogRecord&)>;

// SGD over `train`. When `val` is given its accuracy is recorded at the end of
// every epoch and on the final record. Throws NumericError on a non-finite
// loss; the model keeps the last finite parameters.
TrainResult train(Model& model, const data::Dataset& train, const TrainConfig& cfg,
                  const data::Dataset* val = nullptr, const LogSink& sink = {});

// Top-1 accuracy in percent. Throws UsageError on an empty split.
double evaluate(const Model& model, const data::Dataset& split, int batch_size = 256);

// Small CNN: three conv-bn-relu-pool blocks then a linear classifier.
// Layer ids conv1/bn1/relu1/pool1 ... conv3/.../pool3, flatten, fc.
struct CnnShape {
  nd::Shape input{1, 28, 28};
  int num_classes = 10;
  std::vector<int> widths{16, 32, 32};
  int kernel = 3;
};

// Kaiming-normal conv/fc weights drawn from the "init" substream of `seed`.
Model build_small_cnn(const CnnShape& shape, std::uint64_t seed);

}  // namespace fgfp::nn
