#pragma once

#include <span>
#include <vector>

#include "fgfp/nn/model.hpp"

namespace fgfp::nn {

// Per-layer state recorded by a training forward pass for the backward pass.
struct LayerCache {
  nd::Tensor input;
  nd::Tensor kernel;               // fgf_conv: synthesized kernel
  nd::Tensor xhat;                 // bn: normalized input
  std::vector<float> invstd;       // bn
  std::vector<std::uint32_t> argmax;  // pool: flat input index per output
};

struct Tape {
  std::vector<LayerCache> caches;
};

// Gradients for one layer. For batch norm, weight/bias hold d gamma / d beta;
// for FGF layers only `fgf` is used.
struct LayerGrads {
  nd::Tensor weight;
  nd::Tensor bias;
  std::vector<double> fgf;
};
using Gradients = std::vector<LayerGrads>;

// Training-mode forward: batch statistics in batch norm (running statistics
// are updated), caches recorded in `tape`. Returns logits [N, classes].
nd::Tensor forward_train(Model& model, const nd::Tensor& batch, Tape& tape);

// Inference forward with running batch-norm statistics. Every sample is
// processed independently, so results do not depend on the batch split.
nd::Tensor predict(const Model& model, const nd::Tensor& batch);

Gradients backward(const Model& model, const Tape& tape, const nd::Tensor& grad_logits);

struct LossAndGrad {
  double loss = 0.0;
  nd::Tensor grad_logits;
};

// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
LossAndGrad softmax_cross_entropy(const nd::Tensor& logits, std::span<const int> labels);

struct StepGradients {
  double loss = 0.0;
  Gradients grads;
};

StepGradients compute_gradients(Model& model, const nd::Tensor& batch, std::span<const int> labels);

// Momentum buffers, lazily shaped to the model on first use.
struct OptimizerState {
  std::vector<std::vector<nd::Tensor>> dense;
  std::vector<std::vector<double>> fgf;
};

// One SGD update. Masked gradients are zeroed and masks re-applied, so pruned
// weights stay exactly 0; FGF parameters are projected back into their domain.
void apply_sgd(Model& model, const Gradients& grads, double lr, double momentum, OptimizerState& state);

// Cross-entropy loss, backward pass and SGD update. Throws NumericError (model
// untouched) if the loss or any gradient is not finite.
double backward_and_step(Model& model, const nd::Tensor& batch, std::span<const int> labels, double lr,
                         double momentum, OptimizerState& state);

}  // namespace fgfp::nn
