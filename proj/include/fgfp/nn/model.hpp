#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fgfp/fgf/kernel.hpp"
#include "fgfp/nd/conv.hpp"
#include "fgfp/nd/tensor.hpp"

namespace fgfp::nn {

// Dense convolution without bias. A non-empty mask (same shape as weight,
// entries 0/1) makes it a masked layer: mask == 0 implies weight == 0.
struct Conv2d {
  std::string id;
  nd::Tensor weight;  // [out, in, kh, kw]
  nd::Tensor mask;
  nd::Conv2dGeometry geom;

  bool masked() const { return !mask.empty(); }
};

// Convolution whose kernel is synthesized from FGF scalars on every forward.
// `params` holds out_channels consecutive blocks of spec.param_count().
struct FgfConv2d {
  std::string id;
  fgf::FgfSpec spec;  // dims = (in, kh, kw) of one output filter
  int out_channels = 1;
  nd::Conv2dGeometry geom;
  std::vector<double> params;

  std::span<const double> filter(int o) const {
    const auto n = spec.param_count();
    return std::span<const double>(params).subspan(static_cast<std::size_t>(o) * n, n);
  }
  nd::Tensor synthesize_kernel() const;  // [out, in, kh, kw] in f32
};

struct BatchNorm2d {
  std::string id;
  nd::Tensor gamma, beta;                // learnable, [C]
  nd::Tensor running_mean, running_var;  // [C]
  float eps = 1e-5f;
  float momentum = 0.1f;
};

struct MaxPool2d {
  std::string id;
  int size = 2;  // window == stride
};

struct Relu {
  std::string id;
};

struct Flatten {
  std::string id;
};

struct Linear {
  std::string id;
  nd::Tensor weight;  // [out, in]
  nd::Tensor bias;    // [out]
  nd::Tensor mask;    // empty, or 0/1 over weight

  bool masked() const { return !mask.empty(); }
};

using Layer = std::variant<Conv2d, FgfConv2d, BatchNorm2d, MaxPool2d, Relu, Flatten, Linear>;

enum class LayerKind { conv, fgf_conv, masked_conv, fc, masked_fc, bn, pool, relu, flatten };

const char* kind_name(LayerKind kind);

// Summary of one layer as reported in stage tables and checkpoints.
struct LayerSpec {
  std::string id;
  LayerKind kind;
  std::vector<std::int64_t> dims;        // weight / parameter extents
  std::optional<fgf::FgfKind> fgf_kind;  // fgf_conv only
};

struct ModelMeta {
  std::string name;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::map<std::string, double> metrics;  // e.g. "val_acc", "test_acc", "baseline_acc"
};

struct Model {
  std::vector<Layer> layers;
  nd::Shape input_shape;  // [C, H, W]
  int num_classes = 10;
  ModelMeta meta;
};

const std::string& layer_id(const Layer& layer);
LayerKind layer_kind(const Layer& layer);
LayerSpec describe(const Layer& layer);

// Conv2d and Linear participate in pruning; FGF and batch-norm layers do not.
bool is_prunable(const Layer& layer);

// Weight tensor and mask of a prunable layer (Conv2d or Linear).
nd::Tensor& prunable_weight(Layer& layer);
const nd::Tensor& prunable_weight(const Layer& layer);
nd::Tensor& prunable_mask(Layer& layer);
const nd::Tensor& prunable_mask(const Layer& layer);

std::optional<std::size_t> find_layer(const Model& model, const std::string& id);

enum class Counting { logical, stored };

// logical: FGF layers at their scalar count, masked layers at their nonzero
// weights (+ bias); stored: every learnable buffer at full size. Running
// batch-norm statistics are not parameters.
std::int64_t layer_param_count(const Layer& layer, Counting counting);
std::int64_t param_count(const Model& model, Counting counting);

// Output shape [C, H, W] or [F] after each layer for the declared input
// shape. Throws DimensionError on the first inconsistency.
std::vector<nd::Shape> infer_shapes(const Model& model);

// Checks every invariant: shapes chain to [num_classes], masks are 0/1 and
// zero their weights, FGF parameters are in-domain. Throws IntegrityError.
void validate(const Model& model);

// FNV-1a digest over all parameters and buffers, for determinism checks.
std::uint64_t model_digest(const Model& model);

}  // namespace fgfp::nn
