#include "fgfp/nn/model.hpp"

#include <cmath>

#include "fgfp/detail/overloaded.hpp"
#include "fgfp/errors.hpp"

namespace fgfp::nn {
namespace {

using detail::overloaded;

std::int64_t count_nonzero(const nd::Tensor& t) {
  std::int64_t n = 0;
  for (float x : t.data()) n += (x != 0.0f);
  return n;
}

std::uint64_t mix(std::uint64_t h, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

nd::Tensor FgfConv2d::synthesize_kernel() const {
  const auto& d = spec.dims;
  nd::Tensor k({out_channels, d.ch, d.kh, d.kw});
  const std::size_t per = d.numel();
  for (int o = 0; o < out_channels; ++o) {
    const auto v = fgf::synthesize(spec, filter(o));
    for (std::size_t q = 0; q < per; ++q) k[o * per + q] = static_cast<float>(v[q]);
  }
  return k;
}

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::fgf_conv: return "fgf_conv";
    case LayerKind::masked_conv: return "masked_conv";
    case LayerKind::fc: return "fc";
    case LayerKind::masked_fc: return "masked_fc";
    case LayerKind::bn: return "bn";
    case LayerKind::pool: return "pool";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

const std::string& layer_id(const Layer& layer) {
  return std::visit([](const auto& l) -> const std::string& { return l.id; }, layer);
}

LayerKind layer_kind(const Layer& layer) {
  return std::visit(overloaded{
                        [](const Conv2d& l) { return l.masked() ? LayerKind::masked_conv : LayerKind::conv; },
                        [](const FgfConv2d&) { return LayerKind::fgf_conv; },
                        [](const BatchNorm2d&) { return LayerKind::bn; },
                        [](const MaxPool2d&) { return LayerKind::pool; },
                        [](const Relu&) { return LayerKind::relu; },
                        [](const Flatten&) { return LayerKind::flatten; },
                        [](const Linear& l) { return l.masked() ? LayerKind::masked_fc : LayerKind::fc; },
                    },
                    layer);
}

LayerSpec describe(const Layer& layer) {
  LayerSpec s{layer_id(layer), layer_kind(layer), {}, std::nullopt};
  std::visit(overloaded{
                 [&](const Conv2d& l) { s.dims = l.weight.shape(); },
                 [&](const FgfConv2d& l) {
                   s.dims = {l.out_channels, l.spec.dims.ch, l.spec.dims.kh, l.spec.dims.kw};
                   s.fgf_kind = l.spec.kind;
                 },
                 [&](const BatchNorm2d& l) { s.dims = l.gamma.shape(); },
                 [&](const MaxPool2d& l) { s.dims = {l.size}; },
                 [](const Relu&) {},
                 [](const Flatten&) {},
                 [&](const Linear& l) { s.dims = l.weight.shape(); },
             },
             layer);
  return s;
}

bool is_prunable(const Layer& layer) {
  return std::holds_alternative<Conv2d>(layer) || std::holds_alternative<Linear>(layer);
}

nd::Tensor& prunable_weight(Layer& layer) {
  if (auto* c = std::get_if<Conv2d>(&layer)) return c->weight;
  if (auto* l = std::get_if<Linear>(&layer)) return l->weight;
  throw UsageError("layer " + layer_id(layer) + " is not prunable");
}

const nd::Tensor& prunable_weight(const Layer& layer) { return prunable_weight(const_cast<Layer&>(layer)); }

nd::Tensor& prunable_mask(Layer& layer) {
  if (auto* c = std::get_if<Conv2d>(&layer)) return c->mask;
  if (auto* l = std::get_if<Linear>(&layer)) return l->mask;
  throw UsageError("layer " + layer_id(layer) + " is not prunable");
}

const nd::Tensor& prunable_mask(const Layer& layer) { return prunable_mask(const_cast<Layer&>(layer)); }

std::optional<std::size_t> find_layer(const Model& model, const std::string& id) {
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (layer_id(model.layers[i]) == id) return i;
  }
  return std::nullopt;
}

std::int64_t layer_param_count(const Layer& layer, Counting counting) {
  const bool logical = counting == Counting::logical;
  return std::visit(overloaded{
                        [&](const Conv2d& l) -> std::int64_t {
                          return logical && l.masked() ? count_nonzero(l.weight)
                                                       : static_cast<std::int64_t>(l.weight.size());
                        },
                        [](const FgfConv2d& l) -> std::int64_t { return static_cast<std::int64_t>(l.params.size()); },
                        [](const BatchNorm2d& l) -> std::int64_t {
                          return static_cast<std::int64_t>(l.gamma.size() + l.beta.size());
                        },
                        [](const MaxPool2d&) -> std::int64_t { return 0; },
                        [](const Relu&) -> std::int64_t { return 0; },
                        [](const Flatten&) -> std::int64_t { return 0; },
                        [&](const Linear& l) -> std::int64_t {
                          const std::int64_t w = logical && l.masked() ? count_nonzero(l.weight)
                                                                       : static_cast<std::int64_t>(l.weight.size());
                          return w + static_cast<std::int64_t>(l.bias.size());
                        },
                    },
                    layer);
}

std::int64_t param_count(const Model& model, Counting counting) {
  std::int64_t n = 0;
  for (const auto& l : model.layers) n += layer_param_count(l, counting);
  return n;
}

std::vector<nd::Shape> infer_shapes(const Model& model) {
  if (model.input_shape.size() != 3) throw DimensionError("model input shape must be [C, H, W]");
  nd::Shape cur = model.input_shape;
  std::vector<nd::Shape> shapes;
  auto conv_out = [&](std::int64_t cout, std::int64_t cin, std::int64_t kh, std::int64_t kw, nd::Conv2dGeometry g,
                      const std::string& id) {
    if (cur.size() != 3 || cur[0] != cin) {
      throw DimensionError(id + ": expects " + std::to_string(cin) + " input channels, got " + nd::shape_str(cur));
    }
    const auto ho = (cur[1] + 2 * g.pad - kh) / g.stride + 1, wo = (cur[2] + 2 * g.pad - kw) / g.stride + 1;
    if (kh > cur[1] + 2 * g.pad || kw > cur[2] + 2 * g.pad) throw DimensionError(id + ": kernel larger than input");
    return nd::Shape{cout, ho, wo};
  };
  for (const auto& layer : model.layers) {
    const auto& id = layer_id(layer);
    cur = std::visit(
        overloaded{
            [&](const Conv2d& l) {
              const auto& s = l.weight.shape();
              return conv_out(s[0], s[1], s[2], s[3], l.geom, id);
            },
            [&](const FgfConv2d& l) {
              return conv_out(l.out_channels, l.spec.dims.ch, l.spec.dims.kh, l.spec.dims.kw, l.geom, id);
            },
            [&](const BatchNorm2d& l) {
              if (cur.size() != 3 || cur[0] != static_cast<std::int64_t>(l.gamma.size())) {
                throw DimensionError(id + ": channel count mismatch " + nd::shape_str(cur));
              }
              return cur;
            },
            [&](const MaxPool2d& l) {
              if (cur.size() != 3 || cur[1] < l.size || cur[2] < l.size) throw DimensionError(id + ": input too small");
              return nd::Shape{cur[0], cur[1] / l.size, cur[2] / l.size};
            },
            [&](const Relu&) { return cur; },
            [&](const Flatten&) { return nd::Shape{nd::shape_numel(cur)}; },
            [&](const Linear& l) {
              if (cur.size() != 1 || cur[0] != l.weight.dim(1)) {
                throw DimensionError(id + ": expects " + std::to_string(l.weight.dim(1)) + " features, got " +
                                     nd::shape_str(cur));
              }
              return nd::Shape{l.weight.dim(0)};
            },
        },
        layer);
    shapes.push_back(cur);
  }
  if (cur != nd::Shape{model.num_classes}) {
    throw DimensionError("model output " + nd::shape_str(cur) + " does not match " + std::to_string(model.num_classes) +
                         " classes");
  }
  return shapes;
}

void validate(const Model& model) {
  try {
    infer_shapes(model);
  } catch (const DimensionError& e) {
    throw IntegrityError(e.what());
  }
  for (const auto& layer : model.layers) {
    const auto& id = layer_id(layer);
    if (is_prunable(layer)) {
      const auto& w = prunable_weight(layer);
      const auto& m = prunable_mask(layer);
      if (!m.empty()) {
        if (m.shape() != w.shape()) throw IntegrityError(id + ": mask shape differs from weight shape");
        for (std::size_t i = 0; i < m.size(); ++i) {
          if (m[i] != 0.0f && m[i] != 1.0f) throw IntegrityError(id + ": mask entry is not 0/1");
          if (m[i] == 0.0f && w[i] != 0.0f) {
            throw IntegrityError(id + ": nonzero weight under a zero mask bit at index " + std::to_string(i));
          }
        }
      }
    }
    if (const auto* f = std::get_if<FgfConv2d>(&layer)) {
      if (f->params.size() != f->spec.param_count() * static_cast<std::size_t>(f->out_channels)) {
        throw IntegrityError(id + ": FGF parameter block has the wrong length");
      }
      for (int o = 0; o < f->out_channels; ++o) {
        if (!fgf::params_in_domain(f->spec, f->filter(o))) {
          throw IntegrityError(id + ": FGF parameters of filter " + std::to_string(o) + " are out of domain");
        }
      }
    }
  }
}

std::uint64_t model_digest(const Model& model) {
  std::uint64_t h = 1469598103934665603ull;
  auto t = [&](const nd::Tensor& x) { h = mix(h, x.data().data(), x.size() * sizeof(float)); };
  for (const auto& layer : model.layers) {
    h = mix(h, layer_id(layer).data(), layer_id(layer).size());
    std::visit(overloaded{
                   [&](const Conv2d& l) { t(l.weight); t(l.mask); },
                   [&](const FgfConv2d& l) { h = mix(h, l.params.data(), l.params.size() * sizeof(double)); },
                   [&](const BatchNorm2d& l) { t(l.gamma); t(l.beta); t(l.running_mean); t(l.running_var); },
                   [](const MaxPool2d&) {},
                   [](const Relu&) {},
                   [](const Flatten&) {},
                   [&](const Linear& l) { t(l.weight); t(l.bias); t(l.mask); },
               },
               layer);
  }
  return h;
}

}  // namespace fgfp::nn
