#include "fgfp/nn/engine.hpp"

#include <cmath>
#include <limits>

#include "fgfp/detail/overloaded.hpp"
#include "fgfp/errors.hpp"
#include "fgfp/nd/parallel.hpp"

namespace fgfp::nn {
namespace {

using detail::overloaded;

nd::Tensor linear_forward(const nd::Tensor& x, const Linear& l) {
  const auto n = x.dim(0), in = l.weight.dim(1), out = l.weight.dim(0);
  if (x.size() != static_cast<std::size_t>(n * in)) throw DimensionError(l.id + ": input feature mismatch");
  nd::Tensor y({n, out});
  for (std::int64_t i = 0; i < n; ++i) {
    const float* xi = x.data().data() + i * in;
    for (std::int64_t o = 0; o < out; ++o) {
      const float* w = l.weight.data().data() + o * in;
      double s = l.bias[o];
      for (std::int64_t k = 0; k < in; ++k) s += static_cast<double>(w[k]) * xi[k];
      y[i * out + o] = static_cast<float>(s);
    }
  }
  return y;
}

nd::Tensor maxpool_forward(const nd::Tensor& x, int size, std::vector<std::uint32_t>* argmax) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ho = h / size, wo = w / size;
  nd::Tensor y({n, c, ho, wo});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (std::int64_t p = 0; p < n * c; ++p) {
    const float* src = x.data().data() + p * h * w;
    for (std::int64_t i = 0; i < ho; ++i) {
      for (std::int64_t j = 0; j < wo; ++j, ++o) {
        std::int64_t best = (i * size) * w + j * size;
        for (int di = 0; di < size; ++di) {
          for (int dj = 0; dj < size; ++dj) {
            const std::int64_t q = (i * size + di) * w + (j * size + dj);
            if (src[q] > src[best]) best = q;
          }
        }
        y[o] = src[best];
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(p * h * w + best);
      }
    }
  }
  return y;
}

nd::Tensor bn_eval(const nd::Tensor& x, const BatchNorm2d& l) {
  const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  nd::Tensor y(x.shape());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double scale = l.gamma[ch] / std::sqrt(static_cast<double>(l.running_var[ch]) + l.eps);
    const double shift = l.beta[ch] - scale * l.running_mean[ch];
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t off = (i * c + ch) * plane;
      for (std::int64_t q = 0; q < plane; ++q) y[off + q] = static_cast<float>(scale * x[off + q] + shift);
    }
  }
  return y;
}

nd::Tensor bn_train(const nd::Tensor& x, BatchNorm2d& l, LayerCache& cache) {
  const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const double m = static_cast<double>(n * plane);
  nd::Tensor y(x.shape());
  cache.xhat = nd::Tensor(x.shape());
  cache.invstd.assign(c, 0.0f);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t off = (i * c + ch) * plane;
      for (std::int64_t q = 0; q < plane; ++q) sum += x[off + q];
    }
    const double mean = sum / m;
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t off = (i * c + ch) * plane;
      for (std::int64_t q = 0; q < plane; ++q) sq += (x[off + q] - mean) * (x[off + q] - mean);
    }
    const double var = sq / m;
    const double invstd = 1.0 / std::sqrt(var + l.eps);
    cache.invstd[ch] = static_cast<float>(invstd);
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t off = (i * c + ch) * plane;
      for (std::int64_t q = 0; q < plane; ++q) {
        const double xh = (x[off + q] - mean) * invstd;
        cache.xhat[off + q] = static_cast<float>(xh);
        y[off + q] = static_cast<float>(l.gamma[ch] * xh + l.beta[ch]);
      }
    }
    const double unbiased = m > 1.0 ? sq / (m - 1.0) : var;
    l.running_mean[ch] = static_cast<float>((1.0 - l.momentum) * l.running_mean[ch] + l.momentum * mean);
    l.running_var[ch] = static_cast<float>((1.0 - l.momentum) * l.running_var[ch] + l.momentum * unbiased);
  }
  return y;
}

template <bool Train>
nd::Tensor run_forward(std::conditional_t<Train, Model&, const Model&> model, const nd::Tensor& batch, Tape* tape) {
  nd::Shape want = model.input_shape;
  want.insert(want.begin(), batch.rank() == 4 ? batch.dim(0) : 0);
  nd::require_shape(batch.shape(), want, "model input batch");
  if (tape) tape->caches.assign(model.layers.size(), {});

  nd::Tensor x = batch;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    auto& layer = model.layers[li];
    LayerCache* cache = tape ? &tape->caches[li] : nullptr;
    if (cache) cache->input = x;
    x = std::visit(
        [&](auto& l) -> nd::Tensor {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Conv2d>) {
            return nd::conv2d_forward(x, l.weight, l.geom);
          } else if constexpr (std::is_same_v<L, FgfConv2d>) {
            nd::Tensor k = l.synthesize_kernel();
            nd::Tensor y = nd::conv2d_forward(x, k, l.geom);
            if (cache) cache->kernel = std::move(k);
            return y;
          } else if constexpr (std::is_same_v<L, BatchNorm2d>) {
            if constexpr (Train) {
              return bn_train(x, l, *cache);
            } else {
              return bn_eval(x, l);
            }
          } else if constexpr (std::is_same_v<L, MaxPool2d>) {
            return maxpool_forward(x, l.size, cache ? &cache->argmax : nullptr);
          } else if constexpr (std::is_same_v<L, Relu>) {
            nd::Tensor y = x;
            for (auto& v : y.data()) v = v > 0.0f ? v : 0.0f;
            return y;
          } else if constexpr (std::is_same_v<L, Flatten>) {
            return x.reshaped({x.dim(0), static_cast<std::int64_t>(x.size()) / x.dim(0)});
          } else {
            return linear_forward(x, l);
          }
        },
        layer);
  }
  return x;
}

void check_finite(const nd::Tensor& t, const std::string& what) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite gradient in " + what);
  }
}

}  // namespace

nd::Tensor forward_train(Model& model, const nd::Tensor& batch, Tape& tape) {
  return run_forward<true>(model, batch, &tape);
}

nd::Tensor predict(const Model& model, const nd::Tensor& batch) { return run_forward<false>(model, batch, nullptr); }

Gradients backward(const Model& model, const Tape& tape, const nd::Tensor& grad_logits) {
  if (tape.caches.size() != model.layers.size()) throw UsageError("tape does not match model");
  Gradients grads(model.layers.size());
  nd::Tensor g = grad_logits;
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const auto& cache = tape.caches[li];
    const auto& x = cache.input;
    auto& out = grads[li];
    const bool need_input = li > 0;
    g = std::visit(
        overloaded{
            [&](const Conv2d& l) {
              auto r = nd::conv2d_backward(g, x, l.weight, l.geom, need_input);
              out.weight = std::move(r.grad_kernel);
              return std::move(r.grad_input);
            },
            [&](const FgfConv2d& l) {
              auto r = nd::conv2d_backward(g, x, cache.kernel, l.geom, need_input);
              const std::size_t per_kernel = l.spec.dims.numel(), per_params = l.spec.param_count();
              out.fgf.assign(l.params.size(), 0.0);
              for (int o = 0; o < l.out_channels; ++o) {
                const auto slice = r.grad_kernel.data().subspan(o * per_kernel, per_kernel);
                const std::vector<double> up(slice.begin(), slice.end());
                const auto pg = fgf::param_grads(l.spec, l.filter(o), up);
                std::copy(pg.begin(), pg.end(), out.fgf.begin() + static_cast<std::ptrdiff_t>(o * per_params));
              }
              return std::move(r.grad_input);
            },
            [&](const BatchNorm2d& l) {
              const auto n = g.dim(0), c = g.dim(1), plane = g.dim(2) * g.dim(3);
              const double m = static_cast<double>(n * plane);
              out.weight = nd::Tensor({c});
              out.bias = nd::Tensor({c});
              nd::Tensor gx(g.shape());
              for (std::int64_t ch = 0; ch < c; ++ch) {
                double sg = 0.0, sgx = 0.0;
                for (std::int64_t i = 0; i < n; ++i) {
                  const std::int64_t off = (i * c + ch) * plane;
                  for (std::int64_t q = 0; q < plane; ++q) {
                    sg += g[off + q];
                    sgx += static_cast<double>(g[off + q]) * cache.xhat[off + q];
                  }
                }
                out.weight[ch] = static_cast<float>(sgx);
                out.bias[ch] = static_cast<float>(sg);
                const double k = l.gamma[ch] * cache.invstd[ch] / m;
                for (std::int64_t i = 0; i < n; ++i) {
                  const std::int64_t off = (i * c + ch) * plane;
                  for (std::int64_t q = 0; q < plane; ++q) {
                    gx[off + q] = static_cast<float>(k * (m * g[off + q] - sg - cache.xhat[off + q] * sgx));
                  }
                }
              }
              return gx;
            },
            [&](const MaxPool2d&) {
              nd::Tensor gx(x.shape());
              for (std::size_t o = 0; o < g.size(); ++o) gx[cache.argmax[o]] += g[o];
              return gx;
            },
            [&](const Relu&) {
              nd::Tensor gx = g;
              for (std::size_t i = 0; i < gx.size(); ++i) {
                if (!(x[i] > 0.0f)) gx[i] = 0.0f;
              }
              return gx;
            },
            [&](const Flatten&) { return g.reshaped(x.shape()); },
            [&](const Linear& l) {
              const auto n = x.dim(0), in = l.weight.dim(1), outf = l.weight.dim(0);
              out.weight = nd::Tensor(l.weight.shape());
              out.bias = nd::Tensor(l.bias.shape());
              for (std::int64_t o = 0; o < outf; ++o) {
                double sb = 0.0;
                for (std::int64_t i = 0; i < n; ++i) sb += g[i * outf + o];
                out.bias[o] = static_cast<float>(sb);
                for (std::int64_t k = 0; k < in; ++k) {
                  double s = 0.0;
                  for (std::int64_t i = 0; i < n; ++i) s += static_cast<double>(g[i * outf + o]) * x[i * in + k];
                  out.weight[o * in + k] = static_cast<float>(s);
                }
              }
              nd::Tensor gx(x.shape());
              if (need_input) {
                for (std::int64_t i = 0; i < n; ++i) {
                  for (std::int64_t k = 0; k < in; ++k) {
                    double s = 0.0;
                    for (std::int64_t o = 0; o < outf; ++o) s += static_cast<double>(g[i * outf + o]) * l.weight[o * in + k];
                    gx[i * in + k] = static_cast<float>(s);
                  }
                }
              }
              return gx;
            },
        },
        model.layers[li]);
  }
  return grads;
}

LossAndGrad softmax_cross_entropy(const nd::Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size()) {
    throw DimensionError("logits " + nd::shape_str(logits.shape()) + " do not match " + std::to_string(labels.size()) +
                         " labels");
  }
  const auto n = logits.dim(0), k = logits.dim(1);
  LossAndGrad r;
  r.grad_logits = nd::Tensor(logits.shape());
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= k) throw UsageError("label " + std::to_string(y) + " out of range");
    const float* z = logits.data().data() + i * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(z[j]));
    double se = 0.0;
    for (std::int64_t j = 0; j < k; ++j) se += std::exp(z[j] - mx);
    const double lse = mx + std::log(se);
    total += lse - z[y];
    for (std::int64_t j = 0; j < k; ++j) {
      const double p = std::exp(z[j] - lse);
      r.grad_logits[i * k + j] = static_cast<float>((p - (j == y ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

StepGradients compute_gradients(Model& model, const nd::Tensor& batch, std::span<const int> labels) {
  Tape tape;
  const nd::Tensor logits = forward_train(model, batch, tape);
  auto lg = softmax_cross_entropy(logits, labels);
  if (!std::isfinite(lg.loss)) throw NumericError("non-finite training loss");
  return {lg.loss, backward(model, tape, lg.grad_logits)};
}

void apply_sgd(Model& model, const Gradients& grads, double lr, double momentum, OptimizerState& state) {
  if (grads.size() != model.layers.size()) throw UsageError("gradients do not match model");
  for (std::size_t li = 0; li < grads.size(); ++li) {
    check_finite(grads[li].weight, layer_id(model.layers[li]));
    check_finite(grads[li].bias, layer_id(model.layers[li]));
    for (double v : grads[li].fgf) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient in " + layer_id(model.layers[li]));
    }
  }
  state.dense.resize(model.layers.size());
  state.fgf.resize(model.layers.size());

  auto step = [&](std::size_t li, std::size_t slot, nd::Tensor& param, nd::Tensor grad, const nd::Tensor* mask) {
    auto& bufs = state.dense[li];
    if (bufs.size() <= slot) bufs.resize(slot + 1);
    if (bufs[slot].shape() != param.shape()) bufs[slot] = nd::Tensor(param.shape());
    if (mask) {
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if ((*mask)[i] == 0.0f) {
          grad[i] = 0.0f;
          bufs[slot][i] = 0.0f;
        }
      }
    }
    nd::sgd_step(param, grad, lr, bufs[slot], momentum);
    if (mask) {
      for (std::size_t i = 0; i < param.size(); ++i) {
        if ((*mask)[i] == 0.0f) param[i] = 0.0f;
      }
    }
  };

  for (std::size_t li = 0; li < grads.size(); ++li) {
    const auto& g = grads[li];
    std::visit(overloaded{
                   [&](Conv2d& l) { step(li, 0, l.weight, g.weight, l.masked() ? &l.mask : nullptr); },
                   [&](FgfConv2d& l) {
                     auto& buf = state.fgf[li];
                     if (buf.size() != l.params.size()) buf.assign(l.params.size(), 0.0);
                     nd::sgd_step<double>(l.params, g.fgf, lr, buf, momentum);
                     const std::size_t per = l.spec.param_count();
                     for (int o = 0; o < l.out_channels; ++o) {
                       fgf::project_params(l.spec, std::span<double>(l.params).subspan(o * per, per));
                     }
                   },
                   [&](BatchNorm2d& l) {
                     step(li, 0, l.gamma, g.weight, nullptr);
                     step(li, 1, l.beta, g.bias, nullptr);
                   },
                   [&](Linear& l) {
                     step(li, 0, l.weight, g.weight, l.masked() ? &l.mask : nullptr);
                     step(li, 1, l.bias, g.bias, nullptr);
                   },
                   [](auto&) {},
               },
               model.layers[li]);
  }
}

double backward_and_step(Model& model, const nd::Tensor& batch, std::span<const int> labels, double lr,
                         double momentum, OptimizerState& state) {
  Model snapshot_bn = model;  // forward_train mutates running stats; restore them on failure
  try {
    auto sg = compute_gradients(model, batch, labels);
    apply_sgd(model, sg.grads, lr, momentum, state);
    return sg.loss;
  } catch (const NumericError&) {
    model = std::move(snapshot_bn);
    throw;
  }
}

}  // namespace fgfp::nn
