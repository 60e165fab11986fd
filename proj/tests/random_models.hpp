#pragma once

#include "fgfp/nn/trainer.hpp"
#include "fgfp/rng.hpp"

namespace fgfp::testing {

inline std::vector<double> random_fgf_params(const fgf::FgfSpec& spec, Rng& rng) {
  const auto& d = spec.dims;
  std::vector<double> p;
  auto order = [&] { return rng.uniform(0.0, 2.0); };
  auto sigma = [&] { return rng.uniform(0.3, 2.5); };
  switch (spec.kind) {
    case fgf::FgfKind::orig:
      for (int c = 0; c < d.ch; ++c) p.insert(p.end(), {order(), order(), rng.uniform(0, d.kh - 1.0), rng.uniform(0, d.kw - 1.0), sigma()});
      break;
    case fgf::FgfKind::ca:
      p = {order(), order(), rng.uniform(0, d.kh - 1.0), rng.uniform(0, d.kw - 1.0), sigma()};
      for (int c = 0; c < d.ch; ++c) p.push_back(rng.uniform(-1.0, 1.0));
      break;
    case fgf::FgfKind::three_d:
      p = {order(), order(), order(), rng.uniform(0, d.kh - 1.0), rng.uniform(0, d.kw - 1.0), rng.uniform(0, d.ch - 1.0), sigma()};
      if (spec.gain) p.push_back(rng.uniform(-2.0, 2.0));
      break;
  }
  return p;
}

// Small CNN with random widths; some convs become FGF layers of a random
// kind, some prunable layers get random masks, batch-norm buffers and meta
// are randomized.
inline nn::Model random_model(std::uint64_t seed) {
  Rng rng(seed);
  nn::CnnShape shape;
  const int side = 4 << rng.below(2);
  shape.input = {static_cast<std::int64_t>(1 + rng.below(3)), side, side};
  shape.widths.clear();
  const int blocks = side == 4 ? 2 : 1 + static_cast<int>(rng.below(3));
  for (int b = 0; b < blocks; ++b) shape.widths.push_back(2 + static_cast<int>(rng.below(5)));
  shape.num_classes = 2 + static_cast<int>(rng.below(9));
  nn::Model m = nn::build_small_cnn(shape, rng.next_u64());
  m.meta.name = "random-" + std::to_string(seed);
  m.meta.seed = rng.next_u64();
  m.meta.epoch = static_cast<int>(rng.below(20));
  m.meta.metrics["val_acc"] = rng.uniform(0.0, 100.0);
  if (rng.below(2)) m.meta.metrics["test_acc"] = rng.uniform(0.0, 100.0);

  for (auto& layer : m.layers) {
    if (auto* bn = std::get_if<nn::BatchNorm2d>(&layer)) {
      for (auto* t : {&bn->gamma, &bn->beta, &bn->running_mean}) {
        for (auto& v : t->data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
      }
      for (auto& v : bn->running_var.data()) v = static_cast<float>(rng.uniform(0.1, 2.0));
      continue;
    }
    if (auto* conv = std::get_if<nn::Conv2d>(&layer); conv && rng.below(3) == 0) {
      nn::FgfConv2d f;
      f.id = conv->id;
      f.geom = conv->geom;
      f.out_channels = static_cast<int>(conv->weight.dim(0));
      const auto kind = static_cast<fgf::FgfKind>(rng.below(3));
      f.spec = fgf::FgfSpec{kind,
                            {static_cast<int>(conv->weight.dim(1)), static_cast<int>(conv->weight.dim(2)),
                             static_cast<int>(conv->weight.dim(3))},
                            kind == fgf::FgfKind::three_d && rng.below(2) == 1};
      for (int o = 0; o < f.out_channels; ++o) {
        const auto p = random_fgf_params(f.spec, rng);
        f.params.insert(f.params.end(), p.begin(), p.end());
      }
      layer = std::move(f);
      continue;
    }
    if (nn::is_prunable(layer) && rng.below(2) == 0) {
      auto& w = nn::prunable_weight(layer);
      auto& mask = nn::prunable_mask(layer);
      mask = nd::Tensor(w.shape(), 1.0f);
      const double keep = rng.uniform(0.0, 1.0);
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (rng.uniform() >= keep) {
          w[i] = 0.0f;
          mask[i] = 0.0f;
        }
      }
    }
  }
  return m;
}

}  // namespace fgfp::testing
