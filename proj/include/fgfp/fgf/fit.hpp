#pragma once

#include <cstdint>
#include <vector>

#include "fgfp/fgf/kernel.hpp"
#include "fgfp/nd/tensor.hpp"

namespace fgfp::fgf {

struct FitConfig {
  int restarts = 8;
  int iters = 500;
  int screen = 64;  // random draws per restart; descent starts from the best
  double step = 0.05;
  std::uint64_t seed = 0;
  bool gain = false;  // 3-D only
};

struct FitResult {
  std::vector<double> params;  // flat layout of FgfSpec
  double loss = 0.0;           // squared Frobenius norm of (kernel - target)
  int best_restart = -1;
  int diverged_restarts = 0;
};

// Squared Frobenius reconstruction error ||synthesize(params) - target||^2.
double reconstruction_loss(const FgfSpec& spec, std::span<const double> params,
                           std::span<const double> target);

// Closed-form channel weights <target[i], F> / <F, F> for a fixed spatial FGF F.
std::vector<double> cafgf_optimal_weights(const KernelDims& dims, const Fgf2dParams& shared,
                                          std::span<const double> target);

// Fit a CA or 3-D FGF to a dense kernel [ch, kh, kw].
//
// Each restart draws `screen` random parameter sets (offsets uniform over the
// grid, orders in [0, 2], sigma in [0.5, 2]) and descends from the one with the
// lowest loss. Every iteration tries a projected gradient step (fixed size,
// halved whenever it would increase the loss) and a projected damped
// Gauss-Newton step, keeping whichever lowers the loss more. CA channel weights
// are re-solved in closed form after every move. The reported loss is the best
// over all visited iterates. Throws FitError if no restart stays finite.
FitResult fit_fgf_to_kernel(const nd::TensorD& target, FgfKind kind, const FitConfig& cfg);

}  // namespace fgfp::fgf
