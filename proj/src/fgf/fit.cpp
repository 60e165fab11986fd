#include "fgfp/fgf/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fgfp/errors.hpp"
#include "fgfp/rng.hpp"

namespace fgfp::fgf {
namespace {

KernelDims dims_of(const nd::TensorD& target) {
  if (target.rank() != 3) throw DimensionError("fit target must be [ch, kh, kw], got " + nd::shape_str(target.shape()));
  return {static_cast<int>(target.dim(0)), static_cast<int>(target.dim(1)), static_cast<int>(target.dim(2))};
}

std::vector<double> random_start(const FgfSpec& spec, Rng& rng) {
  const auto& d = spec.dims;
  auto offset = [&](int len) { return rng.uniform(0.0, static_cast<double>(len - 1)); };
  auto order = [&] { return rng.uniform(0.0, 2.0); };
  auto width = [&] { return rng.uniform(0.5, 2.0); };
  if (spec.kind == FgfKind::three_d) {
    std::vector<double> p = {order(), order(), order(), offset(d.kh), offset(d.kw), offset(d.ch), width()};
    if (spec.gain) p.push_back(1.0);
    return p;
  }
  std::vector<double> p = {order(), order(), offset(d.kh), offset(d.kw), width()};
  p.resize(spec.param_count(), 0.0);
  return p;
}

// CA channel weights (and the 3-D gain) are always set to their
// least-squares optimum given the rest, so descent runs over the shape scalars.
void refit_weights(const FgfSpec& spec, std::vector<double>& p, std::span<const double> target) {
  if (spec.kind == FgfKind::three_d && spec.gain) {
    p[7] = 1.0;
    const auto k = synthesize(spec, p);
    double kt = 0.0, kk = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) {
      kt += k[i] * target[i];
      kk += k[i] * k[i];
    }
    p[7] = kk > 0.0 ? kt / kk : 0.0;
    return;
  }
  if (spec.kind != FgfKind::ca) return;
  const Fgf2dParams shared{p[0], p[1], p[2], p[3], p[4]};
  const auto w = cafgf_optimal_weights(spec.dims, shared, target);
  std::copy(w.begin(), w.end(), p.begin() + 5);
}

std::vector<double> loss_grad(const FgfSpec& spec, const std::vector<double>& p, std::span<const double> target) {
  auto k = synthesize(spec, p);
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = 2.0 * (k[i] - target[i]);
  auto g = param_grads(spec, p, k);
  if (spec.kind == FgfKind::ca) std::fill(g.begin() + 5, g.end(), 0.0);
  if (spec.kind == FgfKind::three_d && spec.gain) g[7] = 0.0;
  return g;
}

// Solves A x = b for symmetric positive definite A (n x n, row-major) by
// Cholesky. Returns false if A is not numerically positive definite.
bool solve_spd(std::vector<double> A, std::vector<double>& b, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double diag = A[j * n + j];
    for (std::size_t k = 0; k < j; ++k) diag -= A[j * n + k] * A[j * n + k];
    if (!(diag > 0.0)) return false;
    const double ljj = std::sqrt(diag);
    A[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = A[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= A[i * n + k] * A[j * n + k];
      A[i * n + j] = s / ljj;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= A[i * n + k] * b[k];
    b[i] = s / A[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= A[k * n + i] * b[k];
    b[i] = s / A[i * n + i];
  }
  return true;
}

// Damped Gauss-Newton direction: (J^T J + lambda diag(J^T J)) delta = -J^T r.
bool lm_direction(const FgfSpec& spec, const std::vector<double>& p, std::span<const double> target,
                  double lambda, std::vector<double>& delta) {
  const std::size_t P = p.size();
  const auto J = param_jacobian(spec, p);
  const auto k = synthesize(spec, p);
  std::vector<double> A(P * P, 0.0);
  delta.assign(P, 0.0);
  for (std::size_t e = 0; e < k.size(); ++e) {
    const double* row = J.data() + e * P;
    const double r = k[e] - target[e];
    for (std::size_t a = 0; a < P; ++a) {
      delta[a] -= row[a] * r;
      for (std::size_t b = 0; b <= a; ++b) A[a * P + b] += row[a] * row[b];
    }
  }
  for (std::size_t a = 0; a < P; ++a) {
    for (std::size_t b = 0; b < a; ++b) A[b * P + a] = A[a * P + b];
    A[a * P + a] += lambda * A[a * P + a] + 1e-12;
  }
  return solve_spd(std::move(A), delta, P);
}

}  // namespace

double reconstruction_loss(const FgfSpec& spec, std::span<const double> params,
                           std::span<const double> target) {
  const auto k = synthesize(spec, params);
  if (target.size() != k.size()) throw DimensionError("fit target size does not match kernel");
  double s = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) s += (k[i] - target[i]) * (k[i] - target[i]);
  return s;
}

std::vector<double> cafgf_optimal_weights(const KernelDims& dims, const Fgf2dParams& shared,
                                          std::span<const double> target) {
  const auto f = fgf_2d_kernel(dims.kh, dims.kw, shared);
  const std::size_t plane = f.size();
  if (target.size() != plane * dims.ch) throw DimensionError("CA weight target size mismatch");
  double ff = 0.0;
  for (double x : f.data()) ff += x * x;
  std::vector<double> w(dims.ch, 0.0);
  if (ff <= std::numeric_limits<double>::min()) return w;
  for (int c = 0; c < dims.ch; ++c) {
    double tf = 0.0;
    for (std::size_t q = 0; q < plane; ++q) tf += target[c * plane + q] * f[q];
    w[c] = tf / ff;
  }
  return w;
}

FitResult fit_fgf_to_kernel(const nd::TensorD& target, FgfKind kind, const FitConfig& cfg) {
  if (kind == FgfKind::orig) throw UsageError("fit_fgf_to_kernel supports ca and 3d kinds");
  if (cfg.restarts < 1 || cfg.iters < 0) throw UsageError("fit needs restarts >= 1 and iters >= 0");
  const FgfSpec spec{kind, dims_of(target), kind == FgfKind::three_d && cfg.gain};
  const std::span<const double> t = target.data();
  for (double x : t) {
    if (!std::isfinite(x)) throw FitError("fit target contains non-finite values");
  }

  FitResult best;
  best.loss = std::numeric_limits<double>::infinity();
  Rng rng = Rng::derive(cfg.seed, "fit");

  for (int r = 0; r < cfg.restarts; ++r) {
    std::vector<double> p;
    double loss = std::numeric_limits<double>::infinity();
    for (int s = 0; s < std::max(1, cfg.screen); ++s) {
      auto q = random_start(spec, rng);
      project_params(spec, q);
      refit_weights(spec, q, t);
      const double l = reconstruction_loss(spec, q, t);
      if (p.empty() || l < loss) {
        p = std::move(q);
        loss = l;
      }
    }
    double step = cfg.step;
    auto consider = [&](const std::vector<double>& q, double l) {
      if (std::isfinite(l) && l < best.loss) {
        best.loss = l;
        best.params = q;
        best.best_restart = r;
      }
    };
    if (!std::isfinite(loss)) {
      ++best.diverged_restarts;
      continue;
    }
    consider(p, loss);

    double lambda = 1e-3;
    for (int it = 0; it < cfg.iters && loss > 0.0; ++it) {
      // Gradient trial step: fixed size with halving on increase.
      const auto g = loss_grad(spec, p, t);
      auto cand = p;
      for (std::size_t i = 0; i < cand.size(); ++i) cand[i] -= step * g[i];
      project_params(spec, cand);
      refit_weights(spec, cand, t);
      double cl = reconstruction_loss(spec, cand, t);
      if (!std::isfinite(cl) || cl > loss) step *= 0.5;

      // Curvature-corrected trial step; the better of the two is kept.
      std::vector<double> delta;
      if (lm_direction(spec, p, t, lambda, delta)) {
        auto lm = p;
        for (std::size_t i = 0; i < lm.size(); ++i) lm[i] += delta[i];
        project_params(spec, lm);
        refit_weights(spec, lm, t);
        const double ll = reconstruction_loss(spec, lm, t);
        if (std::isfinite(ll) && ll < loss) {
          lambda = std::max(lambda / 3.0, 1e-12);
          if (!(cl <= ll)) {
            cand = std::move(lm);
            cl = ll;
          }
        } else {
          lambda = std::min(lambda * 4.0, 1e12);
        }
      } else {
        lambda = std::min(lambda * 4.0, 1e12);
      }
      if (!std::isfinite(cl) || cl > loss) continue;
      p = std::move(cand);
      loss = cl;
      consider(p, loss);
    }
  }
  if (best.params.empty()) throw FitError("every fit restart diverged to a non-finite loss");
  return best;
}

}  // namespace fgfp::fgf
