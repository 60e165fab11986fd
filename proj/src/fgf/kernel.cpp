#include "fgfp/fgf/kernel.hpp"

#include <algorithm>
#include <cmath>

#include "fgfp/errors.hpp"
#include "fgfp/fgf/gl.hpp"

namespace fgfp::fgf {
namespace {

// One fractional-Gaussian factor and its partials w.r.t. (alpha, t0, sigma).
struct Factor {
  std::vector<double> v, d_alpha, d_t0, d_sigma;
};

Factor make_factor(int len, double alpha, double t0, double sigma) {
  const auto c = gl_trinomial(alpha);
  const auto dc = gl_trinomial_dalpha(alpha);
  const double s2 = sigma * sigma, s3 = s2 * sigma;
  Factor f;
  f.v.assign(len, 0.0);
  f.d_alpha.assign(len, 0.0);
  f.d_t0.assign(len, 0.0);
  f.d_sigma.assign(len, 0.0);
  for (int t = 0; t < len; ++t) {
    for (int r = 0; r < 3; ++r) {
      const double d = static_cast<double>(t - r) - t0;
      const double g = std::exp(-d * d / s2);
      f.v[t] += c[r] * g;
      f.d_alpha[t] += dc[r] * g;
      f.d_t0[t] += c[r] * 2.0 * d / s2 * g;
      f.d_sigma[t] += c[r] * 2.0 * d * d / s3 * g;
    }
  }
  return f;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_params(const FgfSpec& spec, std::span<const double> params) {
  if (params.size() != spec.param_count()) {
    throw DimensionError(std::string("FGF ") + kind_name(spec.kind) + " expects " +
                         std::to_string(spec.param_count()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  if (spec.dims.ch < 1 || spec.dims.kh < 1 || spec.dims.kw < 1) {
    throw DimensionError("FGF kernel extents must be >= 1");
  }
}

// Spatial factor pair of a 2-D FGF stored as [a, b, x0, y0, sigma].
struct Spatial {
  Factor rows, cols;
};

Spatial make_spatial(const KernelDims& d, const double* p) {
  return {make_factor(d.kh, p[0], p[2], p[4]), make_factor(d.kw, p[1], p[3], p[4])};
}

// Chain per-row / per-column gradients into [a, b, x0, y0, sigma] at g.
void accumulate_spatial(const Spatial& s, const std::vector<double>& g_rows,
                        const std::vector<double>& g_cols, double* g) {
  g[0] += dot(g_rows, s.rows.d_alpha);
  g[2] += dot(g_rows, s.rows.d_t0);
  g[4] += dot(g_rows, s.rows.d_sigma);
  g[1] += dot(g_cols, s.cols.d_alpha);
  g[3] += dot(g_cols, s.cols.d_t0);
  g[4] += dot(g_cols, s.cols.d_sigma);
}

}  // namespace

const char* kind_name(FgfKind kind) {
  switch (kind) {
    case FgfKind::orig: return "orig";
    case FgfKind::ca: return "ca";
    case FgfKind::three_d: return "3d";
  }
  return "?";
}

FgfKind parse_kind(const std::string& name) {
  if (name == "orig") return FgfKind::orig;
  if (name == "ca") return FgfKind::ca;
  if (name == "3d") return FgfKind::three_d;
  throw UsageError("unknown FGF kind '" + name + "' (expected orig, ca or 3d)");
}

std::size_t FgfSpec::param_count() const {
  const auto ch = static_cast<std::size_t>(dims.ch);
  switch (kind) {
    case FgfKind::orig: return 5 * ch;
    case FgfKind::ca: return 5 + ch;
    case FgfKind::three_d: return gain ? 8 : 7;
  }
  return 0;
}

double gauss_1d(double t, double t0, double sigma) {
  const double d = t - t0;
  return std::exp(-d * d / (sigma * sigma));
}

std::vector<double> frac_gauss_1d(int len, double alpha, double t0, double sigma) {
  const auto c = gl_trinomial(alpha);
  std::vector<double> v(static_cast<std::size_t>(len));
  for (int t = 0; t < len; ++t) {
    v[t] = c[0] * gauss_1d(t, t0, sigma) + c[1] * gauss_1d(t - 1.0, t0, sigma) +
           c[2] * gauss_1d(t - 2.0, t0, sigma);
  }
  return v;
}

nd::TensorD fgf_2d_kernel(int kh, int kw, const Fgf2dParams& p) {
  const FgfSpec spec{FgfKind::orig, {1, kh, kw}, false};
  const double flat[5] = {p.a, p.b, p.x0, p.y0, p.sigma};
  return nd::TensorD({kh, kw}, synthesize(spec, flat));
}

nd::TensorD fgf_3d_kernel(const KernelDims& d, const Fgf3dParams& p) {
  return nd::TensorD({d.ch, d.kh, d.kw}, synthesize({FgfKind::three_d, d, false}, to_flat(p)));
}

nd::TensorD cafgf_kernel(const KernelDims& d, const CaFgfParams& p) {
  return nd::TensorD({d.ch, d.kh, d.kw}, synthesize({FgfKind::ca, d, false}, to_flat(p)));
}

nd::TensorD orig_fgf_kernel(const KernelDims& d, const FgfOrigParams& p) {
  return nd::TensorD({d.ch, d.kh, d.kw}, synthesize({FgfKind::orig, d, false}, to_flat(p)));
}

std::vector<double> to_flat(const Fgf3dParams& p) { return {p.a, p.b, p.c, p.x0, p.y0, p.ch0, p.sigma}; }

std::vector<double> to_flat(const CaFgfParams& p) {
  std::vector<double> f = {p.shared.a, p.shared.b, p.shared.x0, p.shared.y0, p.shared.sigma};
  f.insert(f.end(), p.weights.begin(), p.weights.end());
  return f;
}

std::vector<double> to_flat(const FgfOrigParams& p) {
  std::vector<double> f;
  for (const auto& c : p.channels) f.insert(f.end(), {c.a, c.b, c.x0, c.y0, c.sigma});
  return f;
}

Fgf3dParams fgf3d_from_flat(std::span<const double> f) {
  if (f.size() < 7) throw DimensionError("3-D FGF needs 7 parameters");
  return {f[0], f[1], f[2], f[3], f[4], f[5], f[6]};
}

CaFgfParams cafgf_from_flat(std::span<const double> f, int ch) {
  if (f.size() != 5 + static_cast<std::size_t>(ch)) throw DimensionError("CA-FGF needs 5 + ch parameters");
  return {{f[0], f[1], f[2], f[3], f[4]}, std::vector<double>(f.begin() + 5, f.end())};
}

FgfOrigParams orig_from_flat(std::span<const double> f, int ch) {
  if (f.size() != 5 * static_cast<std::size_t>(ch)) throw DimensionError("FGF needs 5 * ch parameters");
  FgfOrigParams p;
  for (int c = 0; c < ch; ++c) {
    const double* q = f.data() + 5 * c;
    p.channels.push_back({q[0], q[1], q[2], q[3], q[4]});
  }
  return p;
}

std::vector<double> synthesize(const FgfSpec& spec, std::span<const double> params) {
  check_params(spec, params);
  const auto& d = spec.dims;
  const std::size_t plane = static_cast<std::size_t>(d.kh) * d.kw;
  std::vector<double> k(d.numel());

  auto outer = [&](const std::vector<double>& u, const std::vector<double>& v, double scale, double* dst) {
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) dst[i * d.kw + j] = scale * u[i] * v[j];
    }
  };

  switch (spec.kind) {
    case FgfKind::orig:
      for (int c = 0; c < d.ch; ++c) {
        const double* p = params.data() + 5 * c;
        outer(frac_gauss_1d(d.kh, p[0], p[2], p[4]), frac_gauss_1d(d.kw, p[1], p[3], p[4]), 1.0,
              k.data() + c * plane);
      }
      break;
    case FgfKind::ca: {
      const auto u = frac_gauss_1d(d.kh, params[0], params[2], params[4]);
      const auto v = frac_gauss_1d(d.kw, params[1], params[3], params[4]);
      for (int c = 0; c < d.ch; ++c) outer(u, v, params[5 + c], k.data() + c * plane);
      break;
    }
    case FgfKind::three_d: {
      const double sigma = params[6];
      const auto w = frac_gauss_1d(d.ch, params[2], params[5], sigma);
      const auto u = frac_gauss_1d(d.kh, params[0], params[3], sigma);
      const auto v = frac_gauss_1d(d.kw, params[1], params[4], sigma);
      const double gain = spec.gain ? params[7] : 1.0;
      for (int c = 0; c < d.ch; ++c) outer(u, v, gain * w[c], k.data() + c * plane);
      break;
    }
  }
  return k;
}

FactorVectors factor_vectors(const FgfSpec& spec, std::span<const double> params) {
  check_params(spec, params);
  const auto& d = spec.dims;
  FactorVectors f;
  switch (spec.kind) {
    case FgfKind::orig:
      f.channel.assign(d.ch, 1.0);
      f.rows = frac_gauss_1d(d.kh, params[0], params[2], params[4]);
      f.cols = frac_gauss_1d(d.kw, params[1], params[3], params[4]);
      break;
    case FgfKind::ca:
      f.channel.assign(params.begin() + 5, params.end());
      f.rows = frac_gauss_1d(d.kh, params[0], params[2], params[4]);
      f.cols = frac_gauss_1d(d.kw, params[1], params[3], params[4]);
      break;
    case FgfKind::three_d:
      f.channel = frac_gauss_1d(d.ch, params[2], params[5], params[6]);
      f.rows = frac_gauss_1d(d.kh, params[0], params[3], params[6]);
      f.cols = frac_gauss_1d(d.kw, params[1], params[4], params[6]);
      if (spec.gain) {
        for (auto& x : f.channel) x *= params[7];
      }
      break;
  }
  return f;
}

std::vector<double> param_grads(const FgfSpec& spec, std::span<const double> params,
                                std::span<const double> upstream) {
  check_params(spec, params);
  const auto& d = spec.dims;
  if (upstream.size() != d.numel()) {
    throw DimensionError("FGF upstream gradient has " + std::to_string(upstream.size()) +
                         " entries, kernel has " + std::to_string(d.numel()));
  }
  const std::size_t plane = static_cast<std::size_t>(d.kh) * d.kw;
  std::vector<double> g(params.size(), 0.0);

  // Contract one [kh, kw] upstream slice against the row/col vectors.
  auto contract = [&](const double* U, const std::vector<double>& u, const std::vector<double>& v,
                      std::vector<double>& gu, std::vector<double>& gv, double scale) {
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        const double x = scale * U[i * d.kw + j];
        gu[i] += x * v[j];
        gv[j] += x * u[i];
      }
    }
  };

  switch (spec.kind) {
    case FgfKind::orig:
      for (int c = 0; c < d.ch; ++c) {
        const Spatial s = make_spatial(d, params.data() + 5 * c);
        std::vector<double> gu(d.kh, 0.0), gv(d.kw, 0.0);
        contract(upstream.data() + c * plane, s.rows.v, s.cols.v, gu, gv, 1.0);
        accumulate_spatial(s, gu, gv, g.data() + 5 * c);
      }
      break;
    case FgfKind::ca: {
      const Spatial s = make_spatial(d, params.data());
      std::vector<double> gu(d.kh, 0.0), gv(d.kw, 0.0);
      for (int c = 0; c < d.ch; ++c) {
        const double* U = upstream.data() + c * plane;
        double gw = 0.0;
        for (int i = 0; i < d.kh; ++i) {
          for (int j = 0; j < d.kw; ++j) gw += U[i * d.kw + j] * s.rows.v[i] * s.cols.v[j];
        }
        g[5 + c] = gw;
        contract(U, s.rows.v, s.cols.v, gu, gv, params[5 + c]);
      }
      accumulate_spatial(s, gu, gv, g.data());
      break;
    }
    case FgfKind::three_d: {
      const double sigma = params[6];
      const Factor w = make_factor(d.ch, params[2], params[5], sigma);
      const Factor u = make_factor(d.kh, params[0], params[3], sigma);
      const Factor v = make_factor(d.kw, params[1], params[4], sigma);
      const double gain = spec.gain ? params[7] : 1.0;
      std::vector<double> sc(d.ch, 0.0), gw(d.ch, 0.0), gu(d.kh, 0.0), gv(d.kw, 0.0);
      for (int c = 0; c < d.ch; ++c) {
        const double* U = upstream.data() + c * plane;
        for (int i = 0; i < d.kh; ++i) {
          for (int j = 0; j < d.kw; ++j) sc[c] += U[i * d.kw + j] * u.v[i] * v.v[j];
        }
        gw[c] = gain * sc[c];
        contract(U, u.v, v.v, gu, gv, gain * w.v[c]);
      }
      g[0] = dot(gu, u.d_alpha);
      g[1] = dot(gv, v.d_alpha);
      g[2] = dot(gw, w.d_alpha);
      g[3] = dot(gu, u.d_t0);
      g[4] = dot(gv, v.d_t0);
      g[5] = dot(gw, w.d_t0);
      g[6] = dot(gu, u.d_sigma) + dot(gv, v.d_sigma) + dot(gw, w.d_sigma);
      if (spec.gain) g[7] = dot(sc, w.v);
      break;
    }
  }
  return g;
}

void project_params(const FgfSpec& spec, std::span<double> p) {
  auto order = [](double& x) { x = std::clamp(x, 0.0, kOrderMax); };
  auto width = [](double& s) { s = std::max(s, kSigmaMin); };
  switch (spec.kind) {
    case FgfKind::orig:
      for (std::size_t c = 0; c + 4 < p.size(); c += 5) {
        order(p[c]);
        order(p[c + 1]);
        width(p[c + 4]);
      }
      break;
    case FgfKind::ca:
      order(p[0]);
      order(p[1]);
      width(p[4]);
      break;
    case FgfKind::three_d:
      order(p[0]);
      order(p[1]);
      order(p[2]);
      width(p[6]);
      break;
  }
}

Fgf2dParams project_params(Fgf2dParams p) {
  p.a = std::clamp(p.a, 0.0, kOrderMax);
  p.b = std::clamp(p.b, 0.0, kOrderMax);
  p.sigma = std::max(p.sigma, kSigmaMin);
  return p;
}

Fgf3dParams project_params(Fgf3dParams p) {
  p.a = std::clamp(p.a, 0.0, kOrderMax);
  p.b = std::clamp(p.b, 0.0, kOrderMax);
  p.c = std::clamp(p.c, 0.0, kOrderMax);
  p.sigma = std::max(p.sigma, kSigmaMin);
  return p;
}

CaFgfParams project_params(CaFgfParams p) {
  p.shared = project_params(p.shared);
  return p;
}

bool params_in_domain(const FgfSpec& spec, std::span<const double> params) {
  if (params.size() != spec.param_count()) return false;
  for (double x : params) {
    if (!std::isfinite(x)) return false;
  }
  std::vector<double> copy(params.begin(), params.end());
  project_params(spec, copy);
  return std::equal(copy.begin(), copy.end(), params.begin());
}

}  // namespace fgfp::fgf

namespace fgfp::fgf {

std::vector<double> param_jacobian(const FgfSpec& spec, std::span<const double> params) {
  check_params(spec, params);
  const auto& d = spec.dims;
  const std::size_t P = params.size();
  std::vector<double> J(d.numel() * P, 0.0);
  auto at = [&](int c, int i, int j) { return J.data() + ((static_cast<std::size_t>(c) * d.kh + i) * d.kw + j) * P; };

  auto spatial = [&](const Spatial& s, double scale, int c, std::size_t base) {
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        double* row = at(c, i, j) + base;
        const double u = s.rows.v[i], v = s.cols.v[j];
        row[0] = scale * s.rows.d_alpha[i] * v;
        row[1] = scale * u * s.cols.d_alpha[j];
        row[2] = scale * s.rows.d_t0[i] * v;
        row[3] = scale * u * s.cols.d_t0[j];
        row[4] = scale * (s.rows.d_sigma[i] * v + u * s.cols.d_sigma[j]);
      }
    }
  };

  switch (spec.kind) {
    case FgfKind::orig:
      for (int c = 0; c < d.ch; ++c) spatial(make_spatial(d, params.data() + 5 * c), 1.0, c, 5 * c);
      break;
    case FgfKind::ca: {
      const Spatial s = make_spatial(d, params.data());
      for (int c = 0; c < d.ch; ++c) {
        spatial(s, params[5 + c], c, 0);
        for (int i = 0; i < d.kh; ++i) {
          for (int j = 0; j < d.kw; ++j) at(c, i, j)[5 + c] = s.rows.v[i] * s.cols.v[j];
        }
      }
      break;
    }
    case FgfKind::three_d: {
      const double sigma = params[6];
      const Factor w = make_factor(d.ch, params[2], params[5], sigma);
      const Factor u = make_factor(d.kh, params[0], params[3], sigma);
      const Factor v = make_factor(d.kw, params[1], params[4], sigma);
      const double g = spec.gain ? params[7] : 1.0;
      for (int c = 0; c < d.ch; ++c) {
        for (int i = 0; i < d.kh; ++i) {
          for (int j = 0; j < d.kw; ++j) {
            double* row = at(c, i, j);
            const double wc = w.v[c], ui = u.v[i], vj = v.v[j];
            row[0] = g * wc * u.d_alpha[i] * vj;
            row[1] = g * wc * ui * v.d_alpha[j];
            row[2] = g * w.d_alpha[c] * ui * vj;
            row[3] = g * wc * u.d_t0[i] * vj;
            row[4] = g * wc * ui * v.d_t0[j];
            row[5] = g * w.d_t0[c] * ui * vj;
            row[6] = g * (w.d_sigma[c] * ui * vj + wc * u.d_sigma[i] * vj + wc * ui * v.d_sigma[j]);
            if (spec.gain) row[7] = wc * ui * vj;
          }
        }
      }
      break;
    }
  }
  return J;
}

}  // namespace fgfp::fgf
