#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fgfp/nd/tensor.hpp"

namespace fgfp::fgf {

// Lower bound on the Gaussian width, enforced by projection after every step.
inline constexpr double kSigmaMin = 1e-3;
inline constexpr double kOrderMax = 2.0;

enum class FgfKind {
  orig,     // independent 5-parameter FGF per input channel: 5 * ch
  ca,       // shared 5 parameters + one weight per input channel: 5 + ch
  three_d,  // fractional Gaussian along the channel axis too: 7
};

const char* kind_name(FgfKind kind);
FgfKind parse_kind(const std::string& name);  // "orig" | "ca" | "3d"

// Spatial FGF: D^a_x G(x) * D^b_y G(y). x runs over kernel rows, y over columns.
struct Fgf2dParams {
  double a = 0.0;
  double b = 0.0;
  double x0 = 0.0;
  double y0 = 0.0;
  double sigma = 1.0;
};

struct Fgf3dParams {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double x0 = 0.0;
  double y0 = 0.0;
  double ch0 = 0.0;
  double sigma = 1.0;
};

struct CaFgfParams {
  Fgf2dParams shared;
  std::vector<double> weights;  // one per input channel
};

struct FgfOrigParams {
  std::vector<Fgf2dParams> channels;
};

struct KernelDims {
  int ch = 1;
  int kh = 3;
  int kw = 3;
  std::size_t numel() const { return static_cast<std::size_t>(ch) * kh * kw; }
};

// Kind, kernel extents and the optional 3-D gain scalar (off by default; it
// brings the 3-D count from 7 to 8). Flat parameter layouts per filter:
//   orig     ch x [a, b, x0, y0, sigma]
//   ca       [a, b, x0, y0, sigma, w_0 .. w_{ch-1}]
//   three_d  [a, b, c, x0, y0, ch0, sigma (, gain)]
struct FgfSpec {
  FgfKind kind = FgfKind::three_d;
  KernelDims dims;
  bool gain = false;

  std::size_t param_count() const;
};

// exp(-(t - t0)^2 / sigma^2)
double gauss_1d(double t, double t0, double sigma);

// v[t] = G(t) - alpha G(t-1) + alpha(alpha-1)/2 G(t-2), t = 0 .. len-1, with G
// evaluated off-grid where the shift leaves the grid.
std::vector<double> frac_gauss_1d(int len, double alpha, double t0, double sigma);

nd::TensorD fgf_2d_kernel(int kh, int kw, const Fgf2dParams& p);
nd::TensorD fgf_3d_kernel(const KernelDims& dims, const Fgf3dParams& p);
nd::TensorD cafgf_kernel(const KernelDims& dims, const CaFgfParams& p);
nd::TensorD orig_fgf_kernel(const KernelDims& dims, const FgfOrigParams& p);

std::vector<double> to_flat(const Fgf3dParams& p);
std::vector<double> to_flat(const CaFgfParams& p);
std::vector<double> to_flat(const FgfOrigParams& p);
Fgf3dParams fgf3d_from_flat(std::span<const double> flat);
CaFgfParams cafgf_from_flat(std::span<const double> flat, int ch);
FgfOrigParams orig_from_flat(std::span<const double> flat, int ch);

// Kernel [ch, kh, kw] flattened row-major, from one filter's flat parameters.
std::vector<double> synthesize(const FgfSpec& spec, std::span<const double> params);

// The three 1-D factors of a 3-D kernel (channel, row, column). For 2-D kinds
// the channel factor is the per-channel weight (ca) or all ones (orig, first
// channel's spatial factors).
struct FactorVectors {
  std::vector<double> channel;
  std::vector<double> rows;
  std::vector<double> cols;
};
FactorVectors factor_vectors(const FgfSpec& spec, std::span<const double> params);

// d(sum(upstream * kernel)) / d(params), same layout as params.
std::vector<double> param_grads(const FgfSpec& spec, std::span<const double> params,
                                std::span<const double> upstream);

// Clamp fractional orders to [0, 2] and sigma to >= kSigmaMin. Offsets and
// channel weights are unconstrained.
void project_params(const FgfSpec& spec, std::span<double> params);
Fgf2dParams project_params(Fgf2dParams p);
Fgf3dParams project_params(Fgf3dParams p);
CaFgfParams project_params(CaFgfParams p);

// True when every parameter already lies in its domain (and is finite).
bool params_in_domain(const FgfSpec& spec, std::span<const double> params);

}  // namespace fgfp::fgf

namespace fgfp::fgf {

// d kernel / d params as a dense row-major [numel, param_count] matrix.
std::vector<double> param_jacobian(const FgfSpec& spec, std::span<const double> params);

}  // namespace fgfp::fgf
