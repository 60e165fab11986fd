#include "fgfp/fgf/gl.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "fgfp/errors.hpp"

namespace fgfp::fgf {
namespace {

constexpr double kLanczosG = 7.0;
constexpr std::array<double, 9> kLanczos = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};

// sin(pi x) with the argument reduced exactly to [-1/2, 1/2] first.
double sin_pi(double x) {
  const double n = std::nearbyint(x);
  const double r = x - n;
  const double s = std::sin(std::numbers::pi * r);
  return std::fmod(n, 2.0) == 0.0 ? s : -s;
}

bool is_pole(double x) { return x <= 0.0 && x == std::nearbyint(x); }

double lanczos_core(double x) {  // Gamma(x) for x >= 1/2
  x -= 1.0;
  double a = kLanczos[0];
  for (std::size_t i = 1; i < kLanczos.size(); ++i) a += kLanczos[i] / (x + static_cast<double>(i));
  const double t = x + kLanczosG + 0.5;
  return std::sqrt(2.0 * std::numbers::pi) * std::pow(t, x + 0.5) * std::exp(-t) * a;
}

}  // namespace

std::array<double, 3> gl_trinomial(double alpha) {
  return {1.0, -alpha, alpha * (alpha - 1.0) / 2.0};
}

std::array<double, 3> gl_trinomial_dalpha(double alpha) {
  return {0.0, -1.0, (2.0 * alpha - 1.0) / 2.0};
}

double lanczos_gamma(double x) {
  if (is_pole(x)) return std::nan("");
  if (x < 0.5) return std::numbers::pi / (sin_pi(x) * lanczos_core(1.0 - x));
  return lanczos_core(x);
}

double reciprocal_gamma(double x) {
  if (is_pole(x)) return 0.0;
  if (x < 0.5) return sin_pi(x) * lanczos_core(1.0 - x) / std::numbers::pi;
  return 1.0 / lanczos_core(x);
}

double gl_binomial(double alpha, int r) {
  if (r < 0) return 0.0;
  return lanczos_gamma(alpha + 1.0) * reciprocal_gamma(r + 1.0) * reciprocal_gamma(alpha - r + 1.0);
}

double gl_series_weight(double alpha, int r) {
  const double c = gl_binomial(alpha, r);
  return (r % 2 == 0) ? c : -c;
}

double gl_full_series(double alpha, std::span<const double> samples, int terms) {
  if (terms < 1 || static_cast<std::size_t>(terms) > samples.size()) {
    throw UsageError("gl_full_series: terms must be in [1, " + std::to_string(samples.size()) + "]");
  }
  double sum = 0.0;
  for (int r = 0; r < terms; ++r) sum += gl_series_weight(alpha, r) * samples[static_cast<std::size_t>(r)];
  return sum;
}

}  // namespace fgfp::fgf
