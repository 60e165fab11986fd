#pragma once

#include <array>
#include <span>

namespace fgfp::fgf {

// Weights (c0, c1, c2) of the three-term Grunwald-Letnikov operator:
//   D^alpha f(x) ~= c0 f(x) + c1 f(x-1) + c2 f(x-2)
//                 = f(x) - alpha f(x-1) + alpha (alpha-1)/2 f(x-2)
std::array<double, 3> gl_trinomial(double alpha);

// d/dalpha of gl_trinomial: (0, -1, (2 alpha - 1)/2).
std::array<double, 3> gl_trinomial_dalpha(double alpha);

// Lanczos approximation (g = 7, n = 9) with reflection for x < 1/2.
double lanczos_gamma(double x);

// 1/Gamma(x), defined as 0 at the poles x = 0, -1, -2, ...
double reciprocal_gamma(double x);

// Generalized binomial coefficient Gamma(a+1) / (Gamma(r+1) Gamma(a-r+1)).
double gl_binomial(double alpha, int r);

// (-1)^r * gl_binomial(alpha, r): the r-th weight of the untruncated series.
double gl_series_weight(double alpha, int r);

// sum_{r < terms} (-1)^r C(alpha, r) samples[r]  with unit step, where
// samples[r] = f(x - r). Reference for the truncation error of gl_trinomial.
double gl_full_series(double alpha, std::span<const double> samples, int terms);

}  // namespace fgfp::fgf
