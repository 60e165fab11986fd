#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fgfp/nd/tensor.hpp"
#include "fgfp/rng.hpp"

namespace fgfp::testing {

template <typename T>
nd::BasicTensor<T> random_tensor(nd::Shape shape, Rng& rng, double scale = 1.0) {
  nd::BasicTensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-scale, scale));
  return t;
}

// Central differences of f at x, one coordinate at a time.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(max_i |b_i|, floor)
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
  double num = 0.0, den = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::fabs(a[i] - b[i]));
    den = std::max(den, std::fabs(b[i]));
  }
  return num / den;
}

}  // namespace fgfp::testing
