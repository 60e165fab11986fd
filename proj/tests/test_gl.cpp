#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fgfp/errors.hpp"
#include "fgfp/fgf/gl.hpp"
#include "fgfp/fgf/kernel.hpp"
#include "fgfp/rng.hpp"

using namespace fgfp;
using namespace fgfp::fgf;

namespace {

// Generalized binomial by the falling-factorial product.
double binomial_product(double alpha, int r) {
  double c = 1.0;
  for (int j = 0; j < r; ++j) c *= (alpha - j) / (j + 1);
  return c;
}

}  // namespace

TEST(GlTrinomial, IntegerOrders) {
  EXPECT_EQ(gl_trinomial(0.0), (std::array<double, 3>{1.0, 0.0, 0.0}));
  EXPECT_EQ(gl_trinomial(1.0), (std::array<double, 3>{1.0, -1.0, 0.0}));
  EXPECT_EQ(gl_trinomial(2.0), (std::array<double, 3>{1.0, -2.0, 1.0}));
}

TEST(GlTrinomial, HalfOrder) {
  const auto c = gl_trinomial(0.5);
  EXPECT_DOUBLE_EQ(c[0], 1.0);
  EXPECT_DOUBLE_EQ(c[1], -0.5);
  EXPECT_DOUBLE_EQ(c[2], -0.125);
}

TEST(GlTrinomial, AlphaDerivative) {
  const auto d = gl_trinomial_dalpha(1.0);
  EXPECT_EQ(d, (std::array<double, 3>{0.0, -1.0, 0.5}));
  for (double a : {0.0, 0.3, 1.7, 2.0}) {
    const double h = 1e-6;
    const auto up = gl_trinomial(a + h), dn = gl_trinomial(a - h), g = gl_trinomial_dalpha(a);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(g[i], (up[i] - dn[i]) / (2 * h), 1e-9);
  }
}

TEST(Gamma, KnownValuesAndPoles) {
  EXPECT_NEAR(lanczos_gamma(5.0), 24.0, 1e-12);
  EXPECT_NEAR(lanczos_gamma(0.5), std::sqrt(std::acos(-1.0)), 1e-14);
  EXPECT_NEAR(lanczos_gamma(-0.5), -2.0 * std::sqrt(std::acos(-1.0)), 1e-13);
  for (double x : {0.0, -1.0, -2.0, -7.0}) EXPECT_EQ(reciprocal_gamma(x), 0.0);
  for (double x : {0.25, 1.5, 3.7, -0.3, -2.5}) EXPECT_NEAR(reciprocal_gamma(x) * std::tgamma(x), 1.0, 1e-13);
}

TEST(GlBinomial, ClosedForms) {
  EXPECT_NEAR(gl_binomial(1.5, 2), 0.375, 1e-15);
  EXPECT_EQ(gl_binomial(1.0, 2), 0.0);
  EXPECT_EQ(gl_binomial(2.0, 3), 0.0);
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(0.0, 2.0);
    for (int r = 0; r < 9; ++r) {
      const double want = binomial_product(a, r);
      EXPECT_NEAR(gl_binomial(a, r), want, 1e-13 * std::max(1.0, std::fabs(want))) << a << " " << r;
    }
  }
}

TEST(GlFullSeries, FirstOrderDropsThirdTerm) {
  const std::vector<double> f{3.0, 5.0, 11.0};
  EXPECT_NEAR(gl_full_series(1.0, f, 3), 3.0 - 5.0, 1e-15);
}

TEST(GlFullSeries, ThreeTermsEqualTrinomial) {
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0.0, 2.0);
    const std::vector<double> f{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto c = gl_trinomial(a);
    EXPECT_NEAR(gl_full_series(a, f, 3), c[0] * f[0] + c[1] * f[1] + c[2] * f[2], 1e-14);
  }
}

TEST(GlFullSeries, TermsValidated) {
  const std::vector<double> f{1.0, 2.0};
  EXPECT_THROW(gl_full_series(0.5, f, 3), UsageError);
  EXPECT_THROW(gl_full_series(0.5, f, 0), UsageError);
}

TEST(GlFullSeries, SeriesWeightsMatchTrinomialCoefficients) {
  Rng rng(13);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0.0, 2.0);
    const auto c = gl_trinomial(a);
    for (int r = 0; r < 3; ++r) {
      EXPECT_LE(std::fabs(gl_series_weight(a, r) - c[r]), 1e-12 * std::max(1.0, std::fabs(c[r])));
    }
  }
}

// Truncation error of the three-term operator against an 8-term series on
// Gaussian samples, written as a table for inspection.
TEST(GlTruncation, TableArtifact) {
  const std::string path = std::string(FGFP_TEST_OUTPUT_DIR) + "/gl_truncation_table.csv";
  std::ofstream out(path);
  ASSERT_TRUE(out);
  out << "sigma,alpha,max_abs_error,max_abs_value\n";
  for (double sigma : {0.5, 1.0, 2.0, 4.0}) {
    for (double alpha : {0.0, 0.25, 0.5, 1.0, 1.5, 2.0}) {
      double err = 0.0, mag = 0.0;
      for (double t = -3.0; t <= 3.0; t += 0.25) {
        std::vector<double> s(8);
        for (int r = 0; r < 8; ++r) s[r] = gauss_1d(t - r, 0.0, sigma);
        const auto c = gl_trinomial(alpha);
        const double three = c[0] * s[0] + c[1] * s[1] + c[2] * s[2];
        err = std::max(err, std::fabs(gl_full_series(alpha, s, 8) - three));
        mag = std::max(mag, std::fabs(three));
      }
      out << sigma << ',' << alpha << ',' << err << ',' << mag << '\n';
      // Integer orders 0, 1, 2 have no terms beyond the third.
      if (alpha == 0.0 || alpha == 1.0 || alpha == 2.0) {
        EXPECT_LT(err, 1e-15);
      }
      EXPECT_TRUE(std::isfinite(err));
    }
  }
}
