#include "tmlesi/normal.hpp"

#include <doctest.h>

#include <cmath>
#include <initializer_list>

using namespace tmlesi;

namespace {

// Bisection on the erfc-based CDF: slow but independent of the rational guess.
double quantile_by_bisection(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("normal quantile reference values") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-14));
  CHECK(normal_quantile(0.75) == doctest::Approx(0.6744897501960817).epsilon(1e-14));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("normal quantile inverts the CDF across the range") {
  for (double p : {1e-300, 1e-100, 1e-20, 1e-10, 1e-5, 0.001, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.9,
                   0.97575, 0.999}) {
    const double q = normal_quantile(p);
    CHECK(std::abs(q - quantile_by_bisection(p)) < 1e-11 * std::max(1.0, std::abs(q)));
  }
}

TEST_CASE("quantile is antisymmetric") {
  for (double p : {1e-8, 0.01, 0.2, 0.4})
    CHECK(normal_quantile(p) == doctest::Approx(-normal_quantile(1.0 - p)).epsilon(1e-9));
}

TEST_CASE("expit and logit are inverses and expit is stable") {
  for (double x : {-700.0, -30.0, -1.0, 0.0, 2.5, 30.0}) {
    const double p = expit(x);
    CHECK(std::isfinite(p));
    if (std::abs(x) < 30) CHECK(logit(p) == doctest::Approx(x).epsilon(1e-12));
  }
  CHECK(expit(0.0) == 0.5);
}
