#include "ijcov/core.hpp"
#include "ijcov/special.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace ijcov;

namespace {

// Independent long-double reference: shift x above 30 by recurrence, then
// the Bernoulli asymptotic series to high order.
long double digamma_ref(long double x) {
  long double acc = 0.0L;
  while (x < 30.0L) {
    acc -= 1.0L / x;
    x += 1.0L;
  }
  const long double inv = 1.0L / x;
  const long double inv2 = inv * inv;
  const long double series =
      inv2 * (1.0L / 12 - inv2 * (1.0L / 120 - inv2 * (1.0L / 252 - inv2 * (1.0L / 240 -
                                                       inv2 * (1.0L / 132)))));
  return acc + std::log(x) - 0.5L * inv - series;
}

long double trigamma_ref(long double x) {
  long double acc = 0.0L;
  while (x < 30.0L) {
    acc += 1.0L / (x * x);
    x += 1.0L;
  }
  const long double inv = 1.0L / x;
  const long double inv2 = inv * inv;
  const long double series =
      inv * (1.0L + inv * (0.5L + inv * (1.0L / 6 - inv2 * (1.0L / 30 - inv2 * (1.0L / 42 -
                                                            inv2 * (1.0L / 30))))));
  return acc + series;
}

}  // namespace

TEST_CASE("special values") {
  CHECK(std::abs(digamma(1.0) + 0.57721566490153286) < 1e-13);
  CHECK(std::abs(trigamma(1.0) - std::numbers::pi * std::numbers::pi / 6.0) < 1e-13);
  CHECK(std::abs(digamma(0.5) + 0.57721566490153286 + 2.0 * std::log(2.0)) < 1e-13);
  CHECK(std::abs(trigamma(0.5) - std::numbers::pi * std::numbers::pi / 2.0) < 1e-12);
}

TEST_CASE("recurrences hold") {
  for (double x = 0.05; x < 60.0; x *= 1.37) {
    CHECK(std::abs(digamma(x + 1.0) - digamma(x) - 1.0 / x) <= 1e-12 * std::max(1.0, 1.0 / x));
    CHECK(std::abs(trigamma(x) - trigamma(x + 1.0) - 1.0 / (x * x)) <=
          1e-12 * std::max(1.0, 1.0 / (x * x)));
  }
}

TEST_CASE("agreement with independent references") {
  for (double x = 0.01; x < 5000.0; x *= 1.19) {
    const double d = digamma(x);
    const double t = trigamma(x);
    const double d_scale = std::max(1.0, std::abs(d));
    const double t_scale = std::max(1.0, t);
    CHECK(std::abs(d - static_cast<double>(digamma_ref(x))) <= 1e-12 * d_scale);
    CHECK(std::abs(t - static_cast<double>(trigamma_ref(x))) <= 1e-12 * t_scale);
    CHECK(std::abs(d - boost::math::digamma(x)) <= 1e-12 * d_scale);
    CHECK(std::abs(t - boost::math::trigamma(x)) <= 1e-12 * t_scale);
  }
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(digamma(0.0), Error);
  CHECK_THROWS_AS(digamma(-1.5), Error);
  CHECK_THROWS_AS(trigamma(0.0), Error);
}
