#include "ijcov/special.hpp"

#include "ijcov/core.hpp"

#include <cmath>
#include <string>

namespace ijcov {

namespace {

constexpr double kShift = 10.0;

void check_domain(double x, const char* name) {
  require(std::isfinite(x) && x > 0.0, std::string(name) + " requires x > 0, got " + std::to_string(x));
}

}  // namespace

double digamma(double x) {
  check_domain(x, "digamma");
  double acc = 0.0;
  while (x < kShift) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  // log x - 1/(2x) - sum_k B_2k / (2k x^2k)
  const double r = 1.0 / (x * x);
  const double series =
      r * (1.0 / 12 -
           r * (1.0 / 120 -
                r * (1.0 / 252 -
                     r * (1.0 / 240 - r * (1.0 / 132 - r * (691.0 / 32760 - r * (1.0 / 12)))))));
  return acc + std::log(x) - 0.5 / x - series;
}

double trigamma(double x) {
  check_domain(x, "trigamma");
  double acc = 0.0;
  while (x < kShift) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  // 1/x + 1/(2x^2) + sum_k B_2k / x^(2k+1)
  const double r = 1.0 / (x * x);
  const double series =
      r * (1.0 / 6 -
           r * (1.0 / 30 -
                r * (1.0 / 42 -
                     r * (1.0 / 30 - r * (5.0 / 66 - r * (691.0 / 2730 - r * (7.0 / 6)))))));
  return acc + 1.0 / x + 0.5 * r + series / x;
}

}  // namespace ijcov
