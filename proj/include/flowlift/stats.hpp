#pragma once

#include <cstddef>
#include <span>

namespace flowlift {

struct SignTest {
  std::size_t wins = 0;    // pairs with a < b
  std::size_t losses = 0;  // pairs with a > b
  std::size_t ties = 0;
  double p_value = 1.0;    // one-sided, H1: a tends to be smaller than b
};

/// Paired one-sided sign test; ties are dropped.
SignTest sign_test(std::span<const double> a, std::span<const double> b);

/// P(X >= k) for X ~ Binomial(n, 1/2).
double binomial_upper_tail(std::size_t n, std::size_t k);

/// Pearson correlation; throws kDegenerate when either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);

double median(std::span<const double> values);

}  // namespace flowlift
