#include "flowlift/stats.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "flowlift/error.hpp"

namespace flowlift {

double binomial_upper_tail(std::size_t n, std::size_t k) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  // Sum in log space; n can reach thousands.
  const double log_half_n = static_cast<double>(n) * std::log(0.5);
  const double log_n_fact = std::lgamma(static_cast<double>(n) + 1.0);
  double total = 0.0;
  for (std::size_t i = k; i <= n; ++i) {
    const double log_choose = log_n_fact - std::lgamma(static_cast<double>(i) + 1.0) -
                              std::lgamma(static_cast<double>(n - i) + 1.0);
    total += std::exp(log_choose + log_half_n);
  }
  return std::min(total, 1.0);
}

SignTest sign_test(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::kShapeMismatch,
          "sign test needs two equal-length, nonempty samples");
  SignTest out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i])
      ++out.wins;
    else if (a[i] > b[i])
      ++out.losses;
    else
      ++out.ties;
  }
  out.p_value = binomial_upper_tail(out.wins + out.losses, out.wins);
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorCode::kShapeMismatch,
          "pearson needs two equal-length samples of size >= 2");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0 && syy > 0.0, ErrorCode::kDegenerate, "pearson: constant input");
  return sxy / std::sqrt(sxx * syy);
}

double median(std::span<const double> values) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "median of an empty sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace flowlift
