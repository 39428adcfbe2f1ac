#include "flowlift/ops.hpp"

#include <algorithm>
#include <cmath>

#include "flowlift/error.hpp"

namespace flowlift {

namespace kernels {

void softmax_inplace(std::span<double> row) {
  const double peak = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double& v : row) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : row) v /= total;
}

double normalize_row(std::span<const double> x, std::span<double> xhat, double eps) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv_std = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < x.size(); ++i) xhat[i] = (x[i] - mean) * inv_std;
  return inv_std;
}

}  // namespace kernels

std::vector<double> softmax(std::span<const double> v) {
  require(!v.empty(), ErrorCode::kInvalidArgument, "softmax of empty vector");
  for (double x : v)
    require(std::isfinite(x), ErrorCode::kNonFinite, "softmax input contains a non-finite entry");
  std::vector<double> out(v.begin(), v.end());
  kernels::softmax_inplace(out);
  return out;
}

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                               std::span<const double> beta, double eps) {
  require(x.size() == gamma.size() && x.size() == beta.size(), ErrorCode::kShapeMismatch,
          "layer_norm: x, gamma and beta lengths differ");
  require(x.size() >= 2, ErrorCode::kInvalidArgument, "layer_norm needs at least two features");
  std::vector<double> out(x.size());
  kernels::normalize_row(x, out, eps);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gamma[i] * out[i] + beta[i];
  return out;
}

}  // namespace flowlift
