#pragma once

#include <span>
#include <vector>

#include "flowlift/tensor.hpp"

namespace flowlift {

inline constexpr double kLayerNormEps = 1e-5;

/// Numerically stable softmax. Throws on empty or non-finite input.
std::vector<double> softmax(std::span<const double> v);

/// Normalizes `x` to zero mean and unit (population) variance, then applies
/// the affine map gamma * x_hat + beta.
std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                               std::span<const double> beta, double eps = kLayerNormEps);

namespace kernels {

// Row-wise kernels shared by the free functions above and the tape ops.
void softmax_inplace(std::span<double> row);

// Writes normalized values into `xhat` and returns 1/sqrt(var + eps).
double normalize_row(std::span<const double> x, std::span<double> xhat, double eps);

}  // namespace kernels
}  // namespace flowlift
