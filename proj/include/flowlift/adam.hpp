#pragma once

#include <cstdint>
#include <vector>

#include "flowlift/tensor.hpp"

namespace flowlift {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  /// Zero moments shaped like `params`.
  static AdamState for_params(const std::vector<Tensor>& params, AdamOptions options = {});
};

/// One bias-corrected Adam update in place. Throws kNonFinite on a NaN/inf
/// gradient without touching `params` or `state`.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state);

}  // namespace flowlift
