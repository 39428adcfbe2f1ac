#include "flowlift/adam.hpp"

#include <cmath>
#include <string>

#include "flowlift/error.hpp"

namespace flowlift {

AdamState AdamState::for_params(const std::vector<Tensor>& params, AdamOptions options) {
  AdamState state;
  state.options = options;
  for (const Tensor& p : params) {
    state.first_moment.emplace_back(p.shape());
    state.second_moment.emplace_back(p.shape());
  }
  return state;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state) {
  const AdamOptions& o = state.options;
  require(o.learning_rate > 0.0, ErrorCode::kInvalidArgument, "Adam learning rate must be positive");
  require(params.size() == grads.size() && params.size() == state.first_moment.size() &&
              params.size() == state.second_moment.size(),
          ErrorCode::kShapeMismatch, "Adam: parameter, gradient and moment counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].same_shape(grads[i]) && params[i].same_shape(state.first_moment[i]),
            ErrorCode::kShapeMismatch, "Adam: shape mismatch at parameter " + std::to_string(i));
    require(grads[i].all_finite(), ErrorCode::kNonFinite,
            "Adam: non-finite gradient at parameter " + std::to_string(i));
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    const auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

}  // namespace flowlift
