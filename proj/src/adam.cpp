#include "mcse/adam.hpp"

#include <cmath>

namespace mcse::ad {

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i] = Eigen::ArrayXd::Zero(params[i].size());
      state.v[i] = Eigen::ArrayXd::Zero(params[i].size());
    }
  }
  require(state.m.size() == params.size(), errc::shape_mismatch,
          "adam_step: state tracks a different parameter count");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    require(state.m[i].size() == p.size(), errc::shape_mismatch,
            "adam_step: parameter size changed");
    if (p.has_grad()) {
      const auto& grad = p.grad();
      state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad;
      state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad.square();
    } else {
      state.m[i] *= state.beta1;
      state.v[i] *= state.beta2;
    }
    const Eigen::ArrayXd m_hat = state.m[i] / bc1;
    const Eigen::ArrayXd v_hat = state.v[i] / bc2;
    p.values() -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
  }
}

}  // namespace mcse::ad
