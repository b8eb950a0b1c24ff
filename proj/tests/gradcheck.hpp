#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mcse/ops.hpp"

namespace testutil {

using mcse::ad::Graph;
using mcse::ad::Tensor;

/// Weighted-sum scalarization, forward-only: sum(w .* f(x)).
inline double scalarize(const Tensor& out, const Eigen::ArrayXd& weights) {
  return (out.values() * weights).sum();
}

/// Central finite-difference gradient check of `fwd` against the recorded
/// backward rules. Returns the worst relative error over all elements of
/// all differentiable inputs.
inline double grad_check(
    const std::function<Tensor(Graph&, std::vector<Tensor>&)>& fwd,
    std::vector<Tensor> inputs, std::uint64_t seed, double h = 1e-5) {
  Graph g;
  Tensor out = fwd(g, inputs);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::ArrayXd weights(out.size());
  for (Eigen::Index i = 0; i < weights.size(); ++i) weights[i] = dist(rng);

  Tensor w = Tensor::from_values(out.shape(), weights);
  Tensor loss = mcse::ad::sum(g, mcse::ad::mul(g, out, w));
  g.backward(loss);

  double worst = 0.0;
  for (Tensor& input : inputs) {
    if (!input.requires_grad()) continue;
    const Eigen::ArrayXd analytic =
        input.has_grad() ? input.grad() : Eigen::ArrayXd::Zero(input.size());
    for (Eigen::Index i = 0; i < input.size(); ++i) {
      const double saved = input.values()[i];
      auto eval = [&](double v) {
        input.values()[i] = v;
        Graph fresh;
        std::vector<Tensor> copy = inputs;
        Tensor y = fwd(fresh, copy);
        return scalarize(y, weights);
      };
      const double plus = eval(saved + h);
      const double minus = eval(saved - h);
      input.values()[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double denom =
          std::max({std::abs(analytic[i]), std::abs(numeric), 1e-2});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

inline Tensor random_tensor(mcse::ad::Shape shape, std::uint64_t seed,
                            bool requires_grad = true, double offset = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::ArrayXd v(mcse::ad::shape_size(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double x = dist(rng);
    if (offset != 0.0) x = (x < 0 ? x - offset : x + offset);
    v[i] = x;
  }
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

struct PrimitiveCheck {
  std::string name;
  double max_rel_err = 0.0;
};

/// Runs `instances` seeded gradient checks for every autodiff primitive.
std::vector<PrimitiveCheck> check_all_primitives(int instances);

}  // namespace testutil
