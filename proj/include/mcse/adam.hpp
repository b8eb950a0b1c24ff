#pragma once

#include <vector>

#include "mcse/tensor.hpp"

namespace mcse::ad {

/// Adam state for a fixed, ordered parameter list. Moments are allocated
/// on the first step; parameters without a populated gradient are treated
/// as having zero gradient.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::vector<Eigen::ArrayXd> m;
  std::vector<Eigen::ArrayXd> v;
};

/// One bias-corrected Adam update, in place on the parameter values.
void adam_step(std::vector<Tensor>& params, AdamState& state);

}  // namespace mcse::ad
