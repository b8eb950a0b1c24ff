#pragma once

#include <array>
#include <vector>

#include "mcse/signal.hpp"
#include "mcse/tensor.hpp"

namespace mcse::ad {

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

// ---- elementwise / reduction suite -----------------------------------

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
/// y = scale * x + shift with scalar coefficients.
Tensor affine(Graph& g, const Tensor& x, double scale, double shift);
Tensor scale(Graph& g, const Tensor& x, double factor);
Tensor abs(Graph& g, const Tensor& x);
Tensor square(Graph& g, const Tensor& x);
/// Differentiable on positive inputs; the derivative at 0 is unbounded.
Tensor sqrt(Graph& g, const Tensor& x);
Tensor mean(Graph& g, const Tensor& x);
Tensor sum(Graph& g, const Tensor& x);
/// Euclidean norm of the flattened tensor; zero-input gradient is zero.
Tensor l2_norm(Graph& g, const Tensor& x);
Tensor selu(Graph& g, const Tensor& x);
Tensor leaky_relu(Graph& g, const Tensor& x, double slope = 0.2);
/// Max-subtracted softmax along `axis`.
Tensor softmax(Graph& g, const Tensor& x, std::size_t axis);
Tensor concat(Graph& g, const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(Graph& g, const Tensor& x, std::size_t axis, Index start,
             Index count);
Tensor reshape(Graph& g, const Tensor& x, Shape shape);
/// a [m,k] times b [k,n] -> [m,n].
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);

// ---- convolution ------------------------------------------------------

/// Cross-correlation convolution of input [B,Cin,H,W] with kernel
/// [Cout,Cin,kH,kW] and bias [Cout].
Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel,
              const Tensor& bias, std::array<Index, 2> stride,
              std::array<Index, 2> padding);

/// Gradient-of-convolution operator; kernel layout [Cin,Cout,kH,kW].
/// Output extent per axis is (in-1)*stride - 2*padding + k + output_padding.
Tensor conv_transpose2d(Graph& g, const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, std::array<Index, 2> stride,
                        std::array<Index, 2> padding,
                        std::array<Index, 2> output_padding);

// ---- batch normalization ---------------------------------------------

struct BatchNormState {
  Eigen::ArrayXd running_mean;  // per channel
  Eigen::ArrayXd running_var;

  static BatchNormState init(Index channels);
};

enum class Mode { train, eval };

/// Per-channel normalization of [B,C,H,W] over (B,H,W). Train mode uses
/// batch statistics and updates the running state; eval mode reads the
/// running state and never mutates it.
Tensor batch_norm2d(Graph& g, const Tensor& input, const Tensor& gamma,
                    const Tensor& beta, BatchNormState& state, Mode mode,
                    double momentum = 0.1, double eps = 1e-5);

// ---- differentiable STFT bridge ---------------------------------------

/// STFT of a rank-1 waveform tensor as a [2,F,T] tensor (real plane 0,
/// imaginary plane 1). Matches signal::stft exactly.
Tensor stft(Graph& g, const Tensor& wave, const signal::StftConfig& config);

/// Inverse STFT of a [2,F,T] tensor; matches signal::istft exactly.
Tensor istft(Graph& g, const Tensor& spec, const signal::StftConfig& config,
             Index original_length);

}  // namespace mcse::ad
