#pragma once

#include <Eigen/Core>

#include <complex>

#include "mcse/common.hpp"

namespace mcse::fft {

using ComplexVec = Eigen::VectorXcd;
using RealVec = Eigen::VectorXd;

/// Forward DFT, X[k] = sum_n x[n] exp(-j 2 pi k n / N). Any length >= 1.
ComplexVec forward(const ComplexVec& x);

/// Inverse DFT with 1/N scaling.
ComplexVec inverse(const ComplexVec& x);

/// Real-input DFT of `x` zero-padded to `nfft`; returns bins 0..nfft/2.
ComplexVec rfft(const RealVec& x, Index nfft);

/// Inverse of rfft: takes nfft/2+1 bins, returns nfft real samples.
/// Bins beyond the given count are treated per Hermitian symmetry.
RealVec irfft(const ComplexVec& half_spectrum, Index nfft);

/// Smallest power of two >= n.
Index next_pow2(Index n);

}  // namespace mcse::fft
