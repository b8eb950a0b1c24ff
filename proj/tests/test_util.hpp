#pragma once

#include <Eigen/Core>

#include <complex>
#include <random>

#include "mcse/fft.hpp"

namespace testutil {

inline Eigen::ArrayXd random_normal(Eigen::Index n, std::uint64_t seed,
                                    double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  Eigen::ArrayXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = dist(rng);
  return out;
}

inline Eigen::ArrayXd random_uniform(Eigen::Index n, std::uint64_t seed,
                                     double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Eigen::ArrayXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = dist(rng);
  return out;
}

/// Gaussian noise with the top (1-keep) share of the band zeroed out, the
/// way recorded audio rolls off before Nyquist. Full-band noise cannot
/// round-trip through an STFT that discards the Nyquist bin.
inline Eigen::ArrayXd bandlimited_noise(Eigen::Index n, std::uint64_t seed,
                                        double keep = 0.9,
                                        double sigma = 0.3) {
  Eigen::ArrayXd x = random_normal(n, seed, sigma);
  Eigen::VectorXcd spec = mcse::fft::rfft(x.matrix(), n);
  const Eigen::Index cut = static_cast<Eigen::Index>(keep * (n / 2));
  for (Eigen::Index k = cut; k < spec.size(); ++k) spec[k] = 0.0;
  return mcse::fft::irfft(spec, n).array();
}

/// Direct O(N^2) DFT used as an independent oracle.
inline Eigen::VectorXcd dft_oracle(const Eigen::VectorXcd& x) {
  const Eigen::Index n = x.size();
  Eigen::VectorXcd out(n);
  const double two_pi = 6.283185307179586476925286766559;
  for (Eigen::Index k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (Eigen::Index t = 0; t < n; ++t) {
      const double phase = -two_pi * static_cast<double>(k) *
                           static_cast<double>(t) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(phase), std::sin(phase));
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace testutil
