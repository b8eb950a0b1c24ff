#pragma once

#include <Eigen/Core>

#include <optional>
#include <vector>

#include "mcse/signal.hpp"

namespace mcse::beamform {

/// Per-frequency array response; entry (f, m) = G_m exp(-j 2 pi f fs tau_m / K)
/// for bins f = 0..K/2.
struct SteeringVector {
  Eigen::MatrixXcd values;  // (K/2 + 1) x M

  Index bins() const { return values.rows(); }
  Index channels() const { return values.cols(); }
};

struct NoiseCovariance {
  std::vector<Eigen::MatrixXcd> values;  // per bin, M x M Hermitian
  Index frame_count = 0;

  Index bins() const { return static_cast<Index>(values.size()); }
};

/// Time-domain cross-correlation R(tau) = sum_t x1[t] x2[t+tau] with zero
/// extension, over lags -(N-1)..N-1. Index i holds lag i-(N-1).
Eigen::ArrayXd cross_correlation(const Eigen::ArrayXd& x1,
                                 const Eigen::ArrayXd& x2);

/// Cross-spectral density conj(X1(f)) X2(f) on a zero-padded DFT grid of
/// at least 2N-1 points (rounded up to a power of two), so that it is the
/// DFT of cross_correlation exactly. The conjugate sits on the first
/// argument; this is the orientation under which the Wiener-Khintchin
/// pair with cross_correlation holds.
Eigen::VectorXcd cross_spectral_density(const Eigen::ArrayXd& x1,
                                        const Eigen::ArrayXd& x2);

struct GccPhatResult {
  Index delay = 0;               // estimated lag in samples
  Eigen::ArrayXd correlation;    // curve over lags -max_lag..max_lag
  Index max_lag = 0;
};

/// GCC-PHAT time-delay estimate. Positive delay means the first argument
/// lags (arrives later than) the second; gcc_phat(shift(x, d), x) = d.
/// Ties break toward the smaller |lag|.
GccPhatResult gcc_phat(const Eigen::ArrayXd& x_i, const Eigen::ArrayXd& x_r,
                       Index max_lag);

/// Builds the steering vector for per-channel gains and delays (seconds).
SteeringVector steering_vector(const Eigen::ArrayXd& gains,
                               const Eigen::ArrayXd& delays_seconds,
                               double sample_rate, Index fft_length);

/// Sample covariance over the given frames with diagonal loading
/// delta tr(R)/M, delta = 1e-6. Hermitian positive definite per bin.
NoiseCovariance estimate_noise_covariance(
    const std::vector<signal::ComplexSpectrogram>& spectrograms,
    const std::vector<Index>& noise_frames);

/// MVDR weights w(f) = R^-1 h / (h^H R^-1 h) per bin, via Hermitian solve.
Eigen::MatrixXcd mvdr_weights(const NoiseCovariance& noise_cov,
                              const SteeringVector& steering);

struct MvdrOptions {
  double noise_prefix_seconds = 0.3;
  Index reference_index = 0;
  Index max_lag = 32;
  std::optional<Eigen::ArrayXd> gains;          // default all ones
  std::optional<Eigen::ArrayXd> delays_samples; // else GCC-PHAT vs reference
  signal::StftConfig stft;
};

struct MvdrResult {
  Eigen::ArrayXd enhanced;
  Eigen::ArrayXd delays_samples;  // the delays actually used
};

/// Full classical pipeline: STFT all channels, covariance from the noise
/// prefix, steering from gains/delays, per-bin w^H x, inverse STFT.
MvdrResult mvdr_enhance(const signal::MultichannelWaveform& wave,
                        const MvdrOptions& options);

/// Delay-and-sum weights h / ||h||^2, the comparison oracle for MVDR.
Eigen::MatrixXcd delay_and_sum_weights(const SteeringVector& steering);

/// Applies per-bin weights to the channel spectrograms and reconstructs
/// the waveform; shared tail of mvdr_enhance and of the oracle path.
Eigen::ArrayXd apply_weights(const std::vector<signal::ComplexSpectrogram>& specs,
                             const Eigen::MatrixXcd& weights);

}  // namespace mcse::beamform
