#include "mcse/beamform.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "mcse/fft.hpp"

namespace mcse::beamform {

Eigen::ArrayXd cross_correlation(const Eigen::ArrayXd& x1,
                                 const Eigen::ArrayXd& x2) {
  require(x1.size() == x2.size(), errc::shape_mismatch,
          "cross_correlation: length mismatch");
  const Index n = x1.size();
  Eigen::ArrayXd out(2 * n - 1);
  for (Index lag = -(n - 1); lag <= n - 1; ++lag) {
    const Index lo = std::max<Index>(0, -lag);
    const Index hi = std::min(n, n - lag);  // t + lag in [0, n)
    double acc = 0.0;
    for (Index t = lo; t < hi; ++t) acc += x1[t] * x2[t + lag];
    out[lag + n - 1] = acc;
  }
  return out;
}

Eigen::VectorXcd cross_spectral_density(const Eigen::ArrayXd& x1,
                                        const Eigen::ArrayXd& x2) {
  require(x1.size() == x2.size(), errc::shape_mismatch,
          "cross_spectral_density: length mismatch");
  const Index n = x1.size();
  const Index padded = fft::next_pow2(2 * n - 1);
  fft::ComplexVec a = fft::ComplexVec::Zero(padded);
  fft::ComplexVec b = fft::ComplexVec::Zero(padded);
  a.head(n).real() = x1.matrix();
  b.head(n).real() = x2.matrix();
  const fft::ComplexVec fa = fft::forward(a);
  const fft::ComplexVec fb = fft::forward(b);
  return fa.conjugate().cwiseProduct(fb);
}

GccPhatResult gcc_phat(const Eigen::ArrayXd& x_i, const Eigen::ArrayXd& x_r,
                       Index max_lag) {
  require(x_i.size() == x_r.size(), errc::shape_mismatch,
          "gcc_phat: length mismatch");
  const Index n = x_i.size();
  require(max_lag >= 0 && max_lag < n, errc::invalid_argument,
          "gcc_phat: max_lag must be < signal length");

  const Index padded = fft::next_pow2(2 * n - 1);
  fft::ComplexVec a = fft::ComplexVec::Zero(padded);
  fft::ComplexVec b = fft::ComplexVec::Zero(padded);
  a.head(n).real() = x_i.matrix();
  b.head(n).real() = x_r.matrix();
  const fft::ComplexVec fa = fft::forward(a);
  const fft::ComplexVec fb = fft::forward(b);

  // Phase-transform weighting X_i X_r^*; under this orientation a delayed first
  // argument peaks at +delay.
  fft::ComplexVec cross = fa.cwiseProduct(fb.conjugate());
  double energy = 0.0;
  for (Index k = 0; k < padded; ++k) energy += std::abs(cross[k]);
  require(energy > 0.0, errc::numeric_error, "degenerate spectrum");
  for (Index k = 0; k < padded; ++k) {
    const double mag = std::abs(cross[k]);
    cross[k] /= std::max(mag, 1e-12);
  }
  const fft::ComplexVec curve = fft::inverse(cross);

  GccPhatResult result;
  result.max_lag = max_lag;
  result.correlation.resize(2 * max_lag + 1);
  for (Index lag = -max_lag; lag <= max_lag; ++lag) {
    const Index idx = lag >= 0 ? lag : padded + lag;
    result.correlation[lag + max_lag] = curve[idx].real();
  }
  // Argmax with ties broken toward smaller |lag|.
  double best = -std::numeric_limits<double>::infinity();
  Index best_lag = 0;
  for (Index a_lag = 0; a_lag <= max_lag; ++a_lag) {
    for (const Index lag : {a_lag, -a_lag}) {
      const double v = result.correlation[lag + max_lag];
      if (v > best) {
        best = v;
        best_lag = lag;
      }
      if (a_lag == 0) break;
    }
  }
  result.delay = best_lag;
  return result;
}

SteeringVector steering_vector(const Eigen::ArrayXd& gains,
                               const Eigen::ArrayXd& delays_seconds,
                               double sample_rate, Index fft_length) {
  require(gains.size() == delays_seconds.size(), errc::shape_mismatch,
          "steering_vector: gains/delays size mismatch");
  require(fft_length >= 2 && fft_length % 2 == 0, errc::invalid_argument,
          "steering_vector: fft_length must be even and positive");
  const Index channels = gains.size();
  SteeringVector sv;
  sv.values.resize(fft_length / 2 + 1, channels);
  for (Index m = 0; m < channels; ++m) {
    const double delay_samples = delays_seconds[m] * sample_rate;
    for (Index f = 0; f <= fft_length / 2; ++f) {
      const double phase = -2.0 * kPi * static_cast<double>(f) *
                           delay_samples / static_cast<double>(fft_length);
      sv.values(f, m) =
          gains[m] * std::complex<double>(std::cos(phase), std::sin(phase));
    }
  }
  return sv;
}

NoiseCovariance estimate_noise_covariance(
    const std::vector<signal::ComplexSpectrogram>& spectrograms,
    const std::vector<Index>& noise_frames) {
  const auto channels = static_cast<Index>(spectrograms.size());
  require(channels >= 1, errc::invalid_argument,
          "estimate_noise_covariance: no channels");
  require(!noise_frames.empty(), errc::invalid_argument,
          "estimate_noise_covariance: empty frame set");
  const Index bins = spectrograms.front().bins();
  const Index frames = spectrograms.front().frames();
  for (const auto& s : spectrograms)
    require(s.bins() == bins && s.frames() == frames, errc::shape_mismatch,
            "estimate_noise_covariance: spectrogram dimensions differ");
  for (Index t : noise_frames)
    require(t >= 0 && t < frames, errc::invalid_argument,
            "estimate_noise_covariance: frame index out of range");

  NoiseCovariance cov;
  cov.frame_count = static_cast<Index>(noise_frames.size());
  cov.values.assign(bins, Eigen::MatrixXcd::Zero(channels, channels));
  Eigen::VectorXcd x(channels);
  for (Index f = 0; f < bins; ++f) {
    Eigen::MatrixXcd& r = cov.values[f];
    for (Index t : noise_frames) {
      for (Index m = 0; m < channels; ++m)
        x[m] = std::complex<double>(spectrograms[m].real_part(f, t),
                                    spectrograms[m].imag_part(f, t));
      // Accumulate the upper triangle and mirror for exact Hermitianity.
      for (Index i = 0; i < channels; ++i)
        for (Index j = i; j < channels; ++j)
          r(i, j) += x[i] * std::conj(x[j]);
    }
    r /= static_cast<double>(noise_frames.size());
    for (Index i = 0; i < channels; ++i) {
      r(i, i) = std::complex<double>(r(i, i).real(), 0.0);
      for (Index j = i + 1; j < channels; ++j) r(j, i) = std::conj(r(i, j));
    }
    const double loading = 1e-6 * r.real().trace() / static_cast<double>(channels);
    r += std::max(loading, 1e-12) * Eigen::MatrixXcd::Identity(channels, channels);
  }
  return cov;
}

Eigen::MatrixXcd mvdr_weights(const NoiseCovariance& noise_cov,
                              const SteeringVector& steering) {
  require(noise_cov.bins() == steering.bins(), errc::shape_mismatch,
          "mvdr_weights: bin count mismatch");
  const Index bins = steering.bins();
  const Index channels = steering.channels();
  Eigen::MatrixXcd weights(bins, channels);
  for (Index f = 0; f < bins; ++f) {
    require(noise_cov.values[f].rows() == channels, errc::shape_mismatch,
            "mvdr_weights: channel count mismatch");
    const Eigen::VectorXcd h = steering.values.row(f).transpose();
    const Eigen::LDLT<Eigen::MatrixXcd> solver(noise_cov.values[f]);
    const Eigen::VectorXcd r_inv_h = solver.solve(h);
    std::complex<double> denom = h.dot(r_inv_h);  // h^H R^-1 h
    if (std::abs(denom) < 1e-12) denom = 1e-12;
    const Eigen::VectorXcd w = r_inv_h / denom;
    require(w.allFinite(), errc::numeric_error,
            "mvdr_weights: non-finite weights at bin " + std::to_string(f));
    weights.row(f) = w.transpose();
  }
  return weights;
}

Eigen::MatrixXcd delay_and_sum_weights(const SteeringVector& steering) {
  const Index bins = steering.bins();
  Eigen::MatrixXcd weights(bins, steering.channels());
  for (Index f = 0; f < bins; ++f) {
    const Eigen::VectorXcd h = steering.values.row(f).transpose();
    double norm2 = h.squaredNorm();
    if (norm2 < 1e-12) norm2 = 1e-12;
    weights.row(f) = (h / norm2).transpose();
  }
  return weights;
}

Eigen::ArrayXd apply_weights(
    const std::vector<signal::ComplexSpectrogram>& specs,
    const Eigen::MatrixXcd& weights) {
  const auto channels = static_cast<Index>(specs.size());
  require(channels >= 1 && weights.cols() == channels, errc::shape_mismatch,
          "apply_weights: channel count mismatch");
  const Index bins = specs.front().bins();
  const Index frames = specs.front().frames();
  require(weights.rows() >= bins, errc::shape_mismatch,
          "apply_weights: bin count mismatch");

  signal::ComplexSpectrogram out;
  out.config = specs.front().config;
  out.original_length = specs.front().original_length;
  out.real_part = Eigen::ArrayXXd::Zero(bins, frames);
  out.imag_part = Eigen::ArrayXXd::Zero(bins, frames);
  for (Index f = 0; f < bins; ++f) {
    for (Index t = 0; t < frames; ++t) {
      std::complex<double> acc(0.0, 0.0);
      for (Index m = 0; m < channels; ++m) {
        const std::complex<double> x(specs[m].real_part(f, t),
                                     specs[m].imag_part(f, t));
        acc += std::conj(weights(f, m)) * x;  // w^H x
      }
      out.real_part(f, t) = acc.real();
      out.imag_part(f, t) = acc.imag();
    }
  }
  return signal::istft(out);
}

MvdrResult mvdr_enhance(const signal::MultichannelWaveform& wave,
                        const MvdrOptions& options) {
  wave.validate();
  const Index channels = wave.channels();
  require(options.reference_index >= 0 && options.reference_index < channels,
          errc::invalid_argument, "mvdr_enhance: bad reference index");

  std::vector<signal::ComplexSpectrogram> specs;
  specs.reserve(channels);
  for (Index m = 0; m < channels; ++m)
    specs.push_back(signal::stft(wave.samples.row(m).transpose(), options.stft));

  const Index prefix_samples = static_cast<Index>(
      options.noise_prefix_seconds * wave.sample_rate);
  const Index prefix_frames =
      prefix_samples >= options.stft.window_length
          ? options.stft.num_frames(prefix_samples)
          : 0;
  require(prefix_frames >= channels, errc::invalid_argument,
          "mvdr_enhance: noise prefix covers fewer than M STFT frames");
  std::vector<Index> noise_frames(prefix_frames);
  for (Index i = 0; i < prefix_frames; ++i) noise_frames[i] = i;

  Eigen::ArrayXd delays(channels);
  if (options.delays_samples) {
    require(options.delays_samples->size() == channels, errc::shape_mismatch,
            "mvdr_enhance: delays size mismatch");
    delays = *options.delays_samples;
  } else {
    const Eigen::ArrayXd ref =
        wave.samples.row(options.reference_index).transpose();
    for (Index m = 0; m < channels; ++m) {
      if (m == options.reference_index) {
        delays[m] = 0.0;
        continue;
      }
      const Eigen::ArrayXd x_m = wave.samples.row(m).transpose();
      delays[m] = static_cast<double>(
          gcc_phat(x_m, ref, options.max_lag).delay);
    }
  }

  Eigen::ArrayXd gains = options.gains
                             ? *options.gains
                             : Eigen::ArrayXd::Ones(channels);
  require(gains.size() == channels, errc::shape_mismatch,
          "mvdr_enhance: gains size mismatch");

  const SteeringVector sv = steering_vector(
      gains, delays / wave.sample_rate, wave.sample_rate, options.stft.fft_length);
  // Trim the steering rows to the retained spectrogram bins.
  SteeringVector trimmed;
  trimmed.values = sv.values.topRows(specs.front().bins());
  const NoiseCovariance cov = estimate_noise_covariance(specs, noise_frames);
  const Eigen::MatrixXcd weights = mvdr_weights(cov, trimmed);

  MvdrResult result;
  result.enhanced = apply_weights(specs, weights);
  result.delays_samples = delays;
  return result;
}

}  // namespace mcse::beamform
