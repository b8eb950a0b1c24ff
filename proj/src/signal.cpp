#include "mcse/signal.hpp"

#include <algorithm>
#include <cmath>

#include "mcse/fft.hpp"

namespace mcse::signal {

void MultichannelWaveform::validate() const {
  require(samples.rows() >= 1 && samples.cols() >= 1, errc::invalid_argument,
          "waveform must have at least one channel and one sample");
  require(sample_rate > 0, errc::invalid_argument,
          "sample rate must be positive");
}

void StftConfig::validate() const {
  require(fft_length >= 2 && fft_length % 2 == 0, errc::invalid_argument,
          "fft_length must be even and >= 2");
  require(window_length >= 1 && window_length <= fft_length,
          errc::invalid_argument, "window_length must be in [1, fft_length]");
  require(hop_length >= 1, errc::invalid_argument, "hop_length must be >= 1");
}

Eigen::ArrayXd hann_window(Index length) {
  Eigen::ArrayXd w(length);
  for (Index n = 0; n < length; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(n) /
                                static_cast<double>(length));
  return w;
}

ComplexSpectrogram stft(const Eigen::ArrayXd& wave, const StftConfig& config) {
  config.validate();
  require(wave.size() >= config.window_length, errc::invalid_argument,
          "signal too short");
  require(wave.allFinite(), errc::numeric_error,
          "stft input has non-finite samples");

  const Index frames = config.num_frames(wave.size());
  const Index bins = config.num_bins();
  const Eigen::ArrayXd window = hann_window(config.window_length);

  ComplexSpectrogram spec;
  spec.config = config;
  spec.original_length = wave.size();
  spec.real_part.resize(bins, frames);
  spec.imag_part.resize(bins, frames);

  Eigen::VectorXd frame(config.window_length);
  for (Index t = 0; t < frames; ++t) {
    const Index start = t * config.hop_length;
    frame = (wave.segment(start, config.window_length) * window).matrix();
    const fft::ComplexVec half = fft::rfft(frame, config.fft_length);
    spec.real_part.col(t) = half.head(bins).real().array();
    spec.imag_part.col(t) = half.head(bins).imag().array();
  }
  return spec;
}

Eigen::ArrayXd istft(const ComplexSpectrogram& spec) {
  spec.config.validate();
  const StftConfig& config = spec.config;
  require(spec.real_part.rows() == spec.imag_part.rows() &&
              spec.real_part.cols() == spec.imag_part.cols(),
          errc::shape_mismatch, "real/imag plane dimensions differ");
  require(spec.bins() == config.num_bins(), errc::invalid_argument,
          "config mismatch between analysis and synthesis");
  require(spec.original_length >= config.window_length,
          errc::invalid_argument, "config mismatch: original length too short");

  const Index frames = spec.frames();
  const Index hop = config.hop_length;
  const Index win_len = config.window_length;
  const Index full_len = (frames - 1) * hop + win_len;
  const Eigen::ArrayXd window = hann_window(win_len);

  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(full_len);
  Eigen::ArrayXd window_sq_sum = Eigen::ArrayXd::Zero(full_len);

  const Index half_bins = config.fft_length / 2 + 1;
  fft::ComplexVec half = fft::ComplexVec::Zero(half_bins);
  for (Index t = 0; t < frames; ++t) {
    half.head(spec.bins()).real() = spec.real_part.col(t).matrix();
    half.head(spec.bins()).imag() = spec.imag_part.col(t).matrix();
    // A dropped Nyquist bin stays zero.
    const fft::RealVec time = fft::irfft(half, config.fft_length);
    const Index start = t * hop;
    acc.segment(start, win_len) += time.head(win_len).array() * window;
    window_sq_sum.segment(start, win_len) += window.square();
  }

  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(spec.original_length);
  const Index n = std::min(full_len, spec.original_length);
  for (Index i = 0; i < n; ++i)
    out[i] = window_sq_sum[i] > 1e-8 ? acc[i] / window_sq_sum[i] : 0.0;
  return out;
}

std::pair<MultichannelWaveform, double> peak_normalize(
    const MultichannelWaveform& wave) {
  wave.validate();
  const double peak = wave.samples.abs().maxCoeff();
  require(peak > 0.0, errc::invalid_argument, "silent input");
  MultichannelWaveform out;
  out.samples = wave.samples / peak;
  out.sample_rate = wave.sample_rate;
  return {std::move(out), peak};
}

std::vector<MultichannelWaveform> segment(const MultichannelWaveform& wave,
                                          double duration_seconds,
                                          TailMode mode) {
  wave.validate();
  const Index seg_len = static_cast<Index>(
      std::llround(duration_seconds * wave.sample_rate));
  require(seg_len >= 1, errc::invalid_argument,
          "segment duration too short for sample rate");

  std::vector<MultichannelWaveform> out;
  const Index n = wave.length();
  const Index full = n / seg_len;
  for (Index s = 0; s < full; ++s) {
    MultichannelWaveform seg;
    seg.sample_rate = wave.sample_rate;
    seg.samples = wave.samples.middleCols(s * seg_len, seg_len);
    out.push_back(std::move(seg));
  }
  const Index rest = n - full * seg_len;
  if (rest > 0 && mode == TailMode::pad_tail) {
    MultichannelWaveform seg;
    seg.sample_rate = wave.sample_rate;
    seg.samples = Eigen::ArrayXXd::Zero(wave.channels(), seg_len);
    seg.samples.leftCols(rest) = wave.samples.rightCols(rest);
    out.push_back(std::move(seg));
  }
  return out;
}

}  // namespace mcse::signal
