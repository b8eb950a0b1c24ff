#pragma once

#include <Eigen/Core>

#include <utility>
#include <vector>

#include "mcse/common.hpp"

namespace mcse::signal {

/// M channels by N samples of real audio. Row m is channel m.
struct MultichannelWaveform {
  Eigen::ArrayXXd samples;  // M x N
  int sample_rate = 16000;

  Index channels() const { return samples.rows(); }
  Index length() const { return samples.cols(); }

  void validate() const;
};

struct StftConfig {
  Index fft_length = 1024;
  Index hop_length = 151;
  Index window_length = 1024;
  bool drop_last_bin = true;

  /// Frequency bins in the output spectrogram (512 with defaults).
  Index num_bins() const {
    return fft_length / 2 + 1 - (drop_last_bin ? 1 : 0);
  }

  /// Frames produced for a signal of `n` samples (requires n >= window).
  Index num_frames(Index n) const {
    return (n - window_length) / hop_length + 1;
  }

  void validate() const;

  bool operator==(const StftConfig&) const = default;
};

/// F x T complex time-frequency grid, stored as separate real/imag planes.
struct ComplexSpectrogram {
  Eigen::ArrayXXd real_part;  // F x T
  Eigen::ArrayXXd imag_part;  // F x T
  StftConfig config;
  Index original_length = 0;

  Index bins() const { return real_part.rows(); }
  Index frames() const { return real_part.cols(); }
};

/// Periodic Hann window, w[n] = 0.5 - 0.5 cos(2 pi n / length).
Eigen::ArrayXd hann_window(Index length);

/// Frames anchored at sample 0 with stride hop_length, no center padding.
/// Each frame is Hann-windowed, zero-padded to fft_length and transformed
/// by a real-input DFT; the Nyquist bin is dropped when configured.
ComplexSpectrogram stft(const Eigen::ArrayXd& wave, const StftConfig& config);

/// Weighted overlap-add inverse with the analysis Hann as synthesis window;
/// divides by the squared-window sum where it exceeds 1e-8, else emits zero.
/// Output is truncated to the recorded original length.
Eigen::ArrayXd istft(const ComplexSpectrogram& spec);

/// Divides all channels by the global peak absolute sample; returns the
/// peak so the output can be de-normalized. Errors on all-zero input.
std::pair<MultichannelWaveform, double> peak_normalize(
    const MultichannelWaveform& wave);

enum class TailMode { drop_tail, pad_tail };

/// Consecutive non-overlapping segments of duration*sample_rate samples.
/// The final partial segment is dropped or zero-padded per `mode`.
std::vector<MultichannelWaveform> segment(const MultichannelWaveform& wave,
                                          double duration_seconds,
                                          TailMode mode);

}  // namespace mcse::signal
