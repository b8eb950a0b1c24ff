#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mcse/signal.hpp"

namespace mcse::scenesim {

enum class NoiseKind { white, pink, wav_file };

/// Ground-truth description of one multichannel mixture
/// x_m = g_m shift(s, n_m) + noise_m, with constant per-channel gains.
struct Scene {
  Eigen::ArrayXd clean;             // source signal s
  int sample_rate = 16000;
  Eigen::ArrayXd gains;             // M
  std::vector<Index> delays;        // M, samples >= 0
  NoiseKind noise_kind = NoiseKind::white;
  std::optional<double> snr_db;     // nullopt = noiseless
  Index reference_index = 0;        // SNR is defined at this channel
  Eigen::ArrayXXd noise_wav;        // required for NoiseKind::wav_file, M x >= N
  std::uint64_t seed = 0;

  Index channels() const { return gains.size(); }
  void validate() const;
};

struct SceneRender {
  signal::MultichannelWaveform mixture;
  Eigen::ArrayXXd clean_parts;  // M x N, g_m shift(s, n_m)
  Eigen::ArrayXXd noise_parts;  // M x N, exactly mixture - clean_parts
};

/// Renders the scene; when snr_db is set the noise is scaled so that the
/// realized reference-channel SNR equals it exactly.
SceneRender simulate_scene(const Scene& scene);

/// Speech-like procedural source: a handful of harmonics under a slow
/// amplitude-modulation envelope.
Eigen::ArrayXd procedural_source(Index length, int sample_rate,
                                 std::uint64_t seed);

/// Sampling ranges used by generate_dataset.
struct SceneTemplate {
  int num_channels = 6;
  double snr_db_lo = 0.0;
  double snr_db_hi = 10.0;
  Index max_delay = 8;
  double gain_lo = 1.0;
  double gain_hi = 1.0;
  NoiseKind noise_kind = NoiseKind::white;
  Index reference_index = 4;
  double duration_seconds = 1.2;
  int sample_rate = 16000;
  double noise_prefix_seconds = 0.0;  // leading silence in the source
};

struct DatasetItem {
  signal::MultichannelWaveform noisy;
  Eigen::ArrayXd clean;  // reference-channel clean component
  double snr_db = 0.0;
  std::vector<Index> delays;
  Eigen::ArrayXd gains;
  std::uint64_t seed = 0;
};

/// Seeded sampling of the template: random SNR in range, random delays in
/// [0, max_delay], procedural sources when none are supplied. Each item is
/// one duration-long scene with exact ground truth.
std::vector<DatasetItem> generate_dataset(
    const std::vector<Eigen::ArrayXd>& clean_sources,
    const SceneTemplate& tmpl, Index count, std::uint64_t seed);

}  // namespace mcse::scenesim
