#include "mcse/scenesim.hpp"

#include <cmath>
#include <random>

#include "mcse/fft.hpp"

namespace mcse::scenesim {

namespace {

Eigen::ArrayXd shift_forward(const Eigen::ArrayXd& x, Index delay) {
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(x.size());
  if (delay < x.size())
    out.tail(x.size() - delay) = x.head(x.size() - delay);
  return out;
}

Eigen::ArrayXd white_noise(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::ArrayXd out(n);
  for (Index i = 0; i < n; ++i) out[i] = dist(rng);
  return out;
}

/// 1/f-shaped noise via spectral weighting of white noise.
Eigen::ArrayXd pink_noise(Index n, std::mt19937_64& rng) {
  const Index padded = fft::next_pow2(n);
  Eigen::ArrayXd w = white_noise(padded, rng);
  fft::ComplexVec spectrum = fft::rfft(w.matrix(), padded);
  spectrum[0] = 0.0;
  for (Index k = 1; k < spectrum.size(); ++k)
    spectrum[k] /= std::sqrt(static_cast<double>(k));
  Eigen::ArrayXd shaped = fft::irfft(spectrum, padded).array().head(n);
  const double rms = std::sqrt(shaped.square().mean());
  if (rms > 0.0) shaped /= rms;
  return shaped;
}

}  // namespace

void Scene::validate() const {
  require(clean.size() >= 1, errc::invalid_argument, "scene: empty clean signal");
  require(sample_rate > 0, errc::invalid_argument, "scene: bad sample rate");
  const Index m = gains.size();
  require(m >= 1, errc::invalid_argument, "scene: need at least one channel");
  require(static_cast<Index>(delays.size()) == m, errc::shape_mismatch,
          "scene: delays size must match gains");
  require(reference_index >= 0 && reference_index < m, errc::invalid_argument,
          "scene: reference index out of range");
  for (Index d : delays) {
    require(d >= 0, errc::invalid_argument, "scene: delays must be >= 0");
    require(10 * d < clean.size(), errc::invalid_argument,
            "scene: delays must consume < 10% of the signal length");
  }
  if (noise_kind == NoiseKind::wav_file) {
    require(noise_wav.rows() == m && noise_wav.cols() >= clean.size(),
            errc::invalid_argument,
            "scene: wav_file noise must provide M channels of >= N samples");
  }
}

SceneRender simulate_scene(const Scene& scene) {
  scene.validate();
  const Index m = scene.channels();
  const Index n = scene.clean.size();

  SceneRender render;
  render.clean_parts.resize(m, n);
  for (Index ch = 0; ch < m; ++ch)
    render.clean_parts.row(ch) =
        (scene.gains[ch] * shift_forward(scene.clean, scene.delays[ch]))
            .transpose();

  render.noise_parts = Eigen::ArrayXXd::Zero(m, n);
  if (scene.snr_db.has_value()) {
    std::mt19937_64 rng(scene.seed);
    Eigen::ArrayXXd noise(m, n);
    for (Index ch = 0; ch < m; ++ch) {
      switch (scene.noise_kind) {
        case NoiseKind::white:
          noise.row(ch) = white_noise(n, rng).transpose();
          break;
        case NoiseKind::pink:
          noise.row(ch) = pink_noise(n, rng).transpose();
          break;
        case NoiseKind::wav_file:
          noise.row(ch) = scene.noise_wav.row(ch).head(n);
          break;
      }
    }
    const double clean_energy =
        render.clean_parts.row(scene.reference_index).square().sum();
    require(clean_energy > 0.0, errc::invalid_argument,
            "scene: silent clean signal at the reference channel");
    const double noise_energy =
        noise.row(scene.reference_index).square().sum();
    require(noise_energy > 0.0, errc::invalid_argument,
            "scene: snr unreachable with zero noise");
    // 10 log10(clean / (beta^2 noise)) = snr  =>  beta from the energies.
    const double beta = std::sqrt(
        clean_energy / (noise_energy * std::pow(10.0, *scene.snr_db / 10.0)));
    render.noise_parts = beta * noise;
  }

  render.mixture.sample_rate = scene.sample_rate;
  render.mixture.samples = render.clean_parts + render.noise_parts;
  return render;
}

Eigen::ArrayXd procedural_source(Index length, int sample_rate,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> f0_dist(95.0, 240.0);
  std::uniform_int_distribution<int> count_dist(3, 5);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * kPi);
  std::uniform_real_distribution<double> mod_dist(2.0, 6.0);

  const double f0 = f0_dist(rng);
  const int harmonics = count_dist(rng);
  const double mod_rate = mod_dist(rng);
  const double mod_phase = phase_dist(rng);

  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(length);
  for (int h = 1; h <= harmonics; ++h) {
    const double amp = 1.0 / static_cast<double>(h);
    const double phase = phase_dist(rng);
    const double freq = f0 * h;
    for (Index i = 0; i < length; ++i) {
      const double t = static_cast<double>(i) / sample_rate;
      out[i] += amp * std::sin(2.0 * kPi * freq * t + phase);
    }
  }
  // Speech-like syllabic envelope: raised cosine, never fully silent.
  for (Index i = 0; i < length; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double env =
        0.55 + 0.45 * std::sin(2.0 * kPi * mod_rate * t + mod_phase);
    out[i] *= env;
  }
  const double peak = out.abs().maxCoeff();
  if (peak > 0.0) out *= 0.8 / peak;
  return out;
}

std::vector<DatasetItem> generate_dataset(
    const std::vector<Eigen::ArrayXd>& clean_sources,
    const SceneTemplate& tmpl, Index count, std::uint64_t seed) {
  require(count >= 1, errc::invalid_argument, "generate_dataset: count must be >= 1");
  require(tmpl.num_channels >= 1, errc::invalid_argument,
          "generate_dataset: need at least one channel");
  require(tmpl.reference_index >= 0 && tmpl.reference_index < tmpl.num_channels,
          errc::invalid_argument, "generate_dataset: bad reference index");
  require(tmpl.snr_db_hi >= tmpl.snr_db_lo, errc::invalid_argument,
          "generate_dataset: empty SNR range");

  const Index seg_len = static_cast<Index>(
      std::llround(tmpl.duration_seconds * tmpl.sample_rate));
  const Index prefix = std::min<Index>(
      seg_len,
      static_cast<Index>(std::llround(tmpl.noise_prefix_seconds * tmpl.sample_rate)));

  std::vector<DatasetItem> items;
  items.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    // Per-item derived seed keeps items independent and reproducible.
    const std::uint64_t item_seed = seed * 1000003ull + static_cast<std::uint64_t>(i);
    std::mt19937_64 rng(item_seed);
    std::uniform_real_distribution<double> snr_dist(tmpl.snr_db_lo, tmpl.snr_db_hi);
    std::uniform_int_distribution<Index> delay_dist(0, tmpl.max_delay);
    std::uniform_real_distribution<double> gain_dist(tmpl.gain_lo, tmpl.gain_hi);

    Scene scene;
    scene.sample_rate = tmpl.sample_rate;
    scene.noise_kind = tmpl.noise_kind;
    scene.reference_index = tmpl.reference_index;
    scene.snr_db = snr_dist(rng);
    scene.seed = item_seed + 0x9e3779b97f4a7c15ull;
    scene.gains.resize(tmpl.num_channels);
    scene.delays.resize(tmpl.num_channels);
    for (int m = 0; m < tmpl.num_channels; ++m) {
      scene.gains[m] = gain_dist(rng);
      scene.delays[static_cast<std::size_t>(m)] = delay_dist(rng);
    }

    if (clean_sources.empty()) {
      scene.clean = procedural_source(seg_len, tmpl.sample_rate, item_seed + 7);
    } else {
      std::uniform_int_distribution<std::size_t> src_dist(0, clean_sources.size() - 1);
      const Eigen::ArrayXd& src = clean_sources[src_dist(rng)];
      require(src.size() >= seg_len, errc::invalid_argument,
              "generate_dataset: clean source shorter than one segment");
      std::uniform_int_distribution<Index> off_dist(0, src.size() - seg_len);
      scene.clean = src.segment(off_dist(rng), seg_len);
    }
    if (prefix > 0) scene.clean.head(prefix).setZero();
    require(scene.clean.abs().maxCoeff() > 0.0, errc::invalid_argument,
            "generate_dataset: silent clean segment");

    SceneRender render = simulate_scene(scene);
    DatasetItem item;
    item.noisy = std::move(render.mixture);
    item.clean = render.clean_parts.row(tmpl.reference_index).transpose();
    item.snr_db = *scene.snr_db;
    item.delays = scene.delays;
    item.gains = scene.gains;
    item.seed = item_seed;
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace mcse::scenesim
