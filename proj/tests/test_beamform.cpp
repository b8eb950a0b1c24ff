#include "mcse/beamform.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "doctest.h"
#include "mcse/fft.hpp"
#include "mcse/scenesim.hpp"
#include "test_util.hpp"

using namespace mcse;
using namespace mcse::beamform;

namespace {

Eigen::ArrayXd delta(Index n, Index at) {
  Eigen::ArrayXd x = Eigen::ArrayXd::Zero(n);
  x[at] = 1.0;
  return x;
}

Eigen::ArrayXd shift_by(const Eigen::ArrayXd& x, Index d) {
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(x.size());
  out.tail(x.size() - d) = x.head(x.size() - d);
  return out;
}

}  // namespace

TEST_CASE("cross_correlation basics") {
  Eigen::ArrayXd x = testutil::random_normal(64, 1);
  Eigen::ArrayXd r = cross_correlation(x, x);
  CHECK(r[63] == doctest::Approx(x.square().sum()));  // lag 0

  Eigen::ArrayXd d0 = delta(16, 0), d3 = delta(16, 3);
  Eigen::ArrayXd rd = cross_correlation(d0, d3);
  Index best = 0;
  rd.maxCoeff(&best);
  CHECK(best - 15 == 3);  // peak at lag +3

  Eigen::ArrayXd y = testutil::random_normal(64, 2);
  Eigen::ArrayXd fwd = cross_correlation(x, y);
  Eigen::ArrayXd rev = cross_correlation(y, x);
  for (Index lag = -63; lag <= 63; ++lag)
    CHECK(fwd[lag + 63] == doctest::Approx(rev[-lag + 63]).epsilon(1e-12));

  CHECK_THROWS_AS(cross_correlation(x, testutil::random_normal(32, 3)), Error);
}

TEST_CASE("cross_spectral_density basics and Wiener-Khintchin identity") {
  Eigen::ArrayXd d = delta(8, 0);
  Eigen::VectorXcd s = cross_spectral_density(d, d);
  for (Index k = 0; k < s.size(); ++k) {
    CHECK(s[k].real() == doctest::Approx(1.0));
    CHECK(std::abs(s[k].imag()) <= 1e-12);
  }

  Eigen::ArrayXd x = testutil::random_normal(100, 4);
  Eigen::VectorXcd auto_csd = cross_spectral_density(x, x);
  for (Index k = 0; k < auto_csd.size(); ++k) {
    CHECK(auto_csd[k].real() >= -1e-9);
    CHECK(std::abs(auto_csd[k].imag()) <= 1e-9 * auto_csd.cwiseAbs().maxCoeff());
  }

  // DFT of the time-domain correlation equals the CSD on the padded grid.
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::ArrayXd x1 = testutil::random_normal(80, 10 + trial);
    Eigen::ArrayXd x2 = testutil::random_normal(80, 20 + trial);
    const Eigen::ArrayXd r = cross_correlation(x1, x2);
    const Eigen::VectorXcd csd = cross_spectral_density(x1, x2);
    const Index padded = csd.size();
    fft::ComplexVec circular = fft::ComplexVec::Zero(padded);
    const Index n = x1.size();
    for (Index lag = 0; lag <= n - 1; ++lag) circular[lag] = r[lag + n - 1];
    for (Index lag = 1; lag <= n - 1; ++lag)
      circular[padded - lag] = r[-lag + n - 1];
    const fft::ComplexVec lhs = fft::forward(circular);
    const double scale = csd.cwiseAbs().maxCoeff();
    CHECK((lhs - csd).cwiseAbs().maxCoeff() <= 1e-9 * scale);
  }
}

TEST_CASE("gcc_phat recovers integer delays with the documented sign") {
  Eigen::ArrayXd x = testutil::random_normal(2000, 5);
  CHECK(gcc_phat(x, x, 32).delay == 0);

  // First argument delayed by 5 -> +5.
  Eigen::ArrayXd x_delayed = shift_by(x, 5);
  const auto result = gcc_phat(x_delayed, x, 32);
  CHECK(result.delay == 5);
  CHECK(gcc_phat(x, x_delayed, 32).delay == -5);
  CHECK(result.correlation.size() == 65);

  // Consistency with the cross-correlation peak: R(x_delayed, x) peaks at
  // the opposite lag under the R(tau) = sum x1[t] x2[t+tau] convention.
  Eigen::ArrayXd r = cross_correlation(x_delayed, x);
  Index best = 0;
  r.maxCoeff(&best);
  CHECK(best - (x.size() - 1) == -5);

  CHECK_THROWS_WITH_AS(gcc_phat(Eigen::ArrayXd::Zero(100),
                                Eigen::ArrayXd::Zero(100), 10),
                       doctest::Contains("degenerate spectrum"), Error);
}

TEST_CASE("gcc_phat tolerates 0 dB white noise most of the time") {
  int hits = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    Eigen::ArrayXd clean = testutil::random_normal(4000, 100 + trial);
    Eigen::ArrayXd a = shift_by(clean, 7);
    Eigen::ArrayXd b = clean;
    // 0 dB SNR per channel.
    const double sigma = std::sqrt(clean.square().mean());
    a += sigma * testutil::random_normal(4000, 200 + trial);
    b += sigma * testutil::random_normal(4000, 300 + trial);
    if (gcc_phat(a, b, 32).delay == 7) ++hits;
  }
  CHECK(hits >= 17);
}

TEST_CASE("steering vector entries follow the phase law") {
  Eigen::ArrayXd gains = Eigen::ArrayXd::Ones(3);
  Eigen::ArrayXd delays = Eigen::ArrayXd::Zero(3);
  SteeringVector sv = steering_vector(gains, delays, 16000.0, 1024);
  CHECK(sv.bins() == 513);
  CHECK((sv.values.cwiseAbs().array() - 1.0).abs().maxCoeff() <= 1e-12);
  CHECK((sv.values.real().array() - 1.0).abs().maxCoeff() <= 1e-12);

  Eigen::ArrayXd gains2(2);
  gains2 << 0.5, 2.0;
  Eigen::ArrayXd delays2(2);
  delays2 << 1e-3, 2e-3;
  SteeringVector sv2 = steering_vector(gains2, delays2, 16000.0, 1024);
  CHECK(sv2.values(0, 0) == std::complex<double>(0.5, 0.0));
  CHECK(sv2.values(0, 1) == std::complex<double>(2.0, 0.0));

  // tau = K/(2 fs) at bin 1 gives phase -pi.
  Eigen::ArrayXd delays3(1);
  delays3 << 1024.0 / (2.0 * 16000.0);
  SteeringVector sv3 = steering_vector(Eigen::ArrayXd::Ones(1), delays3,
                                       16000.0, 1024);
  CHECK(sv3.values(1, 0).real() == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(std::abs(sv3.values(1, 0).imag()) <= 1e-12);
}

namespace {

std::vector<signal::ComplexSpectrogram> fake_spectrograms(Index channels,
                                                          Index bins,
                                                          Index frames,
                                                          std::uint64_t seed) {
  std::vector<signal::ComplexSpectrogram> specs(channels);
  for (Index m = 0; m < channels; ++m) {
    specs[m].real_part =
        Eigen::Map<const Eigen::ArrayXXd>(
            testutil::random_normal(bins * frames, seed + 2 * m).data(), bins,
            frames);
    specs[m].imag_part =
        Eigen::Map<const Eigen::ArrayXXd>(
            testutil::random_normal(bins * frames, seed + 2 * m + 1).data(),
            bins, frames);
  }
  return specs;
}

}  // namespace

TEST_CASE("noise covariance is Hermitian, loaded, and converges to identity") {
  auto specs = fake_spectrograms(3, 4, 10000, 42);
  std::vector<Index> frames(10000);
  for (Index i = 0; i < 10000; ++i) frames[i] = i;
  NoiseCovariance cov = estimate_noise_covariance(specs, frames);
  REQUIRE(cov.bins() == 4);
  for (const auto& r : cov.values) {
    CHECK((r - r.adjoint()).cwiseAbs().maxCoeff() <= 1e-12);
    const double diag = r.real().trace() / 3.0;
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 3; ++j)
        if (i != j) CHECK(std::abs(r(i, j)) <= 0.05 * diag);
  }

  // A single frame is still invertible thanks to the diagonal loading.
  auto one = fake_spectrograms(2, 3, 1, 7);
  NoiseCovariance tiny = estimate_noise_covariance(one, {0});
  REQUIRE_THROWS_AS(estimate_noise_covariance(one, {}), Error);
  for (const auto& r : tiny.values) {
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(r);
    CHECK(lu.isInvertible());
  }
}

TEST_CASE("mvdr weights satisfy the closed forms and the constraint") {
  SteeringVector sv;
  sv.values = Eigen::MatrixXcd::Ones(3, 2);
  NoiseCovariance cov;
  cov.values.assign(3, Eigen::MatrixXcd::Identity(2, 2));
  cov.frame_count = 10;
  Eigen::MatrixXcd w = mvdr_weights(cov, sv);
  CHECK((w.array() - 0.5).abs().maxCoeff() <= 1e-12);

  Eigen::MatrixXcd diag(2, 2);
  diag << 1.0, 0.0, 0.0, 4.0;
  cov.values.assign(3, diag);
  w = mvdr_weights(cov, sv);
  CHECK(std::abs(w(0, 0) - std::complex<double>(0.8, 0.0)) <= 1e-12);
  CHECK(std::abs(w(0, 1) - std::complex<double>(0.2, 0.0)) <= 1e-12);

  // Random Hermitian PSD covariance: w^H h = 1 at every bin, and with
  // R = sigma^2 I the weights match h/(h^H h) for any sigma.
  std::mt19937_64 rng(11);
  std::normal_distribution<double> dist(0.0, 1.0);
  const Index channels = 4;
  SteeringVector sv2;
  sv2.values.resize(5, channels);
  for (Index f = 0; f < 5; ++f)
    for (Index m = 0; m < channels; ++m)
      sv2.values(f, m) = std::complex<double>(dist(rng), dist(rng));
  NoiseCovariance cov2;
  for (Index f = 0; f < 5; ++f) {
    Eigen::MatrixXcd a(channels, channels);
    for (Index i = 0; i < channels; ++i)
      for (Index j = 0; j < channels; ++j)
        a(i, j) = std::complex<double>(dist(rng), dist(rng));
    cov2.values.push_back(a * a.adjoint() +
                          0.1 * Eigen::MatrixXcd::Identity(channels, channels));
  }
  Eigen::MatrixXcd w2 = mvdr_weights(cov2, sv2);
  for (Index f = 0; f < 5; ++f) {
    const std::complex<double> constraint =
        (w2.row(f).conjugate() * sv2.values.row(f).transpose())(0, 0);
    CHECK(std::abs(constraint - 1.0) <= 1e-10);
  }

  for (double sigma2 : {0.5, 3.0}) {
    NoiseCovariance scaled;
    scaled.values.assign(
        5, sigma2 * Eigen::MatrixXcd::Identity(channels, channels));
    Eigen::MatrixXcd ws = mvdr_weights(scaled, sv2);
    for (Index f = 0; f < 5; ++f) {
      const Eigen::VectorXcd h = sv2.values.row(f).transpose();
      const Eigen::VectorXcd expect = h / h.squaredNorm();
      CHECK((ws.row(f).transpose() - expect).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("mvdr_enhance on identical noiseless channels is a passthrough") {
  Eigen::ArrayXd s = testutil::random_uniform(19200, 77, -0.5, 0.5);
  s.head(4800).setZero();  // noise-only prefix (here: silence)
  signal::MultichannelWaveform wave;
  wave.sample_rate = 16000;
  wave.samples.resize(2, 19200);
  wave.samples.row(0) = s.transpose();
  wave.samples.row(1) = s.transpose();

  MvdrOptions options;
  options.noise_prefix_seconds = 0.3;
  MvdrResult result = mvdr_enhance(wave, options);
  CHECK(result.delays_samples.abs().maxCoeff() == 0.0);

  const signal::ComplexSpectrogram ref = signal::stft(s, options.stft);
  const Eigen::ArrayXd direct = signal::istft(ref);
  double max_err = 0.0;
  for (Index n = 1024; n < 19200 - 1024; ++n)
    max_err = std::max(max_err, std::abs(result.enhanced[n] - direct[n]));
  CHECK(max_err <= 1e-9);
}

TEST_CASE("mvdr_enhance improves on the reference channel for white noise") {
  // Four microphones, common source with integer delays, independent
  // white noise at 0 dB, and a noise-only lead-in for the covariance.
  scenesim::Scene scene;
  scene.clean = testutil::bandlimited_noise(19200, 404, 0.8);
  scene.clean.head(4800).setZero();
  scene.sample_rate = 16000;
  scene.gains = Eigen::ArrayXd::Ones(4);
  scene.delays = {0, 3, 5, 8};
  scene.snr_db = 0.0;
  scene.seed = 11;
  const auto render = scenesim::simulate_scene(scene);

  MvdrOptions options;
  options.noise_prefix_seconds = 0.3;
  const auto result = mvdr_enhance(render.mixture, options);

  const Eigen::ArrayXd clean_ref = render.clean_parts.row(0).transpose();
  auto interior_snr = [&clean_ref](const Eigen::ArrayXd& estimate) {
    const auto c = clean_ref.segment(4800, 19200 - 9600);
    const auto e = estimate.segment(4800, 19200 - 9600);
    return 10.0 * std::log10(c.square().sum() / (e - c).square().sum());
  };
  const double input_snr =
      interior_snr(render.mixture.samples.row(0).transpose());
  const double output_snr = interior_snr(result.enhanced);
  CHECK(output_snr >= input_snr);
  CHECK(output_snr - input_snr >= 2.0);  // clear array gain with M = 4
}

TEST_CASE("mvdr_enhance rejects an undersized noise prefix") {
  signal::MultichannelWaveform wave;
  wave.sample_rate = 16000;
  wave.samples = Eigen::ArrayXXd::Random(2, 19200);
  MvdrOptions options;
  options.noise_prefix_seconds = 0.01;  // under one STFT window
  CHECK_THROWS_WITH_AS(mvdr_enhance(wave, options),
                       doctest::Contains("noise prefix"), Error);
}
