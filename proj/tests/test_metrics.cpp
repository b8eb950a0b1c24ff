#include "mcse/metrics.hpp"

#include <cmath>

#include "doctest.h"
#include "mcse/scenesim.hpp"
#include "test_util.hpp"

using namespace mcse;
using namespace mcse::metrics;

TEST_CASE("si_sdr identity, scale invariance and orthogonal noise") {
  Eigen::ArrayXd x = testutil::random_normal(8000, 1);
  CHECK(std::isinf(si_sdr(x, x)));
  CHECK(si_sdr(x, x) > 0);

  const double base = si_sdr(x + 0.1 * testutil::random_normal(8000, 2), x);
  for (double alpha : {0.25, -3.0}) {
    const double scaled =
        si_sdr(alpha * (x + 0.1 * testutil::random_normal(8000, 2)), x);
    CHECK(scaled == doctest::Approx(base).epsilon(1e-12));
  }

  // Orthogonal perturbation with a 10:1 energy ratio reads 10 dB.
  Eigen::ArrayXd r = testutil::random_normal(4096, 3);
  r -= r.mean();
  Eigen::ArrayXd w = testutil::random_normal(4096, 4);
  w -= w.mean();
  w -= (w * r).sum() / r.square().sum() * r;  // Gram-Schmidt
  w *= std::sqrt(r.square().sum() / (10.0 * w.square().sum()));
  CHECK(si_sdr(r + w, r) == doctest::Approx(10.0).epsilon(1e-9));

  CHECK_THROWS_AS(si_sdr(x, Eigen::ArrayXd::Zero(8000)), Error);
}

TEST_CASE("resampler preserves a low-frequency tone") {
  const int from = 16000, to = 10000;
  Eigen::ArrayXd x(16000);
  for (Index i = 0; i < x.size(); ++i)
    x[i] = std::sin(2.0 * kPi * 440.0 * static_cast<double>(i) / from);
  Eigen::ArrayXd y = resample_sinc(x, from, to);
  CHECK(y.size() == 10000);
  // Compare against the analytic tone at the new rate, away from edges.
  double max_err = 0.0;
  for (Index i = 100; i < y.size() - 100; ++i) {
    const double expect =
        std::sin(2.0 * kPi * 440.0 * static_cast<double>(i) / to);
    max_err = std::max(max_err, std::abs(y[i] - expect));
  }
  CHECK(max_err <= 2e-3);
}

TEST_CASE("stoi identity and monotonic degradation") {
  // A speech-like signal of 1.2 s keeps well over 384 ms after silence
  // removal.
  Eigen::ArrayXd x = scenesim::procedural_source(19200, 16000, 3);
  CHECK(stoi(x, x, 16000) == doctest::Approx(1.0).epsilon(1e-9));

  const double strong = -10.0, weak = 20.0;
  auto noisy_at = [&x](double snr_db, std::uint64_t seed) {
    Eigen::ArrayXd noise = testutil::random_normal(x.size(), seed);
    const double beta = std::sqrt(x.square().sum() /
                                  (noise.square().sum() *
                                   std::pow(10.0, snr_db / 10.0)));
    return Eigen::ArrayXd(x + beta * noise);
  };
  const double low = stoi(noisy_at(strong, 5), x, 16000);
  const double high = stoi(noisy_at(weak, 6), x, 16000);
  CHECK(low < high);
  CHECK(low >= -1.0);
  CHECK(high <= 1.0);

  // Independent noise against speech stays low (regression bound).
  Eigen::ArrayXd unrelated = testutil::random_normal(19200, 7);
  CHECK(stoi(unrelated, x, 16000) < 0.35);

  CHECK_THROWS_AS(stoi(x.head(1000), x.head(1000), 16000), Error);
  CHECK_THROWS_AS(stoi(x, Eigen::ArrayXd::Zero(19200), 16000), Error);
}

TEST_CASE("evaluate groups by condition and reports exact means") {
  Eigen::ArrayXd x = scenesim::procedural_source(19200, 16000, 11);
  Eigen::ArrayXd n1 = x + 0.05 * testutil::random_normal(19200, 12);
  Eigen::ArrayXd n2 = x + 0.20 * testutil::random_normal(19200, 13);

  std::vector<EvalPair> pairs;
  pairs.push_back({n1, x, "white", "0"});
  pairs.push_back({n2, x, "white", "1"});
  pairs.push_back({n1, x, "pink", "0"});

  EvalReport report = evaluate(pairs, {MetricKind::si_sdr}, 16000);
  REQUIRE(report.items.size() == 3);
  const double v0 = report.items[0].value;
  const double v1 = report.items[1].value;
  const double v2 = report.items[2].value;
  CHECK(report.aggregate_for("white", "si_sdr") ==
        doctest::Approx((v0 + v1) / 2.0).epsilon(1e-12));
  CHECK(report.aggregate_for("pink", "si_sdr") ==
        doctest::Approx(v2).epsilon(1e-12));
  CHECK(report.aggregate_for("all", "si_sdr") ==
        doctest::Approx((v0 + v1 + v2) / 3.0).epsilon(1e-12));

  const std::string csv = report_to_csv(report);
  CHECK(csv.find("condition,metric,item_id,value") == 0);
  CHECK(csv.find("white,si_sdr,mean,") != std::string::npos);
  CHECK(csv.find("all,si_sdr,mean,") != std::string::npos);

  // Single pair: the mean equals the single value.
  EvalReport single = evaluate({pairs[2]}, {MetricKind::si_sdr}, 16000);
  CHECK(single.aggregate_for("pink", "si_sdr") ==
        doctest::Approx(v2).epsilon(1e-12));

  CHECK_THROWS_AS(evaluate({}, {MetricKind::si_sdr}, 16000), Error);
}
