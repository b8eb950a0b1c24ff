#include "mcse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <sstream>

#include "mcse/fft.hpp"
#include "mcse/signal.hpp"

namespace mcse::metrics {

double si_sdr(const Eigen::ArrayXd& estimate, const Eigen::ArrayXd& reference) {
  require(estimate.size() == reference.size(), errc::shape_mismatch,
          "si_sdr: length mismatch");
  require(reference.size() >= 1, errc::invalid_argument, "si_sdr: empty input");
  const Eigen::ArrayXd e = estimate - estimate.mean();
  const Eigen::ArrayXd r = reference - reference.mean();
  const double ref_energy = r.square().sum();
  require(ref_energy > 0.0, errc::invalid_argument, "si_sdr: zero reference");
  const double alpha = (e * r).sum() / ref_energy;
  const Eigen::ArrayXd target = alpha * r;
  const double target_energy = target.square().sum();
  const double residual_energy = (e - target).square().sum();
  if (residual_energy < 1e-30)
    return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(target_energy / residual_energy);
}

Eigen::ArrayXd resample_sinc(const Eigen::ArrayXd& x, int from_rate,
                             int to_rate) {
  require(from_rate > 0 && to_rate > 0, errc::invalid_argument,
          "resample: rates must be positive");
  if (from_rate == to_rate) return x;
  const Index n = x.size();
  constexpr Index kHalfTaps = 32;  // 64-tap kernel
  const double ratio = static_cast<double>(to_rate) / from_rate;
  const double cutoff = std::min(1.0, ratio);  // anti-alias for downsampling
  const Index out_len = static_cast<Index>(
      std::floor(static_cast<double>(n - 1) * ratio)) + 1;
  Eigen::ArrayXd out(out_len);
  for (Index i = 0; i < out_len; ++i) {
    const double center = static_cast<double>(i) / ratio;
    const Index lo = std::max<Index>(0, static_cast<Index>(std::ceil(center)) - kHalfTaps);
    const Index hi = std::min<Index>(n - 1, static_cast<Index>(std::floor(center)) + kHalfTaps);
    double acc = 0.0;
    for (Index k = lo; k <= hi; ++k) {
      const double u = static_cast<double>(k) - center;
      const double sinc_arg = cutoff * u;
      const double sinc = sinc_arg == 0.0
                              ? 1.0
                              : std::sin(kPi * sinc_arg) / (kPi * sinc_arg);
      const double window =
          0.5 + 0.5 * std::cos(kPi * u / static_cast<double>(kHalfTaps));
      acc += x[k] * cutoff * sinc * window;
    }
    out[i] = acc;
  }
  return out;
}

namespace {

constexpr int kStoiRate = 10000;
constexpr Index kStoiFrame = 256;
constexpr Index kStoiHop = 128;
constexpr Index kStoiFft = 512;
constexpr Index kStoiBands = 15;
constexpr double kStoiLowestBand = 150.0;
constexpr Index kStoiSegment = 30;  // frames, 384 ms
constexpr double kStoiDynRange = 40.0;
constexpr double kStoiClip = 5.623413251903491;  // 10^(15/20)

std::vector<Eigen::ArrayXd> frame_signal(const Eigen::ArrayXd& x,
                                         const Eigen::ArrayXd& window) {
  std::vector<Eigen::ArrayXd> frames;
  for (Index start = 0; start + kStoiFrame <= x.size(); start += kStoiHop)
    frames.push_back(x.segment(start, kStoiFrame) * window);
  return frames;
}

Eigen::ArrayXd overlap_add(const std::vector<Eigen::ArrayXd>& frames) {
  if (frames.empty()) return Eigen::ArrayXd();
  const Index n = (static_cast<Index>(frames.size()) - 1) * kStoiHop + kStoiFrame;
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(n);
  for (std::size_t t = 0; t < frames.size(); ++t)
    out.segment(static_cast<Index>(t) * kStoiHop, kStoiFrame) += frames[t];
  return out;
}

/// One-third-octave band magnitudes, bands x frames.
Eigen::ArrayXXd band_envelopes(const Eigen::ArrayXd& x) {
  signal::StftConfig cfg;
  cfg.fft_length = kStoiFft;
  cfg.window_length = kStoiFrame;
  cfg.hop_length = kStoiHop;
  cfg.drop_last_bin = false;
  const signal::ComplexSpectrogram spec = signal::stft(x, cfg);

  Eigen::ArrayXXd bands = Eigen::ArrayXXd::Zero(kStoiBands, spec.frames());
  for (Index j = 0; j < kStoiBands; ++j) {
    const double cf = kStoiLowestBand * std::pow(2.0, static_cast<double>(j) / 3.0);
    const double lo = cf * std::pow(2.0, -1.0 / 6.0);
    const double hi = cf * std::pow(2.0, 1.0 / 6.0);
    for (Index i = 0; i < spec.bins(); ++i) {
      const double freq =
          static_cast<double>(i) * kStoiRate / static_cast<double>(kStoiFft);
      if (freq < lo || freq >= hi) continue;
      bands.row(j) += spec.real_part.row(i).square() + spec.imag_part.row(i).square();
    }
  }
  return bands.sqrt();
}

}  // namespace

double stoi(const Eigen::ArrayXd& estimate, const Eigen::ArrayXd& reference,
            int sample_rate) {
  require(estimate.size() == reference.size(), errc::shape_mismatch,
          "stoi: length mismatch");
  require(reference.abs().maxCoeff() > 0.0, errc::invalid_argument,
          "stoi: silent reference");

  const Eigen::ArrayXd est10 = resample_sinc(estimate, sample_rate, kStoiRate);
  const Eigen::ArrayXd ref10 = resample_sinc(reference, sample_rate, kStoiRate);

  // Remove frames more than 40 dB below the loudest reference frame.
  const Eigen::ArrayXd window = signal::hann_window(kStoiFrame);
  const auto est_frames = frame_signal(est10, window);
  const auto ref_frames = frame_signal(ref10, window);
  require(!ref_frames.empty(), errc::invalid_argument, "stoi: input too short");
  double max_energy_db = -std::numeric_limits<double>::infinity();
  std::vector<double> frame_db(ref_frames.size());
  for (std::size_t t = 0; t < ref_frames.size(); ++t) {
    frame_db[t] = 20.0 * std::log10(std::sqrt(ref_frames[t].square().sum()) + 1e-300);
    max_energy_db = std::max(max_energy_db, frame_db[t]);
  }
  std::vector<Eigen::ArrayXd> est_kept, ref_kept;
  for (std::size_t t = 0; t < ref_frames.size(); ++t) {
    if (frame_db[t] > max_energy_db - kStoiDynRange) {
      est_kept.push_back(est_frames[t]);
      ref_kept.push_back(ref_frames[t]);
    }
  }
  const Eigen::ArrayXd est_active = overlap_add(est_kept);
  const Eigen::ArrayXd ref_active = overlap_add(ref_kept);
  require(ref_active.size() >= (kStoiSegment - 1) * kStoiHop + kStoiFrame,
          errc::invalid_argument,
          "stoi: less than 384 ms of signal after silence removal");

  const Eigen::ArrayXXd est_bands = band_envelopes(est_active);
  const Eigen::ArrayXXd ref_bands = band_envelopes(ref_active);
  const Index frames = ref_bands.cols();
  require(frames >= kStoiSegment, errc::invalid_argument,
          "stoi: input too short");

  double total = 0.0;
  Index cells = 0;
  for (Index m = kStoiSegment - 1; m < frames; ++m) {
    for (Index j = 0; j < kStoiBands; ++j) {
      Eigen::ArrayXd x =
          ref_bands.row(j).segment(m - kStoiSegment + 1, kStoiSegment);
      Eigen::ArrayXd y =
          est_bands.row(j).segment(m - kStoiSegment + 1, kStoiSegment);
      const double x_norm = std::sqrt(x.square().sum());
      const double y_norm = std::sqrt(y.square().sum());
      if (y_norm > 0.0) y *= x_norm / y_norm;
      y = y.min(x * (1.0 + kStoiClip));  // -15 dB SDR clipping bound
      x -= x.mean();
      y -= y.mean();
      const double denom =
          std::sqrt(x.square().sum()) * std::sqrt(y.square().sum());
      if (denom <= 0.0) continue;  // degenerate flat band
      total += (x * y).sum() / denom;
      ++cells;
    }
  }
  require(cells > 0, errc::invalid_argument, "stoi: no valid band segments");
  return total / static_cast<double>(cells);
}

double EvalReport::aggregate_for(const std::string& condition,
                                 const std::string& metric) const {
  for (const auto& row : aggregates)
    if (row.condition == condition && row.metric == metric) return row.value;
  fail(errc::invalid_argument,
       "no aggregate for " + condition + "/" + metric);
}

EvalReport evaluate(const std::vector<EvalPair>& pairs,
                    const std::vector<MetricKind>& metrics, int sample_rate) {
  require(!pairs.empty(), errc::invalid_argument, "evaluate: no pairs");
  require(!metrics.empty(), errc::invalid_argument, "evaluate: no metrics");
  EvalReport report;
  std::map<std::pair<std::string, std::string>, std::pair<double, Index>> acc;
  std::map<std::string, std::pair<double, Index>> overall;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const EvalPair& p = pairs[i];
    require(p.estimate.size() == p.reference.size(), errc::shape_mismatch,
            "evaluate: pair length mismatch");
    const std::string id =
        p.item_id.empty() ? std::to_string(i) : p.item_id;
    for (MetricKind kind : metrics) {
      const std::string name = kind == MetricKind::si_sdr ? "si_sdr" : "stoi";
      const double value = kind == MetricKind::si_sdr
                               ? si_sdr(p.estimate, p.reference)
                               : stoi(p.estimate, p.reference, sample_rate);
      report.items.push_back({p.condition, name, id, value});
      auto& slot = acc[{p.condition, name}];
      slot.first += value;
      slot.second += 1;
      auto& all = overall[name];
      all.first += value;
      all.second += 1;
    }
  }
  for (const auto& [key, slot] : acc)
    report.aggregates.push_back(
        {key.first, key.second, "mean", slot.first / slot.second});
  for (const auto& [metric, slot] : overall)
    report.aggregates.push_back({"all", metric, "mean", slot.first / slot.second});
  return report;
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream os;
  os.precision(12);
  os << "condition,metric,item_id,value\n";
  for (const auto& row : report.items)
    os << row.condition << "," << row.metric << "," << row.item_id << ","
       << row.value << "\n";
  for (const auto& row : report.aggregates)
    os << row.condition << "," << row.metric << "," << row.item_id << ","
       << row.value << "\n";
  return os.str();
}

}  // namespace mcse::metrics
