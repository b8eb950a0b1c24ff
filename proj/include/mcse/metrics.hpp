#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "mcse/common.hpp"

namespace mcse::metrics {

/// Scale-invariant signal-to-distortion ratio in dB. Both signals are
/// mean-subtracted, the estimate is projected onto the reference, and the
/// ratio of target to residual energy is returned. A residual below 1e-30
/// yields +infinity.
double si_sdr(const Eigen::ArrayXd& estimate, const Eigen::ArrayXd& reference);

/// Short-time objective intelligibility: both signals are resampled to
/// 10 kHz, silent frames (more than 40 dB below the reference peak frame)
/// are removed, and linear correlations of one-third-octave band envelopes
/// are averaged over 384 ms segments with a -15 dB SDR clipping bound.
double stoi(const Eigen::ArrayXd& estimate, const Eigen::ArrayXd& reference,
            int sample_rate);

/// Fixed-ratio windowed-sinc resampler (64-tap Hann-windowed kernel).
Eigen::ArrayXd resample_sinc(const Eigen::ArrayXd& x, int from_rate,
                             int to_rate);

struct EvalPair {
  Eigen::ArrayXd estimate;
  Eigen::ArrayXd reference;
  std::string condition = "default";
  std::string item_id;
};

struct EvalRow {
  std::string condition;
  std::string metric;
  std::string item_id;
  double value = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> items;
  std::vector<EvalRow> aggregates;  // per (condition, metric), then overall

  double aggregate_for(const std::string& condition,
                       const std::string& metric) const;
};

enum class MetricKind { si_sdr, stoi };

/// Per-item metric values grouped by condition with per-condition and
/// overall means. Sample rate applies to every pair.
EvalReport evaluate(const std::vector<EvalPair>& pairs,
                    const std::vector<MetricKind>& metrics, int sample_rate);

/// CSV emission: header condition,metric,item_id,value; aggregate rows use
/// item_id "mean" and the overall rows use condition "all".
std::string report_to_csv(const EvalReport& report);

}  // namespace mcse::metrics
