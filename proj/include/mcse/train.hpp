#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcse/model.hpp"

namespace mcse::model {

/// L = 2 ||s_hat - s||_2 + || |STFT(s_hat)| - |STFT(s)| ||_2 with the
/// magnitude smoothed as sqrt(re^2 + im^2 + 1e-12); differentiable through
/// the internal STFT.
ad::Tensor loss(ad::Graph& g, const ad::Tensor& estimate,
                const Eigen::ArrayXd& target,
                const signal::StftConfig& stft_config);

/// Value-only form for plain waveforms.
double loss_value(const Eigen::ArrayXd& estimate, const Eigen::ArrayXd& target,
                  const signal::StftConfig& stft_config);

struct TrainPair {
  signal::MultichannelWaveform noisy;
  Eigen::ArrayXd clean;
};

/// Batched training forward: peak-normalized inputs and targets, full
/// network, per-item masked-reference loss, mean over the batch.
ad::Tensor training_loss(ad::Graph& g,
                         const std::vector<const TrainPair*>& batch,
                         const ModelConfig& config, ModelParams& params,
                         ad::Mode mode);

struct TrainOptions {
  Index epochs = 100;
  Index batch_size = 32;
  std::optional<long long> max_steps;
  Index val_interval = 50;     // steps between validation evaluations
  double val_fraction = 0.1;   // 0 disables the validation split
  double lr = 1e-4;
};

struct HistoryRow {
  long long step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainResult {
  ModelParams params;  // best-validation parameters (final, without split)
  std::vector<HistoryRow> history;
  double best_val_loss = 0.0;
  long long best_step = 0;
  std::vector<std::size_t> val_indices;  // held-out items, empty without split
};

/// Mini-batch Adam training, deterministic for a given config.seed.
TrainResult train(const std::vector<TrainPair>& dataset,
                  const ModelConfig& config, const TrainOptions& options);

/// CSV emission: step,train_loss,val_loss (empty where not evaluated).
std::string history_to_csv(const std::vector<HistoryRow>& history);

}  // namespace mcse::model
