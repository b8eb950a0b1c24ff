#include "mcse/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "mcse/adam.hpp"

namespace mcse::model {

namespace {

using ad::Graph;
using ad::Mode;
using ad::Tensor;

Tensor magnitude(Graph& g, const Tensor& spec) {
  Tensor re = ad::slice(g, spec, 0, 0, 1);
  Tensor im = ad::slice(g, spec, 0, 1, 1);
  Tensor power = ad::add(g, ad::square(g, re), ad::square(g, im));
  return ad::sqrt(g, ad::affine(g, power, 1.0, 1e-12));
}

}  // namespace

ad::Tensor loss(Graph& g, const Tensor& estimate, const Eigen::ArrayXd& target,
                const signal::StftConfig& stft_config) {
  require(estimate.rank() == 1, errc::shape_mismatch,
          "loss: estimate must be a rank-1 waveform tensor");
  require(estimate.size() == target.size(), errc::shape_mismatch,
          "loss: waveform length mismatch");
  Tensor target_t = Tensor::from_values({target.size()}, target);
  Tensor wave_term = ad::l2_norm(g, ad::sub(g, estimate, target_t));

  Tensor est_mag = magnitude(g, ad::stft(g, estimate, stft_config));
  Tensor ref_mag = magnitude(g, ad::stft(g, target_t, stft_config));
  Tensor mag_term = ad::l2_norm(g, ad::sub(g, est_mag, ref_mag));

  return ad::add(g, ad::scale(g, wave_term, 2.0), mag_term);
}

double loss_value(const Eigen::ArrayXd& estimate, const Eigen::ArrayXd& target,
                  const signal::StftConfig& stft_config) {
  Graph g;
  Tensor est = Tensor::from_values({estimate.size()}, estimate);
  return loss(g, est, target, stft_config).values()[0];
}

ad::Tensor training_loss(Graph& g, const std::vector<const TrainPair*>& batch,
                         const ModelConfig& config, ModelParams& params,
                         Mode mode) {
  require(!batch.empty(), errc::invalid_argument, "training_loss: empty batch");
  const auto batch_items = static_cast<Index>(batch.size());

  std::vector<std::vector<signal::ComplexSpectrogram>> all_specs;
  std::vector<Eigen::ArrayXd> targets;
  all_specs.reserve(batch.size());
  targets.reserve(batch.size());
  for (const TrainPair* pair : batch) {
    require(pair->noisy.channels() == config.num_channels, errc::shape_mismatch,
            "training_loss: channel count mismatch");
    require(pair->noisy.length() == pair->clean.size(), errc::shape_mismatch,
            "training_loss: noisy/clean length mismatch");
    auto [normalized, scale] = signal::peak_normalize(pair->noisy);
    (void)scale;
    std::vector<signal::ComplexSpectrogram> specs;
    specs.reserve(static_cast<std::size_t>(config.num_channels));
    for (Index m = 0; m < config.num_channels; ++m)
      specs.push_back(
          signal::stft(normalized.samples.row(m).transpose(), config.stft));
    all_specs.push_back(std::move(specs));

    // Targets are peak-normalized by their own peak, like the inputs.
    const double clean_peak = pair->clean.abs().maxCoeff();
    require(clean_peak > 0.0, errc::invalid_argument,
            "training_loss: silent clean target");
    targets.push_back(pair->clean / clean_peak);
  }

  Tensor stacked =
      stack_relative_batch(all_specs, config.reference_index, config.variant);
  EncoderOutput enc = encoder_forward(g, stacked, config, params, mode);
  Tensor bneck = bottleneck_forward(g, enc.latent, config, params, batch_items);
  Tensor dec = decoder_forward(g, bneck, enc, config, params, mode);
  Tensor masks = mask_head(g, dec, config, params, batch_items);  // [B,2,F,T]

  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (Index b = 0; b < batch_items; ++b) {
    Tensor mask_b = ad::reshape(g, ad::slice(g, masks, 0, b, 1),
                                {2, masks.dim(2), masks.dim(3)});
    const auto& ref_spec =
        all_specs[static_cast<std::size_t>(b)]
                 [static_cast<std::size_t>(config.reference_index)];
    Tensor s_hat_spec = apply_mask(g, mask_b, ref_spec);
    Tensor s_hat =
        ad::istft(g, s_hat_spec, config.stft, ref_spec.original_length);
    losses.push_back(
        loss(g, s_hat, targets[static_cast<std::size_t>(b)], config.stft));
  }
  Tensor all_losses = losses.size() == 1 ? losses.front()
                                         : ad::concat(g, losses, 0);
  return ad::mean(g, all_losses);
}

TrainResult train(const std::vector<TrainPair>& dataset,
                  const ModelConfig& config, const TrainOptions& options) {
  config.validate();
  require(!dataset.empty(), errc::invalid_argument, "train: empty dataset");
  require(options.batch_size >= 1 && options.epochs >= 1, errc::config_error,
          "train: batch_size and epochs must be >= 1");
  const Index seg_len = config.segment_length();
  for (const auto& pair : dataset)
    require(pair.noisy.length() == seg_len && pair.clean.size() == seg_len,
            errc::invalid_argument,
            "train: every item must be one nominal segment long");

  // Deterministic validation split, then per-epoch shuffling, all from one
  // seeded stream.
  std::mt19937_64 rng(config.seed ^ 0x5eedf00dull);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t val_count = 0;
  if (options.val_fraction > 0.0 && dataset.size() >= 2) {
    val_count = static_cast<std::size_t>(
        std::llround(options.val_fraction * static_cast<double>(dataset.size())));
    val_count = std::min(std::max<std::size_t>(val_count, 1), dataset.size() - 1);
  }
  std::vector<std::size_t> val_items(order.begin(),
                                     order.begin() + static_cast<long>(val_count));
  std::vector<std::size_t> train_items(order.begin() + static_cast<long>(val_count),
                                       order.end());

  ModelParams params = init_params(config);
  std::vector<Tensor> trainable = params.trainable();
  ad::AdamState adam;
  adam.lr = options.lr;

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  result.best_step = 0;
  result.val_indices = val_items;

  auto validate = [&](long long step) -> std::optional<double> {
    if (val_items.empty()) return std::nullopt;
    double total = 0.0;
    for (std::size_t idx : val_items) {
      Graph g;
      std::vector<const TrainPair*> item{&dataset[idx]};
      total += training_loss(g, item, config, params, Mode::eval).values()[0];
    }
    const double mean_loss = total / static_cast<double>(val_items.size());
    if (mean_loss <= result.best_val_loss) {
      result.best_val_loss = mean_loss;
      result.best_step = step;
      result.params = params.clone();
    }
    return mean_loss;
  };

  long long step = 0;
  bool done = false;
  for (Index epoch = 0; epoch < options.epochs && !done; ++epoch) {
    std::shuffle(train_items.begin(), train_items.end(), rng);
    for (std::size_t start = 0; start < train_items.size();
         start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(
          train_items.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<const TrainPair*> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i)
        batch.push_back(&dataset[train_items[i]]);

      ++step;
      double train_loss_value = 0.0;
      try {
        params.zero_grad();
        Graph g;
        // Per-op finite scans are skipped in the hot loop; divergence is
        // caught at the loss, one step late at worst.
        g.check_finite = false;
        Tensor batch_loss = training_loss(g, batch, config, params, Mode::train);
        train_loss_value = batch_loss.values()[0];
        require(std::isfinite(train_loss_value), errc::numeric_error,
                "non-finite loss");
        g.backward(batch_loss);
        ad::adam_step(trainable, adam);
      } catch (const Error& e) {
        if (e.code() == errc::numeric_error)
          fail(errc::numeric_error,
               "train: divergence at step " + std::to_string(step) + ": " +
                   e.what());
        throw;
      }

      HistoryRow row;
      row.step = step;
      row.train_loss = train_loss_value;
      const bool last_step =
          (options.max_steps && step >= *options.max_steps) ||
          (epoch == options.epochs - 1 && end == train_items.size());
      if (step % options.val_interval == 0 || last_step)
        row.val_loss = validate(step);
      result.history.push_back(row);

      if (options.max_steps && step >= *options.max_steps) {
        done = true;
        break;
      }
    }
  }

  if (val_items.empty()) {
    result.params = std::move(params);
    result.best_val_loss = result.history.empty()
                               ? std::numeric_limits<double>::quiet_NaN()
                               : result.history.back().train_loss;
    result.best_step = step;
  }
  return result;
}

std::string history_to_csv(const std::vector<HistoryRow>& history) {
  std::ostringstream os;
  os.precision(12);
  os << "step,train_loss,val_loss\n";
  for (const auto& row : history) {
    os << row.step << "," << row.train_loss << ",";
    if (row.val_loss) os << *row.val_loss;
    os << "\n";
  }
  return os.str();
}

}  // namespace mcse::model
