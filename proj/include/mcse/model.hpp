#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mcse/checkpoint.hpp"
#include "mcse/ops.hpp"
#include "mcse/signal.hpp"

namespace mcse::model {

enum class Variant { unet, relunet };
enum class BottleneckKind { none, gcn, gat };

/// How inference treats inputs with fewer channels than the model was
/// trained on: reject, or fill the missing channels with reference copies.
enum class ChannelPolicy { strict, replicate };

struct ModelConfig {
  Variant variant = Variant::relunet;
  BottleneckKind bottleneck = BottleneckKind::none;
  int num_channels = 6;  // M the model is trained for
  std::array<Index, 6> encoder_widths{16, 32, 64, 64, 64, 64};
  std::array<Index, 2> kernel{4, 3};
  std::array<Index, 2> stride{2, 2};
  std::array<Index, 2> padding{1, 1};
  int gnn_layers = 2;
  int gat_heads = 1;
  Index reference_index = 4;
  signal::StftConfig stft;
  double segment_seconds = 1.2;
  int sample_rate = 16000;
  std::uint64_t seed = 0;

  Index input_planes() const { return variant == Variant::relunet ? 4 : 2; }
  Index latent_width() const { return encoder_widths.back(); }
  Index segment_length() const {
    return static_cast<Index>(segment_seconds * sample_rate + 0.5);
  }
  /// Latent spatial size for the nominal segment, and the node feature
  /// dimension d*F~*T~ used by the GNN bottleneck.
  std::array<Index, 2> latent_spatial() const;
  Index gnn_node_dim() const;

  void validate() const;
};

struct ConvBlockParams {
  ad::Tensor kernel;
  ad::Tensor bias;
  ad::Tensor gamma;
  ad::Tensor beta;
  ad::BatchNormState bn_state;
};

struct GnnLayerParams {
  ad::Tensor weight;     // D x D
  ad::Tensor attention;  // 2D, GAT only
};

struct ModelParams {
  std::vector<ConvBlockParams> encoder;
  std::vector<GnnLayerParams> gnn;
  std::vector<ConvBlockParams> decoder;
  ad::Tensor head_kernel;
  ad::Tensor head_bias;

  /// Trainable tensors in a stable order (running stats excluded).
  std::vector<ad::Tensor> trainable();
  std::vector<std::pair<std::string, ad::Tensor>> named_trainable();
  void zero_grad();
  ModelParams clone() const;

  std::vector<ad::CheckpointRecord> to_records() const;
  static ModelParams from_records(
      const ModelConfig& config,
      const std::vector<ad::CheckpointRecord>& records);
};

/// Seeded Kaiming-style initialization (fan-in scaled normals, zero
/// biases, unit gamma).
ModelParams init_params(const ModelConfig& config);

struct ParamCount {
  Index encoder = 0, bottleneck = 0, decoder = 0, head = 0;
  Index total() const { return encoder + bottleneck + decoder + head; }
};

ParamCount count_parameters(const ModelConfig& config);

// ---- stacking -----------------------------------------------------------

/// Relative channel stacking: plane order per channel i is
/// [Re X_i, Im X_i, Re X_r, Im X_r]; the unet variant keeps only the first
/// two planes. Result shape [M, planes, F, T].
ad::Tensor stack_relative(const std::vector<signal::ComplexSpectrogram>& specs,
                          Index reference_index, Variant variant);

/// Batched form over B items, shape [B*M, planes, F, T].
ad::Tensor stack_relative_batch(
    const std::vector<std::vector<signal::ComplexSpectrogram>>& items,
    Index reference_index, Variant variant);

// ---- network ------------------------------------------------------------

struct EncoderOutput {
  ad::Tensor latent;                          // [BM, d, F~, T~]
  std::vector<ad::Tensor> activations;        // per layer, last == latent
  std::vector<std::array<Index, 2>> ledger;   // per-layer (H, W)
  std::array<Index, 2> input_size{0, 0};      // (F, T)
};

/// Six conv -> batch-norm -> SELU blocks with shared weights across the
/// folded channel/batch axis; records per-layer sizes for exact decoder
/// inversion.
EncoderOutput encoder_forward(ad::Graph& g, const ad::Tensor& stacked,
                              const ModelConfig& config, ModelParams& params,
                              ad::Mode mode);

/// SELU(D^-1/2 (A+I) D^-1/2 H W) with degrees from the self-looped
/// adjacency.
ad::Tensor gcn_layer(ad::Graph& g, const ad::Tensor& node_features,
                     const Eigen::MatrixXd& adjacency, const ad::Tensor& weight);

/// Single-head graph attention: leaky-relu scored pairs over the
/// self-looped neighborhood, softmax per node, SELU on the aggregate.
ad::Tensor gat_layer(ad::Graph& g, const ad::Tensor& node_features,
                     const Eigen::MatrixXd& adjacency, const ad::Tensor& weight,
                     const ad::Tensor& attention);

/// Identity for BottleneckKind::none; otherwise two GNN layers over
/// vectorized per-channel latents on the fully-connected channel graph.
ad::Tensor bottleneck_forward(ad::Graph& g, const ad::Tensor& latent,
                              const ModelConfig& config, ModelParams& params,
                              Index batch_items);

/// Six conv-transpose blocks mirroring the encoder; each block consumes the
/// concatenation of the running feature map with the mirrored encoder
/// activation, with output_padding chosen from the recorded size ledger.
ad::Tensor decoder_forward(ad::Graph& g, const ad::Tensor& bottleneck_out,
                           const EncoderOutput& encoder_out,
                           const ModelConfig& config, ModelParams& params,
                           ad::Mode mode);

/// Concatenates the per-channel decoder outputs and applies the 1x1 mask
/// convolution; [BM, d, F, T] -> [B, 2, F, T].
ad::Tensor mask_head(ad::Graph& g, const ad::Tensor& decoder_out,
                     const ModelConfig& config, ModelParams& params,
                     Index batch_items);

// ---- mask application -----------------------------------------------------

struct ComplexMask {
  Eigen::ArrayXXd real_part;  // F x T
  Eigen::ArrayXXd imag_part;
};

/// Elementwise complex multiplication S_hat = X_ref * M.
signal::ComplexSpectrogram apply_mask(const ComplexMask& mask,
                                      const signal::ComplexSpectrogram& x_ref);

/// Graph form on a [2,F,T] mask tensor against a constant spectrogram.
ad::Tensor apply_mask(ad::Graph& g, const ad::Tensor& mask,
                      const signal::ComplexSpectrogram& x_ref);

/// Converts between [2,F,T] tensors and spectrogram planes (row-major).
ad::Tensor spectrogram_to_tensor(const signal::ComplexSpectrogram& spec);
ComplexMask tensor_to_mask(const ad::Tensor& mask_tensor);

// ---- full pipeline --------------------------------------------------------

struct ForwardResult {
  Eigen::ArrayXd enhanced;           // de-normalized, input segment length
  ComplexMask mask;
  signal::ComplexSpectrogram s_hat;  // masked reference spectrogram
};

/// peak-normalize -> per-channel STFT -> stack -> encoder -> bottleneck ->
/// decoder -> mask head -> mask applied to the reference channel -> iSTFT
/// -> de-normalize. Eval-mode batch norm.
ForwardResult forward(const signal::MultichannelWaveform& wave,
                      const ModelConfig& config, ModelParams& params,
                      ChannelPolicy policy = ChannelPolicy::strict);

/// Whole-file enhancement: split into nominal segments (zero-padding the
/// tail), enhance each, pass silent segments through, trim to the input
/// length.
Eigen::ArrayXd enhance_waveform(const signal::MultichannelWaveform& wave,
                                const ModelConfig& config, ModelParams& params,
                                ChannelPolicy policy = ChannelPolicy::strict);

}  // namespace mcse::model
