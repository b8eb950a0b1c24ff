#include "mcse/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace mcse::model {

namespace {

using ad::Graph;
using ad::Mode;
using ad::Shape;
using ad::Tensor;

using RowArr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowArrMap = Eigen::Map<RowArr>;
using ConstRowArrMap = Eigen::Map<const RowArr>;

std::array<Index, 2> conv_out_size(std::array<Index, 2> in,
                                   const ModelConfig& c) {
  return {(in[0] + 2 * c.padding[0] - c.kernel[0]) / c.stride[0] + 1,
          (in[1] + 2 * c.padding[1] - c.kernel[1]) / c.stride[1] + 1};
}

bool conv_fits(std::array<Index, 2> in, const ModelConfig& c) {
  return in[0] + 2 * c.padding[0] - c.kernel[0] >= 0 &&
         in[1] + 2 * c.padding[1] - c.kernel[1] >= 0;
}

/// Decoder block output channels, mirroring the encoder widths.
Index decoder_out_width(const ModelConfig& c, std::size_t block) {
  return block < 5 ? c.encoder_widths[4 - block] : c.latent_width();
}

/// Encoder activation channel count feeding skip of decoder block i.
Index skip_width(const ModelConfig& c, std::size_t block) {
  return c.encoder_widths[5 - block];
}

Eigen::MatrixXd normalized_adjacency(const Eigen::MatrixXd& adjacency) {
  const Index m = adjacency.rows();
  require(adjacency.cols() == m, errc::shape_mismatch,
          "gnn: adjacency must be square");
  require((adjacency.array() >= 0.0).all(), errc::invalid_argument,
          "gnn: adjacency must be nonnegative");
  require((adjacency - adjacency.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
          errc::invalid_argument, "gnn: adjacency must be symmetric");
  Eigen::MatrixXd with_loops = adjacency + Eigen::MatrixXd::Identity(m, m);
  Eigen::VectorXd inv_sqrt_deg(m);
  for (Index i = 0; i < m; ++i)
    inv_sqrt_deg[i] = 1.0 / std::sqrt(with_loops.row(i).sum());
  return inv_sqrt_deg.asDiagonal() * with_loops * inv_sqrt_deg.asDiagonal();
}

Eigen::MatrixXd full_channel_graph(Index m) {
  return Eigen::MatrixXd::Ones(m, m) - Eigen::MatrixXd::Identity(m, m);
}

}  // namespace

std::array<Index, 2> ModelConfig::latent_spatial() const {
  std::array<Index, 2> size{stft.num_bins(),
                            stft.num_frames(segment_length())};
  for (int layer = 0; layer < 6; ++layer) {
    require(conv_fits(size, *this), errc::invalid_argument,
            "input too small for depth 6");
    size = conv_out_size(size, *this);
  }
  return size;
}

Index ModelConfig::gnn_node_dim() const {
  const auto spatial = latent_spatial();
  return latent_width() * spatial[0] * spatial[1];
}

void ModelConfig::validate() const {
  stft.validate();
  require(num_channels >= 1, errc::config_error,
          "model: num_channels must be >= 1");
  require(reference_index >= 0 && reference_index < num_channels,
          errc::config_error, "model: reference_index must be < num_channels");
  for (Index w : encoder_widths)
    require(w >= 1, errc::config_error, "model: encoder widths must be >= 1");
  require(kernel[0] >= 1 && kernel[1] >= 1, errc::config_error,
          "model: kernel extents must be >= 1");
  require(stride[0] >= 1 && stride[1] >= 1, errc::config_error,
          "model: stride must be >= 1");
  require(padding[0] >= 0 && padding[1] >= 0, errc::config_error,
          "model: padding must be >= 0");
  require(gnn_layers >= 1, errc::config_error, "model: gnn_layers must be >= 1");
  require(gat_heads == 1, errc::config_error,
          "model: only a single attention head is supported");
  require(segment_seconds > 0 && sample_rate > 0, errc::config_error,
          "model: segment duration and sample rate must be positive");
  require(segment_length() >= stft.window_length, errc::config_error,
          "model: segment shorter than the STFT window");
}

// ---- parameters -----------------------------------------------------------

namespace {

struct ParamInit {
  std::mt19937_64 rng;
  explicit ParamInit(std::uint64_t seed) : rng(seed) {}

  Tensor normal(Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Eigen::ArrayXd v(ad::shape_size(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
    return Tensor::from_values(std::move(shape), std::move(v), true);
  }

  ConvBlockParams conv_block(Shape kernel_shape, Index fan_in, Index out_ch) {
    ConvBlockParams p;
    p.kernel = normal(std::move(kernel_shape), 1.0 / std::sqrt(fan_in));
    p.bias = Tensor::zeros({out_ch}, true);
    p.gamma = Tensor::full({out_ch}, 1.0, true);
    p.beta = Tensor::zeros({out_ch}, true);
    p.bn_state = ad::BatchNormState::init(out_ch);
    return p;
  }
};

}  // namespace

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  ParamInit init(config.seed);
  ModelParams params;
  const Index kh = config.kernel[0], kw = config.kernel[1];

  Index in_ch = config.input_planes();
  for (int layer = 0; layer < 6; ++layer) {
    const Index out_ch = config.encoder_widths[static_cast<std::size_t>(layer)];
    params.encoder.push_back(
        init.conv_block({out_ch, in_ch, kh, kw}, in_ch * kh * kw, out_ch));
    in_ch = out_ch;
  }

  if (config.bottleneck != BottleneckKind::none) {
    const Index dim = config.gnn_node_dim();
    for (int layer = 0; layer < config.gnn_layers; ++layer) {
      GnnLayerParams p;
      p.weight = init.normal({dim, dim}, 1.0 / std::sqrt(dim));
      if (config.bottleneck == BottleneckKind::gat)
        p.attention = init.normal({2 * dim}, 1.0 / std::sqrt(2 * dim));
      params.gnn.push_back(std::move(p));
    }
  }

  const Index d = config.latent_width();
  for (std::size_t block = 0; block < 6; ++block) {
    const Index cin = (block == 0 ? d : decoder_out_width(config, block - 1)) +
                      skip_width(config, block);
    const Index cout = decoder_out_width(config, block);
    params.decoder.push_back(
        init.conv_block({cin, cout, kh, kw}, cin * kh * kw, cout));
  }

  const Index head_in = config.num_channels * d;
  params.head_kernel = init.normal({2, head_in, 1, 1}, 1.0 / std::sqrt(head_in));
  params.head_bias = Tensor::zeros({2}, true);
  return params;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_trainable() {
  std::vector<std::pair<std::string, Tensor>> out;
  auto block = [&out](const std::string& prefix, ConvBlockParams& p) {
    out.emplace_back(prefix + ".kernel", p.kernel);
    out.emplace_back(prefix + ".bias", p.bias);
    out.emplace_back(prefix + ".gamma", p.gamma);
    out.emplace_back(prefix + ".beta", p.beta);
  };
  for (std::size_t i = 0; i < encoder.size(); ++i)
    block("enc" + std::to_string(i + 1), encoder[i]);
  for (std::size_t i = 0; i < gnn.size(); ++i) {
    out.emplace_back("gnn" + std::to_string(i + 1) + ".weight", gnn[i].weight);
    if (gnn[i].attention.defined())
      out.emplace_back("gnn" + std::to_string(i + 1) + ".attention",
                       gnn[i].attention);
  }
  for (std::size_t i = 0; i < decoder.size(); ++i)
    block("dec" + std::to_string(i + 1), decoder[i]);
  out.emplace_back("head.kernel", head_kernel);
  out.emplace_back("head.bias", head_bias);
  return out;
}

std::vector<Tensor> ModelParams::trainable() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_trainable()) out.push_back(t);
  return out;
}

void ModelParams::zero_grad() {
  for (Tensor& t : trainable()) t.zero_grad();
}

ModelParams ModelParams::clone() const {
  ModelParams copy;
  auto clone_block = [](const ConvBlockParams& p) {
    ConvBlockParams c;
    c.kernel = p.kernel.clone();
    c.bias = p.bias.clone();
    c.gamma = p.gamma.clone();
    c.beta = p.beta.clone();
    c.bn_state = p.bn_state;
    return c;
  };
  for (const auto& p : encoder) copy.encoder.push_back(clone_block(p));
  for (const auto& p : gnn) {
    GnnLayerParams g;
    g.weight = p.weight.clone();
    if (p.attention.defined()) g.attention = p.attention.clone();
    copy.gnn.push_back(std::move(g));
  }
  for (const auto& p : decoder) copy.decoder.push_back(clone_block(p));
  copy.head_kernel = head_kernel.clone();
  copy.head_bias = head_bias.clone();
  return copy;
}

std::vector<ad::CheckpointRecord> ModelParams::to_records() const {
  std::vector<ad::CheckpointRecord> records;
  auto add_tensor = [&records](const std::string& name, const Tensor& t) {
    records.push_back({name, t.shape(), t.values()});
  };
  auto add_block = [&](const std::string& prefix, const ConvBlockParams& p) {
    add_tensor(prefix + ".kernel", p.kernel);
    add_tensor(prefix + ".bias", p.bias);
    add_tensor(prefix + ".gamma", p.gamma);
    add_tensor(prefix + ".beta", p.beta);
    records.push_back({prefix + ".running_mean",
                       {p.bn_state.running_mean.size()},
                       p.bn_state.running_mean});
    records.push_back({prefix + ".running_var",
                       {p.bn_state.running_var.size()},
                       p.bn_state.running_var});
  };
  for (std::size_t i = 0; i < encoder.size(); ++i)
    add_block("enc" + std::to_string(i + 1), encoder[i]);
  for (std::size_t i = 0; i < gnn.size(); ++i) {
    add_tensor("gnn" + std::to_string(i + 1) + ".weight", gnn[i].weight);
    if (gnn[i].attention.defined())
      add_tensor("gnn" + std::to_string(i + 1) + ".attention", gnn[i].attention);
  }
  for (std::size_t i = 0; i < decoder.size(); ++i)
    add_block("dec" + std::to_string(i + 1), decoder[i]);
  add_tensor("head.kernel", head_kernel);
  add_tensor("head.bias", head_bias);
  return records;
}

ModelParams ModelParams::from_records(
    const ModelConfig& config, const std::vector<ad::CheckpointRecord>& records) {
  ModelParams params = init_params(config);
  std::map<std::string, const ad::CheckpointRecord*> by_name;
  for (const auto& rec : records) {
    require(by_name.emplace(rec.name, &rec).second, errc::malformed_header,
            "checkpoint: duplicate record " + rec.name);
  }
  std::size_t used = 0;
  auto take = [&](const std::string& name, const Shape& shape) -> const Eigen::ArrayXd& {
    auto it = by_name.find(name);
    require(it != by_name.end(), errc::malformed_header,
            "checkpoint: missing record " + name);
    require(it->second->shape == shape, errc::shape_mismatch,
            "checkpoint: shape mismatch for " + name);
    ++used;
    return it->second->values;
  };
  for (auto& [name, tensor] : params.named_trainable())
    tensor.values() = take(name, tensor.shape());
  auto load_bn = [&](const std::string& prefix, ConvBlockParams& p) {
    p.bn_state.running_mean =
        take(prefix + ".running_mean", {p.bn_state.running_mean.size()});
    p.bn_state.running_var =
        take(prefix + ".running_var", {p.bn_state.running_var.size()});
  };
  for (std::size_t i = 0; i < params.encoder.size(); ++i)
    load_bn("enc" + std::to_string(i + 1), params.encoder[i]);
  for (std::size_t i = 0; i < params.decoder.size(); ++i)
    load_bn("dec" + std::to_string(i + 1), params.decoder[i]);
  require(used == records.size(), errc::malformed_header,
          "checkpoint: unexpected extra records");
  return params;
}

ParamCount count_parameters(const ModelConfig& config) {
  config.validate();
  const Index kh = config.kernel[0], kw = config.kernel[1];
  ParamCount count;

  Index in_ch = config.input_planes();
  for (Index out_ch : config.encoder_widths) {
    count.encoder += out_ch * in_ch * kh * kw + 3 * out_ch;
    in_ch = out_ch;
  }

  if (config.bottleneck != BottleneckKind::none) {
    const Index dim = config.gnn_node_dim();
    count.bottleneck = config.gnn_layers * dim * dim;
    if (config.bottleneck == BottleneckKind::gat)
      count.bottleneck += config.gnn_layers * 2 * dim;
  }

  const Index d = config.latent_width();
  for (std::size_t block = 0; block < 6; ++block) {
    const Index cin = (block == 0 ? d : decoder_out_width(config, block - 1)) +
                      skip_width(config, block);
    const Index cout = decoder_out_width(config, block);
    count.decoder += cin * cout * kh * kw + 3 * cout;
  }

  count.head = config.num_channels * d * 2 + 2;
  return count;
}

// ---- stacking ---------------------------------------------------------------

ad::Tensor stack_relative(const std::vector<signal::ComplexSpectrogram>& specs,
                          Index reference_index, Variant variant) {
  return stack_relative_batch({specs}, reference_index, variant);
}

ad::Tensor stack_relative_batch(
    const std::vector<std::vector<signal::ComplexSpectrogram>>& items,
    Index reference_index, Variant variant) {
  require(!items.empty() && !items.front().empty(), errc::invalid_argument,
          "stack_relative: no spectrograms");
  const auto channels = static_cast<Index>(items.front().size());
  require(reference_index >= 0 && reference_index < channels,
          errc::invalid_argument, "stack_relative: reference index out of range");
  const Index bins = items.front().front().bins();
  const Index frames = items.front().front().frames();
  const Index planes = variant == Variant::relunet ? 4 : 2;
  const auto batch = static_cast<Index>(items.size());

  Eigen::ArrayXd values(batch * channels * planes * bins * frames);
  const Index plane_size = bins * frames;
  for (Index b = 0; b < batch; ++b) {
    const auto& specs = items[static_cast<std::size_t>(b)];
    require(static_cast<Index>(specs.size()) == channels, errc::shape_mismatch,
            "stack_relative: item channel counts differ");
    for (const auto& s : specs)
      require(s.bins() == bins && s.frames() == frames, errc::shape_mismatch,
              "stack_relative: spectrogram dimensions differ");
    const auto& ref = specs[static_cast<std::size_t>(reference_index)];
    for (Index m = 0; m < channels; ++m) {
      const auto& own = specs[static_cast<std::size_t>(m)];
      double* base =
          values.data() + ((b * channels + m) * planes) * plane_size;
      RowArrMap(base, bins, frames) = own.real_part;
      RowArrMap(base + plane_size, bins, frames) = own.imag_part;
      if (planes == 4) {
        RowArrMap(base + 2 * plane_size, bins, frames) = ref.real_part;
        RowArrMap(base + 3 * plane_size, bins, frames) = ref.imag_part;
      }
    }
  }
  return Tensor::from_values({batch * channels, planes, bins, frames},
                             std::move(values));
}

// ---- network ----------------------------------------------------------------

EncoderOutput encoder_forward(Graph& g, const Tensor& stacked,
                              const ModelConfig& config, ModelParams& params,
                              Mode mode) {
  require(stacked.rank() == 4, errc::shape_mismatch,
          "encoder: input must be [BM, planes, F, T]");
  require(stacked.dim(1) == config.input_planes(), errc::shape_mismatch,
          "encoder: plane count does not match the variant");
  require(params.encoder.size() == 6, errc::invalid_argument,
          "encoder: expected 6 blocks");

  EncoderOutput out;
  out.input_size = {stacked.dim(2), stacked.dim(3)};
  std::array<Index, 2> size = out.input_size;
  Tensor x = stacked;
  for (std::size_t layer = 0; layer < 6; ++layer) {
    require(conv_fits(size, config), errc::invalid_argument,
            "input too small for depth 6");
    ConvBlockParams& p = params.encoder[layer];
    x = ad::conv2d(g, x, p.kernel, p.bias, config.stride, config.padding);
    x = ad::batch_norm2d(g, x, p.gamma, p.beta, p.bn_state, mode);
    x = ad::selu(g, x);
    size = conv_out_size(size, config);
    out.ledger.push_back(size);
    out.activations.push_back(x);
  }
  out.latent = x;
  return out;
}

ad::Tensor gcn_layer(Graph& g, const Tensor& node_features,
                     const Eigen::MatrixXd& adjacency, const Tensor& weight) {
  require(node_features.rank() == 2 && weight.rank() == 2, errc::shape_mismatch,
          "gcn_layer: expects rank-2 tensors");
  require(node_features.dim(0) == adjacency.rows(), errc::shape_mismatch,
          "gcn_layer: node count mismatch");
  const Eigen::MatrixXd propagate = normalized_adjacency(adjacency);
  Eigen::ArrayXd flat(propagate.size());
  RowArrMap(flat.data(), propagate.rows(), propagate.cols()) = propagate.array();
  Tensor prop = Tensor::from_values(
      {propagate.rows(), propagate.cols()}, std::move(flat));
  return ad::selu(g, ad::matmul(g, prop, ad::matmul(g, node_features, weight)));
}

ad::Tensor gat_layer(Graph& g, const Tensor& node_features,
                     const Eigen::MatrixXd& adjacency, const Tensor& weight,
                     const Tensor& attention) {
  require(node_features.rank() == 2 && weight.rank() == 2, errc::shape_mismatch,
          "gat_layer: expects rank-2 tensors");
  const Index nodes = node_features.dim(0);
  require(nodes == adjacency.rows() && adjacency.cols() == nodes,
          errc::shape_mismatch, "gat_layer: node count mismatch");
  const Index out_dim = weight.dim(1);
  require(attention.rank() == 1 && attention.dim(0) == 2 * out_dim,
          errc::shape_mismatch, "gat_layer: attention vector must be 2*D'");

  Tensor projected = ad::matmul(g, node_features, weight);  // [M, D']
  Tensor a_left = ad::reshape(g, ad::slice(g, attention, 0, 0, out_dim),
                              {out_dim, 1});
  Tensor a_right = ad::reshape(g, ad::slice(g, attention, 0, out_dim, out_dim),
                               {out_dim, 1});
  Tensor source_score = ad::matmul(g, projected, a_left);   // [M, 1]
  Tensor target_score = ad::matmul(g, projected, a_right);  // [M, 1]

  Tensor ones_row = Tensor::full({1, nodes}, 1.0);
  Tensor ones_col = Tensor::full({nodes, 1}, 1.0);
  Tensor scores = ad::add(
      g, ad::matmul(g, source_score, ones_row),
      ad::matmul(g, ones_col, ad::reshape(g, target_score, {1, nodes})));
  scores = ad::leaky_relu(g, scores, 0.2);

  // Mask non-edges (after self-loops) out of the softmax support.
  const Eigen::MatrixXd with_loops =
      adjacency + Eigen::MatrixXd::Identity(nodes, nodes);
  Eigen::ArrayXd mask_flat(nodes * nodes);
  for (Index i = 0; i < nodes; ++i)
    for (Index j = 0; j < nodes; ++j)
      mask_flat[i * nodes + j] = with_loops(i, j) > 0.0 ? 0.0 : -1e30;
  if ((mask_flat != 0.0).any()) {
    Tensor mask = Tensor::from_values({nodes, nodes}, std::move(mask_flat));
    scores = ad::add(g, scores, mask);
  }

  Tensor alpha = ad::softmax(g, scores, 1);
  return ad::selu(g, ad::matmul(g, alpha, projected));
}

ad::Tensor bottleneck_forward(Graph& g, const Tensor& latent,
                              const ModelConfig& config, ModelParams& params,
                              Index batch_items) {
  if (config.bottleneck == BottleneckKind::none) return latent;
  require(latent.rank() == 4, errc::shape_mismatch,
          "bottleneck: latent must be [BM, d, F~, T~]");
  const Index m = config.num_channels;
  require(latent.dim(0) == batch_items * m, errc::shape_mismatch,
          "bottleneck: folded batch does not match the channel count");
  const Index node_dim = latent.dim(1) * latent.dim(2) * latent.dim(3);
  require(node_dim == config.gnn_node_dim(), errc::shape_mismatch,
          "bottleneck: latent size does not match the trained GNN width");
  require(static_cast<int>(params.gnn.size()) == config.gnn_layers,
          errc::invalid_argument, "bottleneck: missing GNN parameters");

  const Eigen::MatrixXd adjacency = full_channel_graph(m);
  Tensor nodes_all = ad::reshape(g, latent, {batch_items, m, node_dim});
  std::vector<Tensor> outputs;
  outputs.reserve(static_cast<std::size_t>(batch_items));
  for (Index b = 0; b < batch_items; ++b) {
    Tensor h = ad::reshape(g, ad::slice(g, nodes_all, 0, b, 1), {m, node_dim});
    for (auto& layer : params.gnn) {
      h = config.bottleneck == BottleneckKind::gcn
              ? gcn_layer(g, h, adjacency, layer.weight)
              : gat_layer(g, h, adjacency, layer.weight, layer.attention);
    }
    outputs.push_back(h);
  }
  Tensor stacked = outputs.size() == 1 ? outputs.front()
                                       : ad::concat(g, outputs, 0);
  return ad::reshape(g, stacked, latent.shape());
}

ad::Tensor decoder_forward(Graph& g, const Tensor& bottleneck_out,
                           const EncoderOutput& encoder_out,
                           const ModelConfig& config, ModelParams& params,
                           Mode mode) {
  require(encoder_out.activations.size() == 6 && encoder_out.ledger.size() == 6,
          errc::invalid_argument, "decoder: skip list must have 6 entries");
  require(params.decoder.size() == 6, errc::invalid_argument,
          "decoder: expected 6 blocks");
  require(bottleneck_out.shape() == encoder_out.latent.shape(),
          errc::shape_mismatch, "decoder: bottleneck output shape mismatch");

  Tensor x = bottleneck_out;
  for (std::size_t block = 0; block < 6; ++block) {
    const Tensor& skip = encoder_out.activations[5 - block];
    require(x.dim(2) == skip.dim(2) && x.dim(3) == skip.dim(3),
            errc::shape_mismatch, "decoder: ledger/skip size mismatch");
    x = ad::concat(g, {x, skip}, 1);
    const std::array<Index, 2> target =
        block < 5 ? encoder_out.ledger[4 - block] : encoder_out.input_size;
    const std::array<Index, 2> in_size{x.dim(2), x.dim(3)};
    std::array<Index, 2> output_padding;
    for (int axis = 0; axis < 2; ++axis) {
      const Index base = (in_size[axis] - 1) * config.stride[axis] -
                         2 * config.padding[axis] + config.kernel[axis];
      output_padding[axis] = target[axis] - base;
      require(output_padding[axis] >= 0 && output_padding[axis] < config.stride[axis],
              errc::shape_mismatch, "decoder: ledger inconsistent with geometry");
    }
    ConvBlockParams& p = params.decoder[block];
    x = ad::conv_transpose2d(g, x, p.kernel, p.bias, config.stride,
                             config.padding, output_padding);
    x = ad::batch_norm2d(g, x, p.gamma, p.beta, p.bn_state, mode);
    x = ad::selu(g, x);
  }
  return x;
}

ad::Tensor mask_head(Graph& g, const Tensor& decoder_out,
                     const ModelConfig& config, ModelParams& params,
                     Index batch_items) {
  require(decoder_out.rank() == 4, errc::shape_mismatch,
          "mask_head: input must be [BM, d, F, T]");
  const Index m = config.num_channels;
  require(decoder_out.dim(0) == batch_items * m, errc::shape_mismatch,
          "mask_head: channel count mismatch");
  const Index d = decoder_out.dim(1);
  require(params.head_kernel.dim(1) == m * d, errc::shape_mismatch,
          "mask_head: channel count mismatch with the trained head");
  Tensor merged = ad::reshape(
      g, decoder_out,
      {batch_items, m * d, decoder_out.dim(2), decoder_out.dim(3)});
  return ad::conv2d(g, merged, params.head_kernel, params.head_bias, {1, 1},
                    {0, 0});
}

// ---- mask application -------------------------------------------------------

signal::ComplexSpectrogram apply_mask(const ComplexMask& mask,
                                      const signal::ComplexSpectrogram& x_ref) {
  require(mask.real_part.rows() == x_ref.bins() &&
              mask.real_part.cols() == x_ref.frames() &&
              mask.imag_part.rows() == x_ref.bins() &&
              mask.imag_part.cols() == x_ref.frames(),
          errc::shape_mismatch, "apply_mask: shape mismatch");
  signal::ComplexSpectrogram out;
  out.config = x_ref.config;
  out.original_length = x_ref.original_length;
  out.real_part =
      x_ref.real_part * mask.real_part - x_ref.imag_part * mask.imag_part;
  out.imag_part =
      x_ref.real_part * mask.imag_part + x_ref.imag_part * mask.real_part;
  return out;
}

ad::Tensor spectrogram_to_tensor(const signal::ComplexSpectrogram& spec) {
  const Index bins = spec.bins(), frames = spec.frames();
  Eigen::ArrayXd values(2 * bins * frames);
  RowArrMap(values.data(), bins, frames) = spec.real_part;
  RowArrMap(values.data() + bins * frames, bins, frames) = spec.imag_part;
  return Tensor::from_values({2, bins, frames}, std::move(values));
}

ComplexMask tensor_to_mask(const Tensor& mask_tensor) {
  require(mask_tensor.rank() == 3 && mask_tensor.dim(0) == 2,
          errc::shape_mismatch, "tensor_to_mask: expects [2,F,T]");
  const Index bins = mask_tensor.dim(1), frames = mask_tensor.dim(2);
  ComplexMask mask;
  mask.real_part = ConstRowArrMap(mask_tensor.values().data(), bins, frames);
  mask.imag_part =
      ConstRowArrMap(mask_tensor.values().data() + bins * frames, bins, frames);
  return mask;
}

ad::Tensor apply_mask(Graph& g, const Tensor& mask,
                      const signal::ComplexSpectrogram& x_ref) {
  require(mask.rank() == 3 && mask.dim(0) == 2 && mask.dim(1) == x_ref.bins() &&
              mask.dim(2) == x_ref.frames(),
          errc::shape_mismatch, "apply_mask: shape mismatch");
  Tensor x = spectrogram_to_tensor(x_ref);
  Tensor x_re = ad::slice(g, x, 0, 0, 1);
  Tensor x_im = ad::slice(g, x, 0, 1, 1);
  Tensor m_re = ad::slice(g, mask, 0, 0, 1);
  Tensor m_im = ad::slice(g, mask, 0, 1, 1);
  Tensor out_re =
      ad::sub(g, ad::mul(g, x_re, m_re), ad::mul(g, x_im, m_im));
  Tensor out_im =
      ad::add(g, ad::mul(g, x_re, m_im), ad::mul(g, x_im, m_re));
  return ad::concat(g, {out_re, out_im}, 0);
}

// ---- full pipeline ----------------------------------------------------------

namespace {

/// Resolves the channel policy: returns the row indices to feed the model
/// (trained channel count) and the effective reference row.
std::pair<std::vector<Index>, Index> resolve_channels(
    Index input_channels, const ModelConfig& config, ChannelPolicy policy) {
  const Index m = config.num_channels;
  if (input_channels == m) return {{}, config.reference_index};
  require(policy == ChannelPolicy::replicate, errc::invalid_argument,
          "channel count mismatch: model trained for " + std::to_string(m) +
              " channels, input has " + std::to_string(input_channels));
  require(input_channels < m, errc::invalid_argument,
          "channel count mismatch: input has more channels than the model");
  const Index reference = std::min(config.reference_index, input_channels - 1);
  std::vector<Index> rows(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) rows[i] = i < input_channels ? i : reference;
  return {rows, reference};
}

}  // namespace

ForwardResult forward(const signal::MultichannelWaveform& wave,
                      const ModelConfig& config, ModelParams& params,
                      ChannelPolicy policy) {
  wave.validate();
  config.validate();
  auto [rows, reference] = resolve_channels(wave.channels(), config, policy);

  auto [normalized, scale] = signal::peak_normalize(wave);
  std::vector<signal::ComplexSpectrogram> specs;
  specs.reserve(static_cast<std::size_t>(config.num_channels));
  for (Index m = 0; m < config.num_channels; ++m) {
    const Index row = rows.empty() ? m : rows[static_cast<std::size_t>(m)];
    specs.push_back(
        signal::stft(normalized.samples.row(row).transpose(), config.stft));
  }
  const Index effective_reference = reference;

  Graph g;
  Tensor stacked = stack_relative(specs, effective_reference, config.variant);
  EncoderOutput enc = encoder_forward(g, stacked, config, params, Mode::eval);
  Tensor bneck = bottleneck_forward(g, enc.latent, config, params, 1);
  Tensor dec = decoder_forward(g, bneck, enc, config, params, Mode::eval);
  Tensor mask_t = mask_head(g, dec, config, params, 1);
  mask_t = ad::reshape(g, mask_t, {2, mask_t.dim(2), mask_t.dim(3)});

  ForwardResult result;
  result.mask = tensor_to_mask(mask_t);
  result.s_hat = apply_mask(
      result.mask, specs[static_cast<std::size_t>(effective_reference)]);
  result.enhanced = signal::istft(result.s_hat) * scale;
  return result;
}

Eigen::ArrayXd enhance_waveform(const signal::MultichannelWaveform& wave,
                                const ModelConfig& config, ModelParams& params,
                                ChannelPolicy policy) {
  wave.validate();
  const auto segments =
      signal::segment(wave, config.segment_seconds, signal::TailMode::pad_tail);
  require(!segments.empty(), errc::invalid_argument,
          "enhance: empty input waveform");
  Eigen::ArrayXd out(static_cast<Index>(segments.size()) *
                     segments.front().length());
  Index offset = 0;
  for (const auto& seg : segments) {
    if (seg.samples.abs().maxCoeff() == 0.0) {
      out.segment(offset, seg.length()).setZero();  // silence passes through
    } else {
      out.segment(offset, seg.length()) =
          forward(seg, config, params, policy).enhanced;
    }
    offset += seg.length();
  }
  return out.head(wave.length());
}

}  // namespace mcse::model
