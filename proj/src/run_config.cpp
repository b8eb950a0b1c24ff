#include "mcse/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mcse::config {

namespace {

using nlohmann::json;

/// Wraps a JSON object so that every key must be consumed exactly once.
class StrictObject {
 public:
  StrictObject(const json& obj, std::string path)
      : obj_(obj), path_(std::move(path)) {
    require(obj_.is_object(), errc::config_error,
            "config: " + path_ + " must be an object");
  }

  bool has(const char* key) {
    return obj_.contains(key) && !obj_.at(key).is_null();
  }

  const json* take(const char* key) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return nullptr;
    return &obj_.at(key);
  }

  template <typename T>
  void load(const char* key, T& out) {
    if (const json* v = take(key)) {
      try {
        out = v->get<T>();
      } catch (const json::exception&) {
        fail(errc::config_error, "config: bad value for " + path_ + "." + key);
      }
    }
  }

  void finish() {
    for (const auto& [key, value] : obj_.items()) {
      (void)value;
      require(seen_.count(key) > 0, errc::config_error,
              "config: unknown key " + path_ + "." + key);
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

json parse_json(const std::string& text) {
  json root = json::parse(text, nullptr, false);
  require(!root.is_discarded(), errc::config_error,
          "config: invalid JSON document");
  return root;
}

void load_stft(const json& node, signal::StftConfig& stft) {
  StrictObject obj(node, "stft");
  obj.load("fft_length", stft.fft_length);
  obj.load("hop_length", stft.hop_length);
  obj.load("window_length", stft.window_length);
  obj.load("drop_last_bin", stft.drop_last_bin);
  if (const json* w = obj.take("window")) {
    require(w->is_string() && w->get<std::string>() == "hann",
            errc::config_error, "config: stft.window must be \"hann\"");
  }
  obj.finish();
}

void load_model(const json& node, model::ModelConfig& cfg) {
  StrictObject obj(node, "model");
  if (const json* v = obj.take("variant"))
    cfg.variant = variant_from_name(v->get<std::string>());
  if (const json* v = obj.take("bottleneck"))
    cfg.bottleneck = bottleneck_from_name(v->get<std::string>());
  obj.load("num_channels", cfg.num_channels);
  if (const json* v = obj.take("encoder_widths")) {
    require(v->is_array() && v->size() == 6, errc::config_error,
            "config: model.encoder_widths must have exactly 6 entries");
    for (std::size_t i = 0; i < 6; ++i)
      cfg.encoder_widths[i] = v->at(i).get<Index>();
  }
  auto load_pair = [&obj](const char* key, std::array<Index, 2>& out) {
    if (const json* v = obj.take(key)) {
      require(v->is_array() && v->size() == 2, errc::config_error,
              std::string("config: model.") + key + " must have 2 entries");
      out[0] = v->at(0).get<Index>();
      out[1] = v->at(1).get<Index>();
    }
  };
  load_pair("kernel", cfg.kernel);
  load_pair("stride", cfg.stride);
  load_pair("padding", cfg.padding);
  obj.load("gnn_layers", cfg.gnn_layers);
  obj.load("gat_heads", cfg.gat_heads);
  obj.load("reference_index", cfg.reference_index);
  obj.load("segment_seconds", cfg.segment_seconds);
  obj.load("sample_rate", cfg.sample_rate);
  obj.load("seed", cfg.seed);
  obj.finish();
}

void load_train(const json& node, model::TrainOptions& opt) {
  StrictObject obj(node, "train");
  obj.load("epochs", opt.epochs);
  obj.load("batch_size", opt.batch_size);
  if (const json* v = obj.take("max_steps")) opt.max_steps = v->get<long long>();
  obj.load("val_interval", opt.val_interval);
  obj.load("val_fraction", opt.val_fraction);
  obj.load("lr", opt.lr);
  obj.finish();
}

void load_simulate(const json& node, scenesim::SceneTemplate& tmpl,
                   std::vector<std::string>& source_wavs) {
  StrictObject obj(node, "simulate");
  obj.load("num_channels", tmpl.num_channels);
  if (const json* v = obj.take("snr_db")) {
    require(v->is_array() && v->size() == 2, errc::config_error,
            "config: simulate.snr_db must be [lo, hi]");
    tmpl.snr_db_lo = v->at(0).get<double>();
    tmpl.snr_db_hi = v->at(1).get<double>();
  }
  obj.load("max_delay", tmpl.max_delay);
  if (const json* v = obj.take("gains")) {
    require(v->is_array() && v->size() == 2, errc::config_error,
            "config: simulate.gains must be [lo, hi]");
    tmpl.gain_lo = v->at(0).get<double>();
    tmpl.gain_hi = v->at(1).get<double>();
  }
  if (const json* v = obj.take("noise_kind")) {
    const std::string name = v->get<std::string>();
    if (name == "white")
      tmpl.noise_kind = scenesim::NoiseKind::white;
    else if (name == "pink")
      tmpl.noise_kind = scenesim::NoiseKind::pink;
    else
      fail(errc::config_error,
           "config: simulate.noise_kind must be white or pink");
  }
  obj.load("reference_index", tmpl.reference_index);
  obj.load("duration_seconds", tmpl.duration_seconds);
  obj.load("sample_rate", tmpl.sample_rate);
  obj.load("noise_prefix_seconds", tmpl.noise_prefix_seconds);
  obj.load("source_wavs", source_wavs);
  obj.finish();
}

}  // namespace

std::string variant_name(model::Variant v) {
  return v == model::Variant::relunet ? "relunet" : "unet";
}

std::string bottleneck_name(model::BottleneckKind b) {
  switch (b) {
    case model::BottleneckKind::gcn: return "gcn";
    case model::BottleneckKind::gat: return "gat";
    default: return "none";
  }
}

model::Variant variant_from_name(const std::string& name) {
  if (name == "relunet") return model::Variant::relunet;
  if (name == "unet") return model::Variant::unet;
  fail(errc::config_error, "config: unknown variant " + name);
}

model::BottleneckKind bottleneck_from_name(const std::string& name) {
  if (name == "none") return model::BottleneckKind::none;
  if (name == "gcn") return model::BottleneckKind::gcn;
  if (name == "gat") return model::BottleneckKind::gat;
  fail(errc::config_error, "config: unknown bottleneck " + name);
}

RunConfig parse_run_config(const std::string& json_text) {
  const json root = parse_json(json_text);
  StrictObject top(root, "<root>");
  RunConfig cfg;
  if (const json* v = top.take("stft")) load_stft(*v, cfg.model.stft);
  if (const json* v = top.take("model")) load_model(*v, cfg.model);
  if (const json* v = top.take("train")) load_train(*v, cfg.train);
  if (const json* v = top.take("simulate"))
    load_simulate(*v, cfg.simulate, cfg.source_wavs);
  top.finish();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), errc::config_error, "config: cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str());
}

std::string model_config_to_json(const model::ModelConfig& config) {
  json root;
  root["stft"] = {{"fft_length", config.stft.fft_length},
                  {"hop_length", config.stft.hop_length},
                  {"window_length", config.stft.window_length},
                  {"window", "hann"},
                  {"drop_last_bin", config.stft.drop_last_bin}};
  root["model"] = {{"variant", variant_name(config.variant)},
                   {"bottleneck", bottleneck_name(config.bottleneck)},
                   {"num_channels", config.num_channels},
                   {"encoder_widths", config.encoder_widths},
                   {"kernel", config.kernel},
                   {"stride", config.stride},
                   {"padding", config.padding},
                   {"gnn_layers", config.gnn_layers},
                   {"gat_heads", config.gat_heads},
                   {"reference_index", config.reference_index},
                   {"segment_seconds", config.segment_seconds},
                   {"sample_rate", config.sample_rate},
                   {"seed", config.seed}};
  return root.dump(2) + "\n";
}

model::ModelConfig model_config_from_json(const std::string& json_text) {
  const json root = parse_json(json_text);
  StrictObject top(root, "<sidecar>");
  model::ModelConfig config;
  if (const json* v = top.take("stft")) load_stft(*v, config.stft);
  if (const json* v = top.take("model")) load_model(*v, config);
  top.finish();
  config.validate();
  return config;
}

model::ModelConfig load_model_sidecar(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), errc::io_failure, "cannot open model sidecar: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return model_config_from_json(buffer.str());
}

}  // namespace mcse::config
