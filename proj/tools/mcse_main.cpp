#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mcse/beamform.hpp"
#include "mcse/metrics.hpp"
#include "mcse/model.hpp"
#include "mcse/run_config.hpp"
#include "mcse/tuning.hpp"
#include "mcse/scenesim.hpp"
#include "mcse/train.hpp"
#include "mcse/wav_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mcse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

void log_info(const std::string& message) {
  std::cerr << "INFO " << message << "\n";
}

void log_error(const std::string& message) {
  std::cerr << "ERROR " << message << "\n";
}

/// Writes via a temp file in the same directory, then renames.
void atomic_write(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), errc::io_failure,
            "cannot open file for writing: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    require(out.good(), errc::io_failure, "write failure: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void atomic_write_wav(const fs::path& path,
                      const signal::MultichannelWaveform& wave) {
  fs::path tmp = path;
  tmp += ".tmp";
  signal::write_wav(tmp.string(), wave);
  fs::rename(tmp, path);
}

signal::MultichannelWaveform mono_wave(const Eigen::ArrayXd& x, int rate) {
  signal::MultichannelWaveform w;
  w.sample_rate = rate;
  w.samples = x.transpose();
  return w;
}

config::RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return config::RunConfig{};
  return config::load_run_config(path);
}

struct ManifestEntry {
  std::string noisy_path;
  std::string clean_path;
  std::string condition = "default";
};

std::vector<ManifestEntry> load_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  require(in.good(), errc::io_failure,
          "cannot open manifest: " + manifest_path.string());
  json root = json::parse(in, nullptr, false);
  require(!root.is_discarded() && root.is_array(), errc::malformed_header,
          "manifest must be a JSON array");
  const fs::path base = manifest_path.parent_path();
  std::vector<ManifestEntry> entries;
  for (const auto& item : root) {
    ManifestEntry e;
    require(item.contains("noisy_wav_path") && item.contains("clean_wav_path"),
            errc::malformed_header,
            "manifest entries need noisy_wav_path and clean_wav_path");
    e.noisy_path = (base / item.at("noisy_wav_path").get<std::string>()).string();
    e.clean_path = (base / item.at("clean_wav_path").get<std::string>()).string();
    if (item.contains("condition"))
      e.condition = item.at("condition").get<std::string>();
    entries.push_back(std::move(e));
  }
  require(!entries.empty(), errc::invalid_argument, "manifest is empty");
  return entries;
}

model::ModelParams load_model_checkpoint(const std::string& path,
                                         model::ModelConfig& config_out) {
  config_out = config::load_model_sidecar(path + ".json");
  return model::ModelParams::from_records(config_out,
                                          ad::load_checkpoint(path));
}

// ---- commands -----------------------------------------------------------

int cmd_simulate(const std::string& config_path, Index count,
                 const std::string& out_dir, std::uint64_t seed) {
  const config::RunConfig cfg = load_config_or_default(config_path);
  std::vector<Eigen::ArrayXd> sources;
  for (const auto& path : cfg.source_wavs) {
    const auto wave = signal::read_wav(path);
    sources.push_back(wave.samples.row(0).transpose());
  }
  const auto items =
      scenesim::generate_dataset(sources, cfg.simulate, count, seed);

  fs::create_directories(out_dir);
  json manifest = json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    char noisy_name[64], clean_name[64];
    std::snprintf(noisy_name, sizeof(noisy_name), "item_%04zu_noisy.wav", i);
    std::snprintf(clean_name, sizeof(clean_name), "item_%04zu_clean.wav", i);
    atomic_write_wav(fs::path(out_dir) / noisy_name, item.noisy);
    atomic_write_wav(fs::path(out_dir) / clean_name,
                     mono_wave(item.clean, item.noisy.sample_rate));
    json entry;
    entry["noisy_wav_path"] = noisy_name;
    entry["clean_wav_path"] = clean_name;
    entry["snr_db"] = item.snr_db;
    entry["delays"] = item.delays;
    entry["gains"] = std::vector<double>(item.gains.data(),
                                         item.gains.data() + item.gains.size());
    entry["seed"] = item.seed;
    manifest.push_back(std::move(entry));
  }
  atomic_write(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
  log_info("event=simulate count=" + std::to_string(items.size()) +
           " out_dir=" + out_dir);
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& out_path, const std::string& variant_override,
              const std::string& bottleneck_override,
              std::optional<long long> max_steps_override,
              std::optional<std::uint64_t> seed_override) {
  config::RunConfig cfg = load_config_or_default(config_path);
  if (!variant_override.empty())
    cfg.model.variant = config::variant_from_name(variant_override);
  if (!bottleneck_override.empty())
    cfg.model.bottleneck = config::bottleneck_from_name(bottleneck_override);
  if (max_steps_override) cfg.train.max_steps = *max_steps_override;
  if (seed_override) cfg.model.seed = *seed_override;
  cfg.model.validate();

  const auto entries = load_manifest(manifest_path);
  std::vector<model::TrainPair> dataset;
  Index skipped_silent = 0;
  for (const auto& entry : entries) {
    const auto noisy = signal::read_wav(entry.noisy_path);
    const auto clean = signal::read_wav(entry.clean_path);
    require(noisy.length() == clean.length(), errc::invalid_argument,
            "manifest pair lengths differ: " + entry.noisy_path);
    const auto noisy_segs = signal::segment(noisy, cfg.model.segment_seconds,
                                            signal::TailMode::drop_tail);
    const auto clean_segs = signal::segment(clean, cfg.model.segment_seconds,
                                            signal::TailMode::drop_tail);
    for (std::size_t s = 0; s < noisy_segs.size(); ++s) {
      Eigen::ArrayXd target = clean_segs[s].samples.row(0).transpose();
      if (target.abs().maxCoeff() == 0.0 ||
          noisy_segs[s].samples.abs().maxCoeff() == 0.0) {
        ++skipped_silent;
        continue;
      }
      dataset.push_back({noisy_segs[s], std::move(target)});
    }
  }
  require(!dataset.empty(), errc::invalid_argument,
          "no usable training segments in the manifest");
  log_info("event=train_start segments=" + std::to_string(dataset.size()) +
           " skipped_silent=" + std::to_string(skipped_silent) +
           " variant=" + config::variant_name(cfg.model.variant) +
           " bottleneck=" + config::bottleneck_name(cfg.model.bottleneck));

  const auto counts = model::count_parameters(cfg.model);
  log_info("event=param_count total=" + std::to_string(counts.total()) +
           " encoder=" + std::to_string(counts.encoder) +
           " bottleneck=" + std::to_string(counts.bottleneck) +
           " decoder=" + std::to_string(counts.decoder) +
           " head=" + std::to_string(counts.head));

  model::TrainResult result = model::train(dataset, cfg.model, cfg.train);

  {
    fs::path tmp = fs::path(out_path).concat(".tmp");
    ad::save_checkpoint(tmp.string(), result.params.to_records());
    fs::rename(tmp, out_path);
  }
  atomic_write(out_path + ".json", config::model_config_to_json(cfg.model));
  atomic_write(out_path + ".history.csv", model::history_to_csv(result.history));
  log_info("event=train_done steps=" + std::to_string(result.history.size()) +
           " best_step=" + std::to_string(result.best_step) +
           " best_val_loss=" + std::to_string(result.best_val_loss));
  return kExitOk;
}

int cmd_enhance(const std::string& model_path, const std::string& in_path,
                const std::string& out_path, const std::string& policy_name) {
  model::ModelConfig config;
  model::ModelParams params = load_model_checkpoint(model_path, config);
  const auto policy = policy_name == "replicate" ? model::ChannelPolicy::replicate
                                                 : model::ChannelPolicy::strict;
  const auto wave = signal::read_wav(in_path);
  const Eigen::ArrayXd enhanced =
      model::enhance_waveform(wave, config, params, policy);
  atomic_write_wav(out_path, mono_wave(enhanced, wave.sample_rate));
  log_info("event=enhance in=" + in_path + " out=" + out_path +
           " samples=" + std::to_string(enhanced.size()));
  return kExitOk;
}

int cmd_beamform(const std::string& in_path, const std::string& out_path,
                 double noise_prefix, const std::vector<double>& delays,
                 const std::vector<double>& gains, Index reference) {
  const auto wave = signal::read_wav(in_path);
  beamform::MvdrOptions options;
  options.noise_prefix_seconds = noise_prefix;
  options.reference_index = reference;
  if (!delays.empty()) {
    options.delays_samples =
        Eigen::Map<const Eigen::ArrayXd>(delays.data(), static_cast<Index>(delays.size()));
  }
  if (!gains.empty()) {
    options.gains =
        Eigen::Map<const Eigen::ArrayXd>(gains.data(), static_cast<Index>(gains.size()));
  }
  const auto result = beamform::mvdr_enhance(wave, options);
  std::ostringstream taus;
  for (Index m = 0; m < result.delays_samples.size(); ++m)
    taus << (m ? "," : "") << result.delays_samples[m];
  log_info("event=beamform tdoa_samples=" + taus.str());
  atomic_write_wav(out_path, mono_wave(result.enhanced, wave.sample_rate));
  return kExitOk;
}

Eigen::ArrayXd pick_channel(const signal::MultichannelWaveform& wave,
                            Index channel) {
  const Index row = channel >= 0 ? channel : std::min<Index>(4, wave.channels() - 1);
  require(row < wave.channels(), errc::invalid_argument,
          "channel index out of range");
  return wave.samples.row(row).transpose();
}

int cmd_evaluate(const std::string& manifest_path, const std::string& metrics_csv,
                 const std::string& out_path, Index channel) {
  const auto entries = load_manifest(manifest_path);
  std::vector<metrics::MetricKind> kinds;
  std::stringstream ss(metrics_csv);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token == "si_sdr")
      kinds.push_back(metrics::MetricKind::si_sdr);
    else if (token == "stoi")
      kinds.push_back(metrics::MetricKind::stoi);
    else
      fail(errc::config_error, "unknown metric: " + token);
  }
  require(!kinds.empty(), errc::config_error, "no metrics requested");

  std::vector<metrics::EvalPair> pairs;
  int sample_rate = 16000;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto estimate = signal::read_wav(entries[i].noisy_path);
    const auto reference = signal::read_wav(entries[i].clean_path);
    sample_rate = reference.sample_rate;
    metrics::EvalPair pair;
    pair.estimate = pick_channel(estimate, channel);
    pair.reference = reference.samples.row(0).transpose();
    pair.condition = entries[i].condition;
    pair.item_id = std::to_string(i);
    pairs.push_back(std::move(pair));
  }
  const auto report = metrics::evaluate(pairs, kinds, sample_rate);
  atomic_write(out_path, metrics::report_to_csv(report));
  log_info("event=evaluate pairs=" + std::to_string(pairs.size()) +
           " out=" + out_path);
  return kExitOk;
}

int cmd_spectrogram(const std::string& in_path, const std::string& out_prefix,
                    Index channel) {
  const auto wave = signal::read_wav(in_path);
  const Index row = channel >= 0 ? channel : 0;
  require(row < wave.channels(), errc::invalid_argument,
          "channel index out of range");
  signal::StftConfig cfg;
  const auto spec = signal::stft(wave.samples.row(row).transpose(), cfg);
  const Eigen::ArrayXXd log_mag =
      20.0 *
      ((spec.real_part.square() + spec.imag_part.square()).sqrt() + 1e-10).log10();

  std::ostringstream csv;
  csv.precision(8);
  for (Index f = 0; f < spec.bins(); ++f) {
    for (Index t = 0; t < spec.frames(); ++t)
      csv << (t ? "," : "") << log_mag(f, t);
    csv << "\n";
  }
  atomic_write(out_prefix + ".csv", csv.str());

  // PGM, frequency axis bottom-up, min-max normalized with a degenerate
  // guard that emits all-zero.
  const double lo = log_mag.minCoeff(), hi = log_mag.maxCoeff();
  std::ostringstream pgm;
  pgm << "P5\n" << spec.frames() << " " << spec.bins() << "\n255\n";
  for (Index f = spec.bins() - 1; f >= 0; --f) {
    for (Index t = 0; t < spec.frames(); ++t) {
      const double v = hi > lo ? (log_mag(f, t) - lo) / (hi - lo) : 0.0;
      pgm << static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  atomic_write(out_prefix + ".pgm", pgm.str());
  log_info("event=spectrogram bins=" + std::to_string(spec.bins()) +
           " frames=" + std::to_string(spec.frames()));
  return kExitOk;
}

int cmd_compare(const std::string& manifest_path,
                const std::vector<std::string>& model_paths,
                const std::string& out_path, double noise_prefix,
                const std::string& policy_name) {
  const auto entries = load_manifest(manifest_path);
  const auto policy = policy_name == "replicate" ? model::ChannelPolicy::replicate
                                                 : model::ChannelPolicy::strict;

  struct Method {
    std::string name;
    model::ModelConfig config;
    model::ModelParams params;
    bool is_model = false;
  };
  std::vector<Method> methods;
  methods.push_back({"noisy", {}, {}, false});
  for (const auto& path : model_paths) {
    Method m;
    m.name = fs::path(path).stem().string();
    m.params = load_model_checkpoint(path, m.config);
    m.is_model = true;
    methods.push_back(std::move(m));
  }
  methods.push_back({"mvdr", {}, {}, false});

  std::ostringstream csv;
  csv.precision(12);
  csv << "method,item_id,si_sdr_db,stoi\n";
  std::map<std::string, std::pair<double, double>> sums;
  for (auto& method : methods) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto noisy = signal::read_wav(entries[i].noisy_path);
      const auto clean = signal::read_wav(entries[i].clean_path);
      const Eigen::ArrayXd reference = clean.samples.row(0).transpose();
      Eigen::ArrayXd estimate;
      if (method.name == "noisy") {
        estimate = pick_channel(noisy, -1);
      } else if (method.is_model) {
        estimate =
            model::enhance_waveform(noisy, method.config, method.params, policy);
      } else {
        beamform::MvdrOptions options;
        options.noise_prefix_seconds = noise_prefix;
        options.reference_index = std::min<Index>(4, noisy.channels() - 1);
        estimate = beamform::mvdr_enhance(noisy, options).enhanced;
      }
      const double sdr = metrics::si_sdr(estimate, reference);
      const double intel = metrics::stoi(estimate, reference, clean.sample_rate);
      csv << method.name << "," << i << "," << sdr << "," << intel << "\n";
      sums[method.name].first += sdr;
      sums[method.name].second += intel;
    }
  }
  for (const auto& method : methods) {
    const auto& sum = sums[method.name];
    const double n = static_cast<double>(entries.size());
    csv << method.name << ",mean," << sum.first / n << "," << sum.second / n
        << "\n";
  }
  atomic_write(out_path, csv.str());
  log_info("event=compare items=" + std::to_string(entries.size()) +
           " methods=" + std::to_string(methods.size()) + " out=" + out_path);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator_for_large_buffers();
  CLI::App app{"Multichannel speech enhancement toolkit"};
  app.require_subcommand(1);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset");
  std::string sim_config, sim_out_dir;
  Index sim_count = 8;
  std::uint64_t sim_seed = 0;
  simulate->add_option("--config", sim_config, "Run-config JSON path");
  simulate->add_option("--count", sim_count, "Number of items");
  simulate->add_option("--out-dir", sim_out_dir, "Output directory")->required();
  simulate->add_option("--seed", sim_seed, "Dataset seed");

  // train
  auto* train = app.add_subcommand("train", "Train a model from a manifest");
  std::string train_config, train_manifest, train_out, train_variant,
      train_bottleneck;
  long long train_max_steps = -1;
  long long train_seed = -1;
  train->add_option("--config", train_config, "Run-config JSON path");
  train->add_option("--manifest", train_manifest, "Dataset manifest")->required();
  train->add_option("--out", train_out, "Checkpoint output path")->required();
  train->add_option("--variant", train_variant, "unet|relunet");
  train->add_option("--bottleneck", train_bottleneck, "none|gcn|gat");
  train->add_option("--max-steps", train_max_steps, "Stop after N steps");
  train->add_option("--seed", train_seed, "Override the model seed");

  // enhance
  auto* enhance = app.add_subcommand("enhance", "Enhance a noisy WAV");
  std::string enh_model, enh_in, enh_out, enh_policy = "strict";
  enhance->add_option("--model", enh_model, "Checkpoint path")->required();
  enhance->add_option("--in", enh_in, "Input WAV")->required();
  enhance->add_option("--out", enh_out, "Output WAV")->required();
  enhance->add_option("--channel-policy", enh_policy, "strict|replicate")
      ->check(CLI::IsMember({"strict", "replicate"}));

  // beamform
  auto* beam = app.add_subcommand("beamform", "MVDR beamforming baseline");
  std::string beam_in, beam_out;
  double beam_prefix = 0.3;
  std::vector<double> beam_delays, beam_gains;
  Index beam_reference = 0;
  beam->add_option("--in", beam_in, "Input multichannel WAV")->required();
  beam->add_option("--out", beam_out, "Output WAV")->required();
  beam->add_option("--noise-prefix", beam_prefix, "Noise-only prefix seconds");
  beam->add_option("--delays", beam_delays, "Per-channel delays in samples");
  beam->add_option("--gains", beam_gains, "Per-channel gains");
  beam->add_option("--reference", beam_reference, "Reference channel");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Objective metrics report");
  std::string eval_manifest, eval_metrics = "si_sdr,stoi", eval_out;
  Index eval_channel = -1;
  evaluate->add_option("--pairs", eval_manifest, "Pairs manifest")->required();
  evaluate->add_option("--metrics", eval_metrics, "Comma list: si_sdr,stoi");
  evaluate->add_option("--out", eval_out, "Report CSV path")->required();
  evaluate->add_option("--channel", eval_channel,
                       "Estimate channel (-1 = channel 5 or last)");

  // spectrogram
  auto* spect = app.add_subcommand("spectrogram", "Export CSV + PGM spectrogram");
  std::string spec_in, spec_out;
  Index spec_channel = 0;
  spect->add_option("--in", spec_in, "Input WAV")->required();
  spect->add_option("--out", spec_out, "Output prefix")->required();
  spect->add_option("--channel", spec_channel, "Channel to export");

  // compare
  auto* compare = app.add_subcommand("compare", "Compare models against baselines");
  std::string cmp_manifest, cmp_out, cmp_policy = "strict";
  std::vector<std::string> cmp_models;
  double cmp_prefix = 0.3;
  compare->add_option("--manifest", cmp_manifest, "Dataset manifest")->required();
  compare->add_option("--models", cmp_models, "Checkpoint paths")->required();
  compare->add_option("--out", cmp_out, "Comparison CSV path")->required();
  compare->add_option("--noise-prefix", cmp_prefix, "MVDR noise prefix seconds");
  compare->add_option("--channel-policy", cmp_policy, "strict|replicate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (simulate->parsed())
      return cmd_simulate(sim_config, sim_count, sim_out_dir, sim_seed);
    if (train->parsed())
      return cmd_train(train_config, train_manifest, train_out, train_variant,
                       train_bottleneck,
                       train_max_steps >= 0
                           ? std::optional<long long>(train_max_steps)
                           : std::nullopt,
                       train_seed >= 0 ? std::optional<std::uint64_t>(
                                             static_cast<std::uint64_t>(train_seed))
                                       : std::nullopt);
    if (enhance->parsed())
      return cmd_enhance(enh_model, enh_in, enh_out, enh_policy);
    if (beam->parsed())
      return cmd_beamform(beam_in, beam_out, beam_prefix, beam_delays,
                          beam_gains, beam_reference);
    if (evaluate->parsed())
      return cmd_evaluate(eval_manifest, eval_metrics, eval_out, eval_channel);
    if (spect->parsed())
      return cmd_spectrogram(spec_in, spec_out, spec_channel);
    if (compare->parsed())
      return cmd_compare(cmp_manifest, cmp_models, cmp_out, cmp_prefix,
                         cmp_policy);
  } catch (const Error& e) {
    log_error(e.what());
    return e.code() == errc::config_error ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    log_error(e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}
