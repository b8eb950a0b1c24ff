#define DOCTEST_CONFIG_IMPLEMENT
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mcse/scenesim.hpp"
#include "mcse/signal.hpp"
#include "mcse/wav_io.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_binary;
fs::path g_dir;

int run_cli(const std::string& args) {
  const std::string cmd = g_binary + " " + args + " 2>>" +
                          (g_dir / "stderr.log").string();
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

const char* kTinyConfig = R"({
  "stft": {"fft_length": 128, "hop_length": 64, "window_length": 128},
  "model": {"num_channels": 2, "encoder_widths": [2,2,2,2,2,2],
             "reference_index": 0, "segment_seconds": 0.04, "seed": 7},
  "train": {"batch_size": 4, "max_steps": 8, "val_interval": 4,
             "val_fraction": 0.25, "lr": 0.001},
  "simulate": {"num_channels": 2, "reference_index": 0, "max_delay": 3,
                "duration_seconds": 0.04}
})";

}  // namespace

TEST_CASE("simulate is deterministic and validates flags") {
  const fs::path config = g_dir / "tiny.json";
  write_file(config, kTinyConfig);

  CHECK(run_cli("simulate --config " + config.string() +
                " --count 3 --seed 1 --out-dir " + (g_dir / "dsA").string()) == 0);
  CHECK(run_cli("simulate --config " + config.string() +
                " --count 3 --seed 1 --out-dir " + (g_dir / "dsB").string()) == 0);
  const std::string a = read_file(g_dir / "dsA" / "manifest.json");
  const std::string b = read_file(g_dir / "dsB" / "manifest.json");
  CHECK(!a.empty());
  CHECK(a == b);

  // Generated WAVs reload with the expected shape.
  auto wave = mcse::signal::read_wav((g_dir / "dsA" / "item_0000_noisy.wav").string());
  CHECK(wave.channels() == 2);
  CHECK(wave.length() == 640);

  // Missing required flag -> usage error.
  CHECK(run_cli("simulate --count 3") == 2);
  // Unknown config key -> config error.
  write_file(g_dir / "bad.json", R"({"simulte": {}})");
  CHECK(run_cli("simulate --config " + (g_dir / "bad.json").string() +
                " --count 1 --out-dir " + (g_dir / "dsC").string()) == 2);
}

TEST_CASE("train produces deterministic checkpoints with history") {
  const fs::path config = g_dir / "tiny.json";
  const std::string manifest = (g_dir / "dsA" / "manifest.json").string();

  CHECK(run_cli("train --config " + config.string() + " --manifest " + manifest +
                " --out " + (g_dir / "m1.ckpt").string()) == 0);
  CHECK(run_cli("train --config " + config.string() + " --manifest " + manifest +
                " --out " + (g_dir / "m2.ckpt").string()) == 0);
  CHECK(fs::exists(g_dir / "m1.ckpt"));
  CHECK(fs::exists(g_dir / "m1.ckpt.json"));
  const std::string history = read_file(g_dir / "m1.ckpt.history.csv");
  CHECK(history.rfind("step,train_loss,val_loss", 0) == 0);
  CHECK(read_file(g_dir / "m1.ckpt") == read_file(g_dir / "m2.ckpt"));

  // Variant override trains a unet from the same data.
  CHECK(run_cli("train --config " + config.string() + " --manifest " + manifest +
                " --variant unet --out " + (g_dir / "mu.ckpt").string()) == 0);
  const std::string sidecar = read_file(g_dir / "mu.ckpt.json");
  CHECK(sidecar.find("\"unet\"") != std::string::npos);
}

TEST_CASE("enhance respects the channel policy") {
  const std::string model = (g_dir / "m1.ckpt").string();
  const std::string noisy = (g_dir / "dsA" / "item_0001_noisy.wav").string();

  CHECK(run_cli("enhance --model " + model + " --in " + noisy + " --out " +
                (g_dir / "enh.wav").string()) == 0);
  auto enhanced = mcse::signal::read_wav((g_dir / "enh.wav").string());
  CHECK(enhanced.channels() == 1);
  CHECK(enhanced.length() == 640);

  // Mono input against the 2-channel model.
  auto noisy_wave = mcse::signal::read_wav(noisy);
  mcse::signal::MultichannelWaveform mono;
  mono.sample_rate = noisy_wave.sample_rate;
  mono.samples = noisy_wave.samples.topRows(1);
  mcse::signal::write_wav((g_dir / "mono.wav").string(), mono);
  CHECK(run_cli("enhance --model " + model + " --in " +
                (g_dir / "mono.wav").string() + " --out " +
                (g_dir / "enh1.wav").string()) == 1);
  CHECK(run_cli("enhance --model " + model + " --in " +
                (g_dir / "mono.wav").string() + " --channel-policy replicate" +
                " --out " + (g_dir / "enh2.wav").string()) == 0);
  auto replicated = mcse::signal::read_wav((g_dir / "enh2.wav").string());
  CHECK(replicated.length() == 640);
}

TEST_CASE("beamform runs the GCC-PHAT path and fails cleanly") {
  // A 1.2 s two-channel scene with a noise-only lead-in.
  mcse::scenesim::SceneTemplate tmpl;
  tmpl.num_channels = 2;
  tmpl.reference_index = 0;
  tmpl.noise_prefix_seconds = 0.35;
  const auto items = mcse::scenesim::generate_dataset({}, tmpl, 1, 3);
  mcse::signal::write_wav((g_dir / "beam_in.wav").string(), items[0].noisy);

  CHECK(run_cli("beamform --in " + (g_dir / "beam_in.wav").string() +
                " --noise-prefix 0.3 --out " + (g_dir / "beam_out.wav").string()) ==
        0);
  auto out = mcse::signal::read_wav((g_dir / "beam_out.wav").string());
  CHECK(out.channels() == 1);
  CHECK(out.length() == items[0].noisy.length());

  CHECK(run_cli("beamform --in " + (g_dir / "missing.wav").string() +
                " --out " + (g_dir / "x.wav").string()) == 1);

  // Explicit delays skip estimation.
  CHECK(run_cli("beamform --in " + (g_dir / "beam_in.wav").string() +
                " --delays 0 2 --noise-prefix 0.3 --out " +
                (g_dir / "beam_out2.wav").string()) == 0);
}

TEST_CASE("evaluate writes the report CSV") {
  CHECK(run_cli("evaluate --pairs " + (g_dir / "dsA" / "manifest.json").string() +
                " --metrics si_sdr --channel 0 --out " +
                (g_dir / "report.csv").string()) == 0);
  const std::string csv = read_file(g_dir / "report.csv");
  CHECK(csv.rfind("condition,metric,item_id,value", 0) == 0);
  CHECK(csv.find("si_sdr") != std::string::npos);
  CHECK(csv.find("mean") != std::string::npos);
}

TEST_CASE("spectrogram exports CSV and bottom-up PGM") {
  // Pure tone at bin 100 of the default 1024-point STFT.
  const int rate = 16000;
  Eigen::ArrayXd tone(19200);
  const double freq = 100.0 * rate / 1024.0;
  for (Eigen::Index i = 0; i < tone.size(); ++i)
    tone[i] = 0.5 * std::sin(2.0 * mcse::kPi * freq * i / rate);
  mcse::signal::MultichannelWaveform wave;
  wave.sample_rate = rate;
  wave.samples = tone.transpose();
  mcse::signal::write_wav((g_dir / "tone.wav").string(), wave);

  CHECK(run_cli("spectrogram --in " + (g_dir / "tone.wav").string() + " --out " +
                (g_dir / "tone").string()) == 0);
  const std::string csv = read_file(g_dir / "tone.csv");
  const auto rows = static_cast<std::size_t>(
      std::count(csv.begin(), csv.end(), '\n'));
  CHECK(rows == 512);

  const std::string pgm = read_file(g_dir / "tone.pgm");
  CHECK(pgm.rfind("P5\n121 512\n255\n", 0) == 0);
  const std::size_t header = std::string("P5\n121 512\n255\n").size();
  // Brightest pixel sits on the tone row; frequency axis is bottom-up.
  std::size_t best = header;
  for (std::size_t i = header; i < pgm.size(); ++i)
    if (static_cast<unsigned char>(pgm[i]) >
        static_cast<unsigned char>(pgm[best]))
      best = i;
  const std::size_t row = (best - header) / 121;
  CHECK(row == 512 - 1 - 100);

  // Zero input: degenerate min-max guard emits all zeros.
  wave.samples.setZero();
  mcse::signal::write_wav((g_dir / "zero.wav").string(), wave);
  CHECK(run_cli("spectrogram --in " + (g_dir / "zero.wav").string() + " --out " +
                (g_dir / "zero").string()) == 0);
  const std::string zero_pgm = read_file(g_dir / "zero.pgm");
  for (std::size_t i = header; i < zero_pgm.size(); ++i)
    CHECK(zero_pgm[i] == 0);
}

TEST_CASE("compare lists noisy, each model, and mvdr per item") {
  // 1.2 s dataset matching the tiny model's channel count; the model
  // enhances it segment by segment.
  const fs::path config = g_dir / "cmp.json";
  write_file(config, R"({
    "model": {"num_channels": 2, "reference_index": 0},
    "simulate": {"num_channels": 2, "reference_index": 0,
                  "duration_seconds": 1.2, "noise_prefix_seconds": 0.35}
  })");
  CHECK(run_cli("simulate --config " + config.string() +
                " --count 1 --seed 4 --out-dir " + (g_dir / "dsCmp").string()) ==
        0);
  CHECK(run_cli("compare --manifest " + (g_dir / "dsCmp" / "manifest.json").string() +
                " --models " + (g_dir / "m1.ckpt").string() + " --out " +
                (g_dir / "table.csv").string()) == 0);
  const std::string csv = read_file(g_dir / "table.csv");
  CHECK(csv.rfind("method,item_id,si_sdr_db,stoi", 0) == 0);
  std::vector<std::string> lines;
  std::stringstream ss(csv);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) lines.push_back(line);
  REQUIRE(lines.size() == 1 + 3 + 3);  // header, 3 item rows, 3 mean rows
  CHECK(lines[1].rfind("noisy,0,", 0) == 0);
  CHECK(lines[2].rfind("m1,0,", 0) == 0);
  CHECK(lines[3].rfind("mvdr,0,", 0) == 0);
  CHECK(lines[4].rfind("noisy,mean,", 0) == 0);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_cli <mcse-binary> [doctest args]\n");
    return 1;
  }
  g_binary = argv[1];
  g_dir = fs::temp_directory_path() /
          ("mcse_cli_test_" + std::to_string(::getpid()));
  fs::create_directories(g_dir);

  doctest::Context context;
  context.applyCommandLine(argc - 1, argv + 1);
  const int result = context.run();
  fs::remove_all(g_dir);
  return result;
}
