#include "mcse/wav_io.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"

using namespace mcse;
using namespace mcse::signal;

namespace {

std::filesystem::path temp_path(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

void append_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>((x >> (8 * i)) & 0xff));
}

void append_u16(std::vector<std::uint8_t>& v, std::uint16_t x) {
  v.push_back(static_cast<std::uint8_t>(x & 0xff));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
}

void append_tag(std::vector<std::uint8_t>& v, const char* tag) {
  v.insert(v.end(), tag, tag + 4);
}

/// Byte-by-byte stereo PCM16 fixture assembled from the RIFF layout.
std::vector<std::uint8_t> stereo_fixture(const std::vector<std::int16_t>& left,
                                         const std::vector<std::int16_t>& right,
                                         std::uint16_t format = 1) {
  std::vector<std::uint8_t> v;
  const auto frames = static_cast<std::uint32_t>(left.size());
  const std::uint32_t data_size = frames * 4;
  append_tag(v, "RIFF");
  append_u32(v, 36 + data_size);
  append_tag(v, "WAVE");
  append_tag(v, "fmt ");
  append_u32(v, 16);
  append_u16(v, format);
  append_u16(v, 2);
  append_u32(v, 16000);
  append_u32(v, 16000 * 4);
  append_u16(v, 4);
  append_u16(v, 16);
  append_tag(v, "data");
  append_u32(v, data_size);
  for (std::uint32_t n = 0; n < frames; ++n) {
    append_u16(v, static_cast<std::uint16_t>(left[n]));
    append_u16(v, static_cast<std::uint16_t>(right[n]));
  }
  return v;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& v) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size()));
}

}  // namespace

TEST_CASE("write then read stays within one quantization step") {
  MultichannelWaveform w;
  w.sample_rate = 16000;
  w.samples.resize(3, 500);
  for (Index m = 0; m < 3; ++m)
    w.samples.row(m) = testutil::random_uniform(500, 10 + m, -0.99, 0.99).transpose();
  const auto path = temp_path("mcse_roundtrip.wav");
  write_wav(path.string(), w);
  MultichannelWaveform r = read_wav(path.string());
  CHECK(r.sample_rate == 16000);
  CHECK(r.channels() == 3);
  CHECK(r.length() == 500);
  CHECK((r.samples - w.samples).abs().maxCoeff() <= 1.0 / 32768.0);
  std::filesystem::remove(path);
}

TEST_CASE("clipping saturates out-of-range samples") {
  MultichannelWaveform w;
  w.sample_rate = 8000;
  w.samples.resize(1, 3);
  w.samples << 2.0, -2.0, 0.0;
  const auto path = temp_path("mcse_clip.wav");
  write_wav(path.string(), w);
  MultichannelWaveform r = read_wav(path.string());
  CHECK(r.samples(0, 0) == doctest::Approx(32767.0 / 32768.0));
  CHECK(r.samples(0, 1) == doctest::Approx(-1.0));
  CHECK(r.samples(0, 2) == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("stereo fixture decodes with correct layout") {
  std::vector<std::int16_t> left = {0, 16384, -16384, 32767};
  std::vector<std::int16_t> right = {-32768, 1, 2, 3};
  const auto path = temp_path("mcse_stereo.wav");
  write_bytes(path, stereo_fixture(left, right));
  MultichannelWaveform r = read_wav(path.string());
  CHECK(r.channels() == 2);
  CHECK(r.length() == 4);
  CHECK(r.sample_rate == 16000);
  CHECK(r.samples(0, 1) == doctest::Approx(0.5));
  CHECK(r.samples(1, 0) == doctest::Approx(-1.0));
  CHECK(r.samples(0, 3) == doctest::Approx(32767.0 / 32768.0));
  std::filesystem::remove(path);
}

TEST_CASE("float32 data decodes unscaled") {
  std::vector<std::uint8_t> v;
  append_tag(v, "RIFF");
  append_u32(v, 36 + 8);
  append_tag(v, "WAVE");
  append_tag(v, "fmt ");
  append_u32(v, 16);
  append_u16(v, 3);  // IEEE float
  append_u16(v, 1);
  append_u32(v, 16000);
  append_u32(v, 16000 * 4);
  append_u16(v, 4);
  append_u16(v, 32);
  append_tag(v, "data");
  append_u32(v, 8);
  const float samples[2] = {0.25f, -0.5f};
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(samples);
  v.insert(v.end(), bytes, bytes + 8);
  const auto path = temp_path("mcse_float.wav");
  write_bytes(path, v);
  MultichannelWaveform r = read_wav(path.string());
  CHECK(r.channels() == 1);
  CHECK(r.samples(0, 0) == doctest::Approx(0.25));
  CHECK(r.samples(0, 1) == doctest::Approx(-0.5));
  std::filesystem::remove(path);
}

TEST_CASE("error kinds are distinct") {
  const auto path = temp_path("mcse_bad.wav");

  // Truncated file.
  write_bytes(path, {'R', 'I', 'F', 'F', 0, 0});
  CHECK_THROWS_WITH_AS(read_wav(path.string()), doctest::Contains("malformed header"), Error);
  try {
    read_wav(path.string());
  } catch (const Error& e) {
    CHECK(e.code() == errc::malformed_header);
  }

  // Unsupported codec (mu-law format tag).
  write_bytes(path, stereo_fixture({0, 0}, {0, 0}, 7));
  try {
    read_wav(path.string());
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::unsupported_codec);
  }

  // Missing file.
  try {
    read_wav("/nonexistent/missing.wav");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::io_failure);
  }
  std::filesystem::remove(path);
}
