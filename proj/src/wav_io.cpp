#include "mcse/wav_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace mcse::signal {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace

MultichannelWaveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), errc::io_failure, "cannot open file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  require(!in.bad(), errc::io_failure, "read failure: " + path);

  require(bytes.size() >= 12, errc::malformed_header, "malformed header: file too small");
  require(std::memcmp(bytes.data(), "RIFF", 4) == 0, errc::malformed_header,
          "malformed header: missing RIFF tag");
  require(std::memcmp(bytes.data() + 8, "WAVE", 4) == 0, errc::malformed_header,
          "malformed header: missing WAVE tag");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t chunk_size = read_u32(chunk + 4);
    require(pos + 8 + chunk_size <= bytes.size(), errc::malformed_header,
            "malformed header: chunk exceeds file size");
    const unsigned char* body = chunk + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      require(chunk_size >= 16, errc::malformed_header, "malformed header: fmt chunk too small");
      format = read_u16(body);
      channels = read_u16(body + 2);
      rate = read_u32(body + 4);
      bits = read_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = body;
      data_size = chunk_size;
    }
    pos += 8 + chunk_size + (chunk_size % 2);  // chunks are word-aligned
  }

  require(have_fmt && data != nullptr, errc::malformed_header,
          "malformed header: missing fmt or data chunk");
  require(channels >= 1 && rate >= 1, errc::malformed_header,
          "malformed header: bad channel count or sample rate");

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  require(pcm16 || float32, errc::unsupported_codec,
          "unsupported codec: only PCM16 and float32 WAV are handled");

  const std::size_t bytes_per_sample = pcm16 ? 2 : 4;
  const std::size_t frame_size = bytes_per_sample * channels;
  require(frame_size > 0 && data_size % frame_size == 0, errc::malformed_header,
          "malformed header: data size not a whole number of frames");
  const std::size_t frames = data_size / frame_size;
  require(frames >= 1, errc::malformed_header, "malformed header: empty data chunk");

  MultichannelWaveform wave;
  wave.sample_rate = static_cast<int>(rate);
  wave.samples.resize(channels, static_cast<Index>(frames));
  for (std::size_t n = 0; n < frames; ++n) {
    const unsigned char* frame = data + n * frame_size;
    for (std::uint16_t m = 0; m < channels; ++m) {
      const unsigned char* s = frame + m * bytes_per_sample;
      double v;
      if (pcm16) {
        const auto raw = static_cast<std::int16_t>(read_u16(s));
        v = static_cast<double>(raw) / 32768.0;
      } else {
        std::uint32_t u = read_u32(s);
        float f = std::bit_cast<float>(u);
        v = static_cast<double>(f);
      }
      wave.samples(m, static_cast<Index>(n)) = v;
    }
  }
  return wave;
}

void write_wav(const std::string& path, const MultichannelWaveform& wave) {
  wave.validate();
  const auto channels = static_cast<std::uint16_t>(wave.channels());
  const auto frames = static_cast<std::uint32_t>(wave.length());
  const std::uint32_t byte_rate = static_cast<std::uint32_t>(wave.sample_rate) * channels * 2;
  const std::uint32_t data_size = frames * channels * 2;

  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, channels);
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(out, byte_rate);
  put_u16(out, static_cast<std::uint16_t>(channels * 2));  // block align
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_size);

  for (Index n = 0; n < wave.length(); ++n) {
    for (Index m = 0; m < wave.channels(); ++m) {
      double scaled = std::round(wave.samples(m, n) * 32768.0);
      scaled = std::clamp(scaled, -32768.0, 32767.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), errc::io_failure, "cannot open file for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  f.flush();
  require(f.good(), errc::io_failure, "write failure: " + path);
}

}  // namespace mcse::signal
