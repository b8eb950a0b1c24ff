#include "mcse/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace mcse::ad {

namespace {

constexpr char kMagic[5] = {'R', 'U', 'N', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  require(in.good(), errc::malformed_header, "checkpoint: truncated record");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<CheckpointRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), errc::io_failure, "cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  for (const auto& rec : records) {
    require(shape_size(rec.shape) == rec.values.size(), errc::shape_mismatch,
            "checkpoint: record shape does not match payload: " + rec.name);
    write_u64(out, rec.name.size());
    out.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    write_u64(out, rec.shape.size());
    for (Index d : rec.shape) write_u64(out, static_cast<std::uint64_t>(d));
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(rec.values.data()),
              static_cast<std::streamsize>(rec.values.size() * 8));
  }
  out.flush();
  require(out.good(), errc::io_failure, "checkpoint write failure: " + path);
}

std::vector<CheckpointRecord> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), errc::io_failure, "cannot open checkpoint: " + path);
  char magic[5];
  in.read(magic, sizeof(magic));
  require(in.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
          errc::malformed_header, "checkpoint: bad magic");
  std::vector<CheckpointRecord> records;
  while (true) {
    if (in.peek() == std::char_traits<char>::eof()) break;
    CheckpointRecord rec;
    const std::uint64_t name_len = read_u64(in);
    require(name_len <= 4096, errc::malformed_header,
            "checkpoint: implausible name length");
    rec.name.resize(name_len);
    in.read(rec.name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rank = read_u64(in);
    require(rank <= 16, errc::malformed_header, "checkpoint: implausible rank");
    rec.shape.resize(rank);
    for (auto& d : rec.shape) d = static_cast<Index>(read_u64(in));
    const Index n = shape_size(rec.shape);
    rec.values.resize(n);
    in.read(reinterpret_cast<char*>(rec.values.data()),
            static_cast<std::streamsize>(n * 8));
    require(in.good(), errc::malformed_header, "checkpoint: truncated payload");
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace mcse::ad
