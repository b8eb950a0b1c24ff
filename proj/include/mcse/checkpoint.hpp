#pragma once

#include <string>
#include <vector>

#include "mcse/tensor.hpp"

namespace mcse::ad {

/// One named array in the flat checkpoint container.
struct CheckpointRecord {
  std::string name;
  Shape shape;
  Eigen::ArrayXd values;
};

/// Binary container: magic "RUNT1", then per-record
///   name length (u64 LE), UTF-8 name bytes,
///   rank (u64 LE), extents (u64 LE each),
///   float64 LE payload in row-major order.
/// Records run until end of file. Round trips are bit-exact.
void save_checkpoint(const std::string& path,
                     const std::vector<CheckpointRecord>& records);

std::vector<CheckpointRecord> load_checkpoint(const std::string& path);

}  // namespace mcse::ad
