#pragma once

#include <string>

#include "mcse/signal.hpp"

namespace mcse::signal {

/// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float samples.
/// PCM samples are scaled to [-1, 1) by division by 32768.
MultichannelWaveform read_wav(const std::string& path);

/// Writes 16-bit PCM little-endian with saturation clipping.
void write_wav(const std::string& path, const MultichannelWaveform& wave);

}  // namespace mcse::signal
