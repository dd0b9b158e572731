#pragma once

#include "error.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace estm::wav {

struct WavAudio {
    int                sample_rate = 0;
    std::vector<float> samples; // mono, [-1, 1)
};

// 16-bit PCM little-endian mono WAV with the canonical 44-byte header.
WavAudio read_wav(const std::string & path);
void     write_wav(const std::string & path, std::span<const float> samples, int sample_rate);

// Raw f32 little-endian sample buffer.
std::vector<float> read_raw_f32(const std::string & path);

} // namespace estm::wav
