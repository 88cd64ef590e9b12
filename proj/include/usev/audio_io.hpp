#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "usev/dsp.hpp"

namespace usev {

enum class WavEncoding { Pcm16, Float32 };

/// Reads a mono RIFF/WAVE file in 16-bit PCM or 32-bit IEEE float.
/// PCM samples are scaled to [-1, 1). Multi-channel files are rejected.
AudioClip read_wav(const std::filesystem::path& path);

/// PCM16 output clips to [-1, 1] before quantization.
void write_wav(const std::filesystem::path& path, const AudioClip& clip,
               WavEncoding encoding = WavEncoding::Float32);

// Headerless little-endian float32, used for test fixtures.
std::vector<double> read_raw_f32(const std::filesystem::path& path);
void write_raw_f32(const std::filesystem::path& path,
                   std::span<const double> samples);

}  // namespace usev
