#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fpam {

// Mono audio, samples nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 0;

  double seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

// RIFF/WAVE PCM 16-bit, any channel count (channels are averaged), any rate.
// Samples are scaled by 1/32768.
Waveform parse_wav(std::span<const std::uint8_t> bytes);
Waveform load_wav(const std::filesystem::path& path);

// Mono PCM 16-bit; samples are scaled by 32768, rounded and clipped.
std::vector<std::uint8_t> encode_wav(const Waveform& wave);
void write_wav(const std::filesystem::path& path, const Waveform& wave);

// Stereo or multichannel writer used by tests and fixtures; `interleaved`
// holds raw PCM values.
std::vector<std::uint8_t> encode_pcm16(std::span<const std::int16_t> interleaved, int channels, int sample_rate);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace fpam
