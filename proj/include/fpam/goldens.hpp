#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fpam/frontend.hpp"
#include "fpam/wav.hpp"

namespace fpam {

// Frontend fixtures: 5 s at 16 kHz, fixed seeds.
struct GoldenFixture {
  std::string name;
  Waveform wave;  // already quantized to PCM16, i.e. exactly what the WAV holds
};

std::vector<GoldenFixture> golden_fixtures();

// Writes <name>.wav, <name>.logmel.txt (dims 1 T M) and manifest.csv with the
// columns name,wav,tensor,tolerance. Output is byte-identical across runs.
std::vector<GoldenFixture> write_goldens(const std::filesystem::path& out_dir, double tolerance = 1e-4);

}  // namespace fpam
