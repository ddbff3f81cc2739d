#include "fpam/goldens.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "fpam/errors.hpp"
#include "fpam/tensor_text.hpp"

namespace fpam {

namespace fs = std::filesystem;

namespace {

constexpr int kRate = 16000;
constexpr std::size_t kSamples = 5 * kRate;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Uniform in [0, 1) from the top 53 bits; stable across standard libraries.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Waveform quantized(std::vector<double> samples) {
  Waveform w{std::move(samples), kRate};
  return parse_wav(encode_wav(w));
}

Waveform tone(double hz, double amp) {
  std::vector<double> s(kSamples);
  for (std::size_t n = 0; n < kSamples; ++n) s[n] = amp * std::sin(kTwoPi * hz * n / kRate);
  return quantized(std::move(s));
}

}  // namespace

std::vector<GoldenFixture> golden_fixtures() {
  std::vector<GoldenFixture> out;
  out.push_back({"silence", quantized(std::vector<double>(kSamples, 0.0))});
  out.push_back({"tone_440", tone(440.0, 0.5)});
  out.push_back({"tone_3000", tone(3000.0, 0.25)});

  {
    // Linear sweep 100 Hz -> 7000 Hz.
    std::vector<double> s(kSamples);
    const double f0 = 100.0, f1 = 7000.0, dur = 5.0;
    for (std::size_t n = 0; n < kSamples; ++n) {
      const double t = static_cast<double>(n) / kRate;
      s[n] = 0.4 * std::sin(kTwoPi * (f0 * t + 0.5 * (f1 - f0) / dur * t * t));
    }
    out.push_back({"chirp", quantized(std::move(s))});
  }
  {
    std::mt19937_64 rng(20240611);
    std::vector<double> s(kSamples);
    for (double& v : s) v = 0.3 * (2.0 * unit(rng) - 1.0);
    out.push_back({"white_noise", quantized(std::move(s))});
  }
  {
    std::vector<double> s(kSamples);
    for (std::size_t n = 0; n < kSamples; ++n) {
      const double t = static_cast<double>(n) / kRate;
      s[n] = 0.4 * (0.5 + 0.5 * std::sin(kTwoPi * 4.0 * t)) * std::sin(kTwoPi * 1000.0 * t);
    }
    out.push_back({"am_tone", quantized(std::move(s))});
  }
  {
    // Single decaying click at 2.5 s on silence.
    std::vector<double> s(kSamples, 0.0);
    for (std::size_t k = 0; k < 8; ++k) s[kSamples / 2 + k] = 0.9 * std::pow(0.5, static_cast<double>(k));
    out.push_back({"click", quantized(std::move(s))});
  }
  return out;
}

std::vector<GoldenFixture> write_goldens(const fs::path& out_dir, double tolerance) {
  fs::create_directories(out_dir);
  const FrontendParams params;
  std::vector<GoldenFixture> fixtures = golden_fixtures();
  std::ofstream manifest(out_dir / "manifest.csv", std::ios::binary);
  if (!manifest) throw DataError("cannot write " + (out_dir / "manifest.csv").string());
  char tol[32];
  std::snprintf(tol, sizeof tol, "%g", tolerance);
  manifest << "name,wav,tensor,tolerance\n";
  for (const auto& f : fixtures) {
    const std::string wav = f.name + ".wav";
    const std::string tensor = f.name + ".logmel.txt";
    write_wav(out_dir / wav, f.wave);
    const LogMelSpectrogram spec = extract_log_mel(load_wav(out_dir / wav), params);
    const std::size_t dims[] = {1, spec.frames, spec.mels};
    write_tensor_text(out_dir / tensor, dims, spec.data);
    manifest << f.name << "," << wav << "," << tensor << "," << tol << "\n";
  }
  return fixtures;
}

}  // namespace fpam
