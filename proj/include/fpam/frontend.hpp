#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fpam/wav.hpp"

namespace fpam {

// Everything that determines the log-Mel features of a clip.
struct FrontendParams {
  int sample_rate = 16000;
  double seconds = 5.0;
  int n_mels = 64;
  int hop = 400;
  int win = 1024;
  int n_fft = 1024;
  double fmin = 0.0;
  double fmax = 0.0;  // <= 0 selects Nyquist
  double log_floor = 1e-10;

  double resolved_fmax() const { return fmax > 0 ? fmax : sample_rate / 2.0; }
  std::size_t target_samples() const;
  // Canonical text form; part of the feature-cache key.
  std::string key() const;
  void validate() const;
};

// Row-major frames x bins power spectrogram.
struct PowerSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> power;
};

// Row-major n_mels x bins triangular filters.
struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t bins = 0;
  std::vector<double> weights;

  double at(std::size_t mel, std::size_t bin) const { return weights[mel * bins + bin]; }
};

// 1 x T x M log-Mel features, row-major over (T, M).
struct LogMelSpectrogram {
  std::size_t frames = 0;
  std::size_t mels = 0;
  std::vector<double> data;
  double frame_rate = 0;

  double at(std::size_t frame, std::size_t mel) const { return data[frame * mels + mel]; }
};

// Polyphase windowed-sinc resampler: 64 taps per phase, Kaiser window, taps
// normalized to unit DC gain, edges clamped. Output length is
// round(n * target / source); equal rates return the input unchanged.
Waveform resample(const Waveform& wave, int target_rate);

// Truncates from the head of the clip or zero-pads at the tail.
Waveform fix_length(const Waveform& wave, double seconds);

// Reflect center-padded STFT with a periodic Hann window of length `win`
// (centered inside n_fft). T = 1 + floor(n / hop), bins = n_fft / 2 + 1.
PowerSpectrogram stft_power(const Waveform& wave, int win, int hop, int n_fft);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// HTK-scale centers, Slaney area normalization 2 / (f_hi - f_lo).
MelFilterbank mel_filterbank(int n_mels, int n_fft, int sample_rate, double fmin, double fmax);
// Shared instance per configuration; identical to a fresh construction.
const MelFilterbank& cached_mel_filterbank(const FrontendParams& params);

// ln(power * fb^T + floor).
LogMelSpectrogram log_mel(const PowerSpectrogram& power, const MelFilterbank& fb, double floor = 1e-10);

// Full chain: resample, fix length, STFT, Mel projection, log.
LogMelSpectrogram extract_log_mel(const Waveform& wave, const FrontendParams& params);

// Bins 0..n/2 of the DFT of a real frame (FFTW backed).
std::vector<std::complex<double>> real_fft(std::span<const double> frame);

// Direct O(N^2) DFT at 64 bits, all N bins. Reference for the FFT.
std::vector<std::complex<double>> naive_dft(std::span<const double> frame);

}  // namespace fpam
