#include "fpam/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fpam/errors.hpp"

namespace fpam {
namespace {

constexpr int kTapsPerPhase = 64;
constexpr double kKaiserBeta = 8.0;
constexpr double kRolloff = 0.95;

// FFTW's planner is not thread-safe; execution on distinct plans is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::span<double> input() { return {in_, n_}; }
  void execute() { fftw_execute(plan_); }
  std::complex<double> bin(std::size_t k) const { return {out_[k][0], out_[k][1]}; }
  double power(std::size_t k) const { return out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1]; }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double kaiser(double x, double half_width) {
  const double r = x / half_width;
  if (std::abs(r) >= 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / std::cyl_bessel_i(0.0, kKaiserBeta);
}

// Taps for input offsets k = -31..32 relative to floor(t), where t has
// fractional part `frac`.
void phase_taps(double frac, double cutoff, double* taps) {
  constexpr int kLow = kTapsPerPhase / 2 - 1;
  double total = 0;
  for (int i = 0; i < kTapsPerPhase; ++i) {
    const double x = static_cast<double>(i - kLow) - frac;
    taps[i] = cutoff * sinc(cutoff * x) * kaiser(x, kTapsPerPhase / 2.0);
    total += taps[i];
  }
  for (int i = 0; i < kTapsPerPhase; ++i) taps[i] /= total;
}

// Reflection without repeating the edge sample (numpy "reflect").
std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * static_cast<long>(n - 1);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

}  // namespace

std::size_t FrontendParams::target_samples() const {
  return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

std::string FrontendParams::key() const {
  std::ostringstream out;
  out.precision(17);
  out << "rate=" << sample_rate << ";seconds=" << seconds << ";mels=" << n_mels << ";hop=" << hop
      << ";win=" << win << ";fft=" << n_fft << ";fmin=" << fmin << ";fmax=" << resolved_fmax()
      << ";floor=" << log_floor;
  return out.str();
}

void FrontendParams::validate() const {
  if (sample_rate <= 0) throw ConfigError("frontend: sample rate must be positive");
  if (!(seconds > 0)) throw ConfigError("frontend: clip length must be positive");
  if (n_mels <= 0) throw ConfigError("frontend: mel count must be positive");
  if (hop <= 0) throw ConfigError("frontend: hop must be positive");
  if (win <= 0 || n_fft < 2 || win > n_fft) throw ConfigError("frontend: need 0 < win <= n_fft");
  if (!(log_floor > 0)) throw ConfigError("frontend: log floor must be positive");
}

Waveform resample(const Waveform& wave, int target_rate) {
  if (wave.sample_rate <= 0) throw ContractError("resample: source rate must be positive");
  if (target_rate <= 0) throw ContractError("resample: target rate must be positive");
  if (wave.sample_rate == target_rate) return wave;

  const long g = std::gcd(wave.sample_rate, target_rate);
  const long up = target_rate / g;
  const long down = wave.sample_rate / g;
  const std::size_t n = wave.samples.size();
  Waveform out;
  out.sample_rate = target_rate;
  if (n == 0) return out;
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * target_rate / wave.sample_rate));
  out.samples.resize(out_len);

  const double cutoff = std::min(1.0, static_cast<double>(up) / static_cast<double>(down)) * kRolloff;
  constexpr long kLow = kTapsPerPhase / 2 - 1;
  const bool tabulate = up <= 4096;
  std::vector<double> table;
  if (tabulate) {
    table.resize(static_cast<std::size_t>(up) * kTapsPerPhase);
    for (long p = 0; p < up; ++p) {
      phase_taps(static_cast<double>(p) / static_cast<double>(up), cutoff, table.data() + p * kTapsPerPhase);
    }
  }
  std::vector<double> scratch(kTapsPerPhase);
  const auto last = static_cast<long>(n) - 1;
  for (std::size_t j = 0; j < out_len; ++j) {
    const long num = static_cast<long>(j) * down;
    const long base = num / up;
    const long phase = num % up;
    const double* taps = nullptr;
    if (tabulate) {
      taps = table.data() + phase * kTapsPerPhase;
    } else {
      phase_taps(static_cast<double>(phase) / static_cast<double>(up), cutoff, scratch.data());
      taps = scratch.data();
    }
    double acc = 0;
    for (long i = 0; i < kTapsPerPhase; ++i) {
      const long idx = std::clamp(base + i - kLow, 0L, last);
      acc += taps[i] * wave.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[j] = acc;
  }
  return out;
}

Waveform fix_length(const Waveform& wave, double seconds) {
  if (wave.samples.empty()) throw ContractError("fix_length: empty waveform");
  if (wave.sample_rate <= 0) throw ContractError("fix_length: sample rate must be positive");
  const auto target = static_cast<std::size_t>(std::llround(seconds * wave.sample_rate));
  Waveform out;
  out.sample_rate = wave.sample_rate;
  out.samples = wave.samples;
  out.samples.resize(target, 0.0);
  return out;
}

PowerSpectrogram stft_power(const Waveform& wave, int win, int hop, int n_fft) {
  if (wave.samples.empty()) throw ContractError("stft_power: empty waveform");
  if (hop <= 0 || win <= 0 || n_fft < 2 || win > n_fft) {
    throw ContractError("stft_power: need hop > 0 and 0 < win <= n_fft");
  }
  const std::size_t n = wave.samples.size();
  const auto fft = static_cast<std::size_t>(n_fft);
  const std::size_t pad = fft / 2;
  PowerSpectrogram spec;
  spec.frames = 1 + n / static_cast<std::size_t>(hop);
  spec.bins = fft / 2 + 1;
  spec.power.resize(spec.frames * spec.bins);

  // Periodic Hann, zero-padded to n_fft and centered.
  std::vector<double> window(fft, 0.0);
  const std::size_t offset = (fft - static_cast<std::size_t>(win)) / 2;
  for (int i = 0; i < win; ++i) {
    window[offset + static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
  }

  RealFft transform(fft);
  auto input = transform.input();
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const long start = static_cast<long>(t * static_cast<std::size_t>(hop)) - static_cast<long>(pad);
    for (std::size_t i = 0; i < fft; ++i) {
      input[i] = window[i] * wave.samples[reflect_index(start + static_cast<long>(i), n)];
    }
    transform.execute();
    double* row = spec.power.data() + t * spec.bins;
    for (std::size_t k = 0; k < spec.bins; ++k) row[k] = transform.power(k);
  }
  return spec;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(int n_mels, int n_fft, int sample_rate, double fmin, double fmax) {
  if (n_mels <= 0 || n_fft < 2 || sample_rate <= 0) {
    throw ConfigError("mel_filterbank: n_mels, n_fft and sample_rate must be positive");
  }
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) {
      throw ConfigError("mel_filterbank: degenerate configuration, filter edges are not strictly increasing (fmin=" +
                        std::to_string(fmin) + ", fmax=" + std::to_string(fmax) + ")");
    }
  }

  MelFilterbank fb;
  fb.n_mels = static_cast<std::size_t>(n_mels);
  fb.bins = static_cast<std::size_t>(n_fft) / 2 + 1;
  fb.weights.assign(fb.n_mels * fb.bins, 0.0);
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    const double f_lo = edges[m], f_c = edges[m + 1], f_hi = edges[m + 2];
    const double norm = 2.0 / (f_hi - f_lo);
    for (std::size_t k = 0; k < fb.bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double rising = (f - f_lo) / (f_c - f_lo);
      const double falling = (f_hi - f) / (f_hi - f_c);
      fb.weights[m * fb.bins + k] = std::max(0.0, std::min(rising, falling)) * norm;
    }
  }
  return fb;
}

const MelFilterbank& cached_mel_filterbank(const FrontendParams& params) {
  static std::mutex mutex;
  static std::map<std::string, std::unique_ptr<MelFilterbank>> cache;
  const std::string key = std::to_string(params.n_mels) + "/" + std::to_string(params.n_fft) + "/" +
                          std::to_string(params.sample_rate) + "/" + std::to_string(params.fmin) + "/" +
                          std::to_string(params.resolved_fmax());
  std::lock_guard lock(mutex);
  auto& slot = cache[key];
  if (!slot) {
    slot = std::make_unique<MelFilterbank>(mel_filterbank(params.n_mels, params.n_fft, params.sample_rate,
                                                          params.fmin, params.resolved_fmax()));
  }
  return *slot;
}

LogMelSpectrogram log_mel(const PowerSpectrogram& power, const MelFilterbank& fb, double floor) {
  if (power.bins != fb.bins) {
    throw ShapeError("log_mel: spectrogram has " + std::to_string(power.bins) + " bins, filterbank expects " +
                     std::to_string(fb.bins));
  }
  LogMelSpectrogram out;
  out.frames = power.frames;
  out.mels = fb.n_mels;
  out.data.resize(out.frames * out.mels);
  for (std::size_t t = 0; t < power.frames; ++t) {
    const double* row = power.power.data() + t * power.bins;
    for (std::size_t m = 0; m < fb.n_mels; ++m) {
      const double* filter = fb.weights.data() + m * fb.bins;
      double acc = 0;
      for (std::size_t k = 0; k < fb.bins; ++k) acc += row[k] * filter[k];
      out.data[t * out.mels + m] = std::log(acc + floor);
    }
  }
  return out;
}

LogMelSpectrogram extract_log_mel(const Waveform& wave, const FrontendParams& params) {
  params.validate();
  const Waveform fixed = fix_length(resample(wave, params.sample_rate), params.seconds);
  const PowerSpectrogram power = stft_power(fixed, params.win, params.hop, params.n_fft);
  LogMelSpectrogram out = log_mel(power, cached_mel_filterbank(params), params.log_floor);
  out.frame_rate = static_cast<double>(params.sample_rate) / params.hop;
  return out;
}

std::vector<std::complex<double>> real_fft(std::span<const double> frame) {
  if (frame.empty()) throw ContractError("real_fft: empty frame");
  RealFft transform(frame.size());
  std::copy(frame.begin(), frame.end(), transform.input().begin());
  transform.execute();
  std::vector<std::complex<double>> out(frame.size() / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = transform.bin(k);
  return out;
}

std::vector<std::complex<double>> naive_dft(std::span<const double> frame) {
  const std::size_t n = frame.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    double re = 0, im = 0;
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce k*t mod n first so the angle stays accurate for large products.
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      re += frame[t] * std::cos(angle);
      im += frame[t] * std::sin(angle);
    }
    out[k] = {re, im};
  }
  return out;
}

}  // namespace fpam
