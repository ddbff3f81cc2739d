#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "fpam/errors.hpp"
#include "fpam/frontend.hpp"
#include "fpam/goldens.hpp"
#include "fpam/wav.hpp"
#include "test_util.hpp"

using namespace fpam;

namespace {

constexpr double kPi = std::numbers::pi;

Waveform sine(double hz, int rate, double seconds, double amp = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(std::lround(seconds * rate)));
  for (std::size_t n = 0; n < w.samples.size(); ++n) w.samples[n] = amp * std::sin(2 * kPi * hz * n / rate);
  return w;
}

std::vector<double> random_frame(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace

TEST_CASE("wav: PCM scaling, channel averaging, round trip") {
  const std::int16_t mono[] = {16384};
  CHECK(parse_wav(encode_pcm16(mono, 1, 16000)).samples[0] == 0.5);

  const std::int16_t stereo[] = {6554, 19661};  // 0.2 and 0.6 after scaling
  const Waveform avg = parse_wav(encode_pcm16(stereo, 2, 44100));
  REQUIRE(avg.samples.size() == 1);
  CHECK(avg.sample_rate == 44100);
  CHECK(std::abs(avg.samples[0] - 0.4) < 1.0 / 32768);

  Waveform w;
  w.sample_rate = 22050;
  for (int v = -32768; v < 32768; v += 97) w.samples.push_back(v / 32768.0);
  const Waveform back = parse_wav(encode_wav(w));
  CHECK(back.sample_rate == 22050);
  CHECK(back.samples == w.samples);
}

TEST_CASE("wav: malformed and unsupported inputs") {
  const std::int16_t one[] = {1};
  auto bytes = encode_pcm16(one, 1, 16000);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_wav(bad_magic), DataError);

  auto eight_bit = bytes;
  eight_bit[34] = 8;  // bits per sample
  CHECK_THROWS_AS(parse_wav(eight_bit), DataError);

  auto float_fmt = bytes;
  float_fmt[20] = 3;  // IEEE float
  CHECK_THROWS_AS(parse_wav(float_fmt), DataError);

  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + 20);
  CHECK_THROWS_AS(parse_wav(truncated), DataError);
}

TEST_CASE("resample: equal rate passes through bit-exactly") {
  const Waveform w = sine(440, 16000, 0.25);
  CHECK(resample(w, 16000).samples == w.samples);
}

TEST_CASE("resample: output length is round(n * target / source)") {
  for (int src : {8000, 22050, 44100, 48000}) {
    for (std::size_t n : {1000u, 4410u, 12345u}) {
      Waveform w{std::vector<double>(n, 0.1), src};
      const Waveform out = resample(w, 16000);
      CHECK(out.sample_rate == 16000);
      CHECK(out.samples.size() == static_cast<std::size_t>(std::llround(double(n) * 16000 / src)));
    }
  }
}

TEST_CASE("resample: 440 Hz at 44.1 kHz peaks within one bin of 440 Hz") {
  const Waveform out = resample(sine(440, 44100, 1.0), 16000);
  const PowerSpectrogram p = stft_power(out, 1024, 400, 1024);
  std::vector<double> total(p.bins, 0.0);
  for (std::size_t t = 0; t < p.frames; ++t)
    for (std::size_t k = 0; k < p.bins; ++k) total[k] += p.power[t * p.bins + k];
  const auto peak = std::max_element(total.begin(), total.end()) - total.begin();
  const double expected = 440.0 * 1024 / 16000;
  CHECK(std::abs(double(peak) - expected) <= 1.0);
}

TEST_CASE("resample: DC level is preserved") {
  Waveform w{std::vector<double>(44100, 0.25), 44100};
  const Waveform out = resample(w, 16000);
  for (std::size_t n = 100; n + 100 < out.samples.size(); ++n) CHECK(std::abs(out.samples[n] - 0.25) < 1e-3);
}

TEST_CASE("fix_length truncates the head or pads the tail") {
  Waveform six{std::vector<double>(6 * 16000), 16000};
  for (std::size_t n = 0; n < six.samples.size(); ++n) six.samples[n] = double(n);
  const Waveform cut = fix_length(six, 5.0);
  REQUIRE(cut.samples.size() == 80000);
  CHECK(cut.samples.front() == 0.0);
  CHECK(cut.samples.back() == 79999.0);

  Waveform three{std::vector<double>(3 * 16000, 0.5), 16000};
  const Waveform padded = fix_length(three, 5.0);
  REQUIRE(padded.samples.size() == 80000);
  CHECK(padded.samples[47999] == 0.5);
  for (std::size_t n = 48000; n < 80000; ++n) REQUIRE(padded.samples[n] == 0.0);

  CHECK_THROWS_AS(fix_length(Waveform{{}, 16000}, 5.0), ContractError);
}

TEST_CASE("real FFT matches the direct DFT on random frame lengths") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 64 + rng() % (1024 - 64 + 1);
    const auto frame = random_frame(n, rng());
    const auto fast = real_fft(frame);
    const auto slow = naive_dft(frame);
    REQUIRE(fast.size() == n / 2 + 1);
    double scale = 0;
    for (const auto& c : slow) scale = std::max(scale, std::abs(c));
    for (std::size_t k = 0; k < fast.size(); ++k) CHECK(std::abs(fast[k] - slow[k]) / scale < 1e-9);
  }
}

TEST_CASE("Parseval holds for the direct DFT and the FFT half-spectrum") {
  const auto frame = random_frame(500, 4);
  double energy = 0;
  for (double x : frame) energy += x * x;
  double spectral = 0;
  for (const auto& c : naive_dft(frame)) spectral += std::norm(c);
  CHECK(spectral / 500 == doctest::Approx(energy).epsilon(1e-12));

  const auto half = real_fft(frame);
  double folded = std::norm(half.front()) + std::norm(half.back());
  for (std::size_t k = 1; k + 1 < half.size(); ++k) folded += 2 * std::norm(half[k]);
  CHECK(folded / 500 == doctest::Approx(energy).epsilon(1e-12));
}

TEST_CASE("STFT geometry: 5 s at 16 kHz, hop 400 gives 201 frames of 513 bins") {
  const PowerSpectrogram p = stft_power(Waveform{std::vector<double>(80000, 0.0), 16000}, 1024, 400, 1024);
  CHECK(p.frames == 201);
  CHECK(p.bins == 513);
}

TEST_CASE("STFT of a bin-centred sinusoid concentrates energy in that bin") {
  const double hz = 16000.0 * 64 / 1024;  // exactly bin 64
  const PowerSpectrogram p = stft_power(sine(hz, 16000, 1.0), 1024, 400, 1024);
  const std::size_t t = p.frames / 2;
  const auto row = std::span<const double>(p.power).subspan(t * p.bins, p.bins);
  CHECK(std::max_element(row.begin(), row.end()) - row.begin() == 64);
  // Periodic Hann: amplitude 0.5 gives |X| = 0.5 * 1024 / 4.
  CHECK(row[64] == doctest::Approx(std::pow(0.5 * 1024 / 4, 2)).epsilon(1e-6));
}

TEST_CASE("mel scale") {
  CHECK(hz_to_mel(0) == 0.0);
  CHECK(hz_to_mel(1000) == doctest::Approx(2595 * std::log10(1 + 1000.0 / 700)));
  for (double hz : {20.0, 440.0, 4000.0, 8000.0}) CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz));
}

TEST_CASE("mel filterbank properties") {
  const MelFilterbank fb = mel_filterbank(64, 1024, 16000, 0, 8000);
  REQUIRE(fb.n_mels == 64);
  REQUIRE(fb.bins == 513);
  const double df = 16000.0 / 1024;
  std::size_t previous_peak = 0;
  for (std::size_t m = 0; m < 64; ++m) {
    double area = 0;
    std::size_t peak = 0;
    for (std::size_t k = 0; k < fb.bins; ++k) {
      CHECK(fb.at(m, k) >= 0.0);
      area += fb.at(m, k) * df;
      if (fb.at(m, k) > fb.at(m, peak)) peak = k;
    }
    CHECK(peak >= previous_peak);
    previous_peak = peak;
    // Area normalization: each triangle integrates to about one in Hz.
    if (m >= 24) CHECK(area == doctest::Approx(1.0).epsilon(0.05));
  }
  CHECK_THROWS_AS(mel_filterbank(64, 1024, 16000, 5000, 4000), ConfigError);
  CHECK_THROWS_AS(mel_filterbank(64, 1024, 16000, 3000, 3000), ConfigError);
  CHECK(&cached_mel_filterbank(FrontendParams{}) == &cached_mel_filterbank(FrontendParams{}));
  CHECK(cached_mel_filterbank(FrontendParams{}).weights == fb.weights);
}

TEST_CASE("log-Mel end to end") {
  const FrontendParams params;
  const LogMelSpectrogram silent = extract_log_mel(Waveform{std::vector<double>(80000, 0.0), 16000}, params);
  CHECK(silent.frames == 201);
  CHECK(silent.mels == 64);
  CHECK(silent.frame_rate == doctest::Approx(40.0));
  for (double v : silent.data) REQUIRE(v == std::log(1e-10));

  // 44.1 kHz stereo-derived, 6 s input still lands on 1 x 201 x 64.
  const LogMelSpectrogram tone = extract_log_mel(sine(1000, 44100, 6.0), params);
  CHECK(tone.frames == 201);
  CHECK(tone.mels == 64);
}

TEST_CASE("golden fixtures give finite floor-bounded 201 x 64 features") {
  const auto fixtures = golden_fixtures();
  CHECK(fixtures.size() >= 6);
  for (const auto& f : fixtures) {
    CAPTURE(f.name);
    const LogMelSpectrogram s = extract_log_mel(f.wave, FrontendParams{});
    CHECK(s.frames == 201);
    CHECK(s.mels == 64);
    for (double v : s.data) {
      REQUIRE(std::isfinite(v));
      REQUIRE(v >= std::log(1e-10));
    }
  }
}

TEST_CASE("frontend parameter validation") {
  FrontendParams p;
  p.win = 2048;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = FrontendParams{};
  p.hop = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  CHECK(FrontendParams{}.target_samples() == 80000);
  CHECK(FrontendParams{}.key() != [] {
    FrontendParams q;
    q.n_mels = 128;
    return q.key();
  }());
}

TEST_CASE("FFT of an impulse is flat and of ones is a single DC bin") {
  std::vector<double> impulse(16, 0.0);
  impulse[0] = 1.0;
  for (const auto& c : real_fft(impulse)) CHECK(std::abs(c - std::complex<double>(1, 0)) < 1e-12);

  const std::vector<double> ones(8, 1.0);
  const auto spectrum = real_fft(ones);
  REQUIRE(spectrum.size() == 5);
  CHECK(std::abs(spectrum[0] - std::complex<double>(8, 0)) < 1e-12);
  for (std::size_t k = 1; k < spectrum.size(); ++k) CHECK(std::abs(spectrum[k]) < 1e-12);
}

TEST_CASE("STFT: silence stays zero, a 1 kHz frame peaks at bin 64 like the direct DFT") {
  const PowerSpectrogram zero = stft_power(Waveform{std::vector<double>(80000, 0.0), 16000}, 1024, 400, 1024);
  for (double v : zero.power) REQUIRE(v == 0.0);

  // One full frame: the middle STFT frame of a 1 kHz tone against the direct
  // DFT of the same windowed samples.
  const Waveform tone = sine(1000, 16000, 1.0);
  const PowerSpectrogram p = stft_power(tone, 1024, 400, 1024);
  const std::size_t t = 20;
  const auto row = std::span<const double>(p.power).subspan(t * p.bins, p.bins);
  CHECK(std::max_element(row.begin(), row.end()) - row.begin() == 64);

  std::vector<double> frame(1024);
  const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * 400) - 512;
  for (std::size_t n = 0; n < 1024; ++n) {
    const double hann = 0.5 - 0.5 * std::cos(2 * kPi * double(n) / 1024);
    frame[n] = hann * tone.samples[static_cast<std::size_t>(start + static_cast<std::ptrdiff_t>(n))];
  }
  const auto direct = naive_dft(frame);
  double peak = 0;
  for (std::size_t k = 0; k < p.bins; ++k) peak = std::max(peak, std::norm(direct[k]));
  for (std::size_t k = 0; k < p.bins; ++k) CHECK(std::abs(row[k] - std::norm(direct[k])) / peak < 1e-6);
}

TEST_CASE("mel filterbank: coverage and projection of a flat spectrum") {
  CHECK(hz_to_mel(700) == doctest::Approx(781.17).epsilon(1e-5));
  const MelFilterbank fb = mel_filterbank(64, 1024, 16000, 0, 8000);
  std::vector<double> row_sums(fb.n_mels, 0.0);
  for (std::size_t k = 0; k < fb.bins; ++k) {
    int covering = 0;
    for (std::size_t m = 0; m < fb.n_mels; ++m) {
      covering += fb.at(m, k) > 0;
      row_sums[m] += fb.at(m, k);
    }
    CHECK(covering <= 2);
  }
  for (double s : row_sums) CHECK(s > 0);

  // Flat unit power: each band's log-Mel value is ln(row sum + floor).
  PowerSpectrogram flat{1, fb.bins, std::vector<double>(fb.bins, 1.0)};
  const LogMelSpectrogram lm = log_mel(flat, fb);
  for (std::size_t m = 0; m < fb.n_mels; ++m) CHECK(lm.at(0, m) == doctest::Approx(std::log(row_sums[m] + 1e-10)));
}
