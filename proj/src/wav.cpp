#include "fpam/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "fpam/errors.hpp"

namespace fpam {
namespace {

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::memcmp(b.data() + at, tag, 4) == 0;
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

Waveform parse_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF") || !tag_is(bytes, 8, "WAVE")) {
    throw DataError("wav: missing RIFF/WAVE header");
  }
  bool have_format = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const std::uint32_t size = read_u32(bytes, at + 4);
    const std::size_t body = at + 8;
    if (size > bytes.size() - body) {
      // Tolerate a data chunk whose declared size overruns the file.
      if (!tag_is(bytes, at, "data")) throw DataError("wav: chunk overruns file");
    }
    const std::size_t available = std::min<std::size_t>(size, bytes.size() - body);
    if (tag_is(bytes, at, "fmt ")) {
      if (available < 16) throw DataError("wav: fmt chunk too short");
      std::uint16_t format = read_u16(bytes, body);
      channels = read_u16(bytes, body + 2);
      rate = read_u32(bytes, body + 4);
      bits = read_u16(bytes, body + 14);
      if (format == kFormatExtensible && available >= 26) format = read_u16(bytes, body + 24);
      if (format != kFormatPcm) throw DataError("wav: unsupported encoding " + std::to_string(format) + " (PCM only)");
      if (bits != 16) throw DataError("wav: unsupported bit depth " + std::to_string(bits) + " (16-bit only)");
      if (channels == 0) throw DataError("wav: zero channels");
      if (rate == 0) throw DataError("wav: zero sample rate");
      have_format = true;
    } else if (tag_is(bytes, at, "data")) {
      data = bytes.subspan(body, available);
      have_data = true;
    }
    at = body + available + (available & 1);
  }
  if (!have_format) throw DataError("wav: missing fmt chunk");
  if (!have_data) throw DataError("wav: missing data chunk");

  const std::size_t frame_bytes = 2u * channels;
  const std::size_t frames = data.size() / frame_bytes;
  Waveform wave;
  wave.sample_rate = static_cast<int>(rate);
  wave.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      acc += static_cast<std::int16_t>(read_u16(data, f * frame_bytes + 2 * c)) / 32768.0;
    }
    wave.samples[f] = acc / channels;
  }
  return wave;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Waveform load_wav(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_wav(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_pcm16(std::span<const std::int16_t> interleaved, int channels, int sample_rate) {
  if (channels <= 0 || sample_rate <= 0) throw ContractError("wav: channels and rate must be positive");
  const auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * channels * 2));
  put_u16(out, static_cast<std::uint16_t>(channels * 2));
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (auto s : interleaved) put_u16(out, static_cast<std::uint16_t>(s));
  return out;
}

std::vector<std::uint8_t> encode_wav(const Waveform& wave) {
  std::vector<std::int16_t> pcm(wave.samples.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    const double scaled = std::round(wave.samples[i] * 32768.0);
    pcm[i] = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
  }
  return encode_pcm16(pcm, 1, wave.sample_rate);
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  const auto bytes = encode_wav(wave);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace fpam
