#include "fpam/feature_cache.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <system_error>

#include "fpam/errors.hpp"

namespace fpam {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr char kMagic[4] = {'F', 'P', 'A', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}

}  // namespace

FeatureMap to_feature_map(const LogMelSpectrogram& spec) {
  FeatureMap out;
  out.frames = spec.frames;
  out.mels = spec.mels;
  out.data.resize(spec.data.size());
  for (std::size_t i = 0; i < spec.data.size(); ++i) out.data[i] = static_cast<float>(spec.data[i]);
  return out;
}

std::vector<std::uint8_t> encode_feature_cache(const FeatureMap& features) {
  if (features.data.size() != features.frames * features.mels) {
    throw ShapeError("feature cache: data size does not match T x M");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(features.frames));
  put_u32(out, static_cast<std::uint32_t>(features.mels));
  const auto* raw = reinterpret_cast<const std::uint8_t*>(features.data.data());
  out.insert(out.end(), raw, raw + features.data.size() * sizeof(float));
  return out;
}

FeatureMap decode_feature_cache(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("feature cache: bad magic");
  }
  if (get_u32(bytes, 4) != kVersion) {
    throw DataError("feature cache: unsupported version " + std::to_string(get_u32(bytes, 4)));
  }
  FeatureMap out;
  out.frames = get_u32(bytes, 8);
  out.mels = get_u32(bytes, 12);
  const std::size_t count = out.frames * out.mels;
  if (bytes.size() != kHeaderBytes + count * sizeof(float)) {
    throw DataError("feature cache: payload size does not match header " + std::to_string(out.frames) + "x" +
                    std::to_string(out.mels));
  }
  out.data.resize(count);
  std::memcpy(out.data.data(), bytes.data() + kHeaderBytes, count * sizeof(float));
  return out;
}

void write_feature_cache(const std::filesystem::path& path, const FeatureMap& features) {
  const auto bytes = encode_feature_cache(features);
  // Write-then-rename so concurrent readers never see a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

FeatureMap read_feature_cache(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_feature_cache(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::uint64_t content_hash(std::span<const std::uint8_t> bytes, std::string_view params_key) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (auto b : bytes) mix(b);
  mix(0);
  for (char c : params_key) mix(static_cast<std::uint8_t>(c));
  return h;
}

std::filesystem::path cache_path(const std::filesystem::path& cache_dir, const std::filesystem::path& wav_path,
                                 std::uint64_t hash) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
  return cache_dir / (wav_path.stem().string() + "." + hex + ".fpaf");
}

CachedFeatures featurize_cached(const std::filesystem::path& wav_path, const FrontendParams& params,
                                const std::filesystem::path& cache_dir) {
  const auto bytes = read_file_bytes(wav_path);
  CachedFeatures result;
  result.path = cache_path(cache_dir, wav_path, content_hash(bytes, params.key()));
  if (std::filesystem::exists(result.path)) {
    result.features = read_feature_cache(result.path);
    result.hit = true;
    return result;
  }
  Waveform wave;
  try {
    wave = parse_wav(bytes);
  } catch (const DataError& e) {
    throw DataError(wav_path.string() + ": " + e.what());
  }
  const auto spec = extract_log_mel(wave, params);
  for (double v : spec.data) {
    if (!std::isfinite(v)) throw NumericError(wav_path.string() + ": non-finite log-Mel value");
  }
  result.features = to_feature_map(spec);
  std::filesystem::create_directories(cache_dir);
  write_feature_cache(result.path, result.features);
  return result;
}

}  // namespace fpam
