#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "fpam/frontend.hpp"

namespace fpam {

// Features as stored on disk and fed to training: T x M float32, row-major.
struct FeatureMap {
  std::size_t frames = 0;
  std::size_t mels = 0;
  std::vector<float> data;
};

FeatureMap to_feature_map(const LogMelSpectrogram& spec);

// Binary cache layout: magic "FPAF", u32 version = 1, u32 T, u32 M, then
// T*M little-endian float32 values.
std::vector<std::uint8_t> encode_feature_cache(const FeatureMap& features);
FeatureMap decode_feature_cache(std::span<const std::uint8_t> bytes);
void write_feature_cache(const std::filesystem::path& path, const FeatureMap& features);
FeatureMap read_feature_cache(const std::filesystem::path& path);

// 64-bit FNV-1a over the file bytes followed by the frontend parameter key.
std::uint64_t content_hash(std::span<const std::uint8_t> bytes, std::string_view params_key);

// <cache_dir>/<stem>.<16 hex digits>.fpaf
std::filesystem::path cache_path(const std::filesystem::path& cache_dir, const std::filesystem::path& wav_path,
                                 std::uint64_t hash);

struct CachedFeatures {
  FeatureMap features;
  std::filesystem::path path;
  bool hit = false;
};

// Loads the cached features for `wav_path`, computing and writing them when
// no entry exists for the current file content and parameters.
CachedFeatures featurize_cached(const std::filesystem::path& wav_path, const FrontendParams& params,
                                const std::filesystem::path& cache_dir);

}  // namespace fpam
