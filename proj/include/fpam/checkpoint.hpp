#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fpam/frontend.hpp"
#include "fpam/model.hpp"

namespace fpam {

// Layout: magic "FPAM", u32 version = 1, u32 parameter count, then per
// parameter u16 name length, name bytes, u8 rank, rank x u32 extents and the
// values as little-endian float32.
std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store);
// Overwrites the values of `store` in place. Every stored name must exist with
// identical extents and every parameter must be present.
void decode_checkpoint(std::span<const std::uint8_t> bytes, ParamStore& store);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
void load_checkpoint(const std::filesystem::path& path, ParamStore& store);

// Everything besides the weights that is needed to rebuild and run a model.
struct CheckpointInfo {
  ModelConfig model;
  double input_mean = 0.0;
  double input_std = 1.0;
  FrontendParams frontend;
  std::vector<std::string> class_names;
  int fold = 0;
  std::size_t epoch = 0;
  double test_accuracy = 0.0;
};

// <checkpoint>.json
std::filesystem::path info_path(const std::filesystem::path& checkpoint);
void write_checkpoint_info(const std::filesystem::path& checkpoint, const CheckpointInfo& info);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& checkpoint);

}  // namespace fpam
