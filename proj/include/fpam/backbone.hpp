#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fpam/layers.hpp"

namespace fpam {

// Residual trunk. Stage strides are (1, 2, 2, 2); the stem is a 7x7 stride-2
// convolution with padding 3 and no max-pool, so a 1 x 201 x 64 input gives
// Res-2 at 101 x 32.
struct BackboneConfig {
  std::string name;
  std::size_t input_channels = 1;
  std::size_t stem_channels = 64;
  std::array<std::size_t, 4> stage_channels{};
  std::array<std::size_t, 4> blocks{};
  std::size_t expansion = 1;  // 1 = basic blocks, > 1 = bottleneck blocks

  // "paper50": 256/512/1024/2048, bottlenecks x (3, 4, 6, 3), expansion 4.
  // "tiny": 16/32/64/128, one basic block per stage.
  static BackboneConfig preset(std::string_view name);
  void validate() const;
};

struct FeaturePyramid {
  Tensor stem;  // Conv1 output
  Tensor c2, c3, c4, c5;
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, ParamStore& store, Rng& rng, const std::string& prefix = "backbone");

  // x: N x input_channels x H x W with H >= 32 and W >= 16.
  FeaturePyramid forward(const Tensor& x) const;
  const BackboneConfig& config() const { return config_; }

 private:
  struct Block {
    Conv2dLayer conv1, conv2, conv3;
    Conv2dLayer projection;
    bool bottleneck = false;
    bool project = false;
  };

  Tensor run_block(const Block& block, const Tensor& x) const;

  BackboneConfig config_;
  Conv2dLayer stem_;
  std::array<std::vector<Block>, 4> stages_;
};

// Registers a freshly initialized backbone in `store`, seeded by `seed`.
Backbone build_backbone(const BackboneConfig& config, std::uint64_t seed, ParamStore& store);

}  // namespace fpam
