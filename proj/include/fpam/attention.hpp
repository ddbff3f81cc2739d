#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "fpam/backbone.hpp"

namespace fpam {

// Scales fed to the attention module, finest first: Res-3, Res-4, Res-5.
constexpr std::size_t kNumScales = 3;
constexpr std::array<const char*, kNumScales> kScaleNames{"res3", "res4", "res5"};

struct FpamConfig {
  std::array<std::size_t, kNumScales> in_channels{};  // widths of Res-3, Res-4, Res-5
  std::size_t aligned_channels = 0;                   // must be even
  // Test hook: every sigmoid gate is replaced by the constant 1.
  bool unit_gates = false;
};

// Res-3/4/5 after the per-level 1x1 alignment convolutions.
struct AlignedPyramid {
  Tensor f_m3, f_m4, f_m5;
};

struct SamOutput {
  Tensor f_s;   // N x 1 x H x W, in (0, 1)
  Tensor f_sa;  // N x C x H x W
};

struct PsaOutput {
  std::array<SamOutput, kNumScales> sam;          // at native resolution
  std::array<Tensor, kNumScales> at_middle;       // F_sa3', F_sa4, F_sa5' at the Res-4 grid
};

struct AttentionBundle {
  std::array<Tensor, kNumScales> f_s;
  std::array<Tensor, kNumScales> f_sa;  // resampled to the Res-4 grid
  Tensor f_ca;                          // N x C x 1 x 1
  Tensor f_fpam;                        // N x C x H4 x W4
};

// One spatial attention block: four single-channel branches (channel max,
// channel mean, 3x3 conv, 1x1 conv) concatenated, refined by a 3x3 conv and
// squashed by a sigmoid into F_s; F_sa = F_m * F_s broadcast over channels.
class SpatialAttention {
 public:
  SpatialAttention() = default;
  SpatialAttention(ParamStore& store, const std::string& name, std::size_t channels, Rng& rng);

  SamOutput forward(const Tensor& f_m, bool unit_gate) const;

 private:
  Conv2dLayer conv3x3_, conv1x1_, refine_;
};

class FeaturePyramidAttention {
 public:
  FeaturePyramidAttention() = default;
  FeaturePyramidAttention(const FpamConfig& config, ParamStore& store, Rng& rng, const std::string& prefix = "fpam");

  AlignedPyramid dim_align(const FeaturePyramid& pyramid) const;
  SamOutput sam_forward(std::size_t scale, const Tensor& f_m) const;
  // Per-scale SAM, then the finer map is average-pooled and the coarser one
  // nearest-upsampled onto the middle (Res-4) grid.
  PsaOutput psa_forward(const AlignedPyramid& aligned) const;
  // Channel gate from the concatenated pyramid: half the aligned width from a
  // 1x1 conv, half from a 3x3 conv, then sigmoid(max-pool + avg-pool).
  Tensor pca_forward(const std::array<Tensor, kNumScales>& maps) const;
  AttentionBundle forward(const FeaturePyramid& pyramid) const;

  const FpamConfig& config() const { return config_; }
  void set_unit_gates(bool on) { config_.unit_gates = on; }

 private:
  FpamConfig config_;
  std::array<Conv2dLayer, kNumScales> align_;
  std::array<SpatialAttention, kNumScales> sam_;
  Conv2dLayer fuse1x1_, fuse3x3_;
};

// Mean of the three channel-gated maps.
Tensor fpam_fuse(const std::array<Tensor, kNumScales>& maps, const Tensor& f_ca);

// Spatial mean then a linear layer: N x C x H x W -> N x K.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(ParamStore& store, const std::string& name, std::size_t channels, std::size_t num_classes, Rng& rng);

  Tensor forward(const Tensor& features) const;
  const LinearLayer& fc() const { return fc_; }

 private:
  LinearLayer fc_;
};

}  // namespace fpam
