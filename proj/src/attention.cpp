#include "fpam/attention.hpp"

namespace fpam {
namespace {

void require_same_dims(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace

SpatialAttention::SpatialAttention(ParamStore& store, const std::string& name, std::size_t channels, Rng& rng) {
  conv3x3_ = Conv2dLayer::create(store, name + ".conv3x3", channels, 1, 3, 1, 1, rng);
  conv1x1_ = Conv2dLayer::create(store, name + ".conv1x1", channels, 1, 1, 1, 0, rng);
  refine_ = Conv2dLayer::create(store, name + ".refine", 4, 1, 3, 1, 1, rng);
}

SamOutput SpatialAttention::forward(const Tensor& f_m, bool unit_gate) const {
  if (f_m.shape().rank() != 4 || f_m.dim(1) != conv1x1_.weight.dim(1)) {
    throw ShapeError("spatial attention expects N x " + std::to_string(conv1x1_.weight.dim(1)) +
                     " x H x W, got " + f_m.shape().str());
  }
  SamOutput out;
  if (unit_gate) {
    out.f_s = Tensor(Shape{f_m.dim(0), 1, f_m.dim(2), f_m.dim(3)}, Real(1));
  } else {
    const std::array<Tensor, 4> branches{channel_reduce(f_m, PoolKind::kMax), channel_reduce(f_m, PoolKind::kAvg),
                                         conv3x3_(f_m), conv1x1_(f_m)};
    out.f_s = sigmoid(refine_(concat_channels(branches)));
  }
  out.f_sa = mul(f_m, out.f_s);
  return out;
}

FeaturePyramidAttention::FeaturePyramidAttention(const FpamConfig& config, ParamStore& store, Rng& rng,
                                                 const std::string& prefix)
    : config_(config) {
  const std::size_t c = config_.aligned_channels;
  if (c == 0 || c % 2 != 0) {
    throw ConfigError("attention: aligned channel count must be positive and even, got " + std::to_string(c));
  }
  for (std::size_t s = 0; s < kNumScales; ++s) {
    align_[s] = Conv2dLayer::create(store, prefix + ".align." + kScaleNames[s], config_.in_channels[s], c, 1, 1, 0, rng);
  }
  for (std::size_t s = 0; s < kNumScales; ++s) {
    sam_[s] = SpatialAttention(store, prefix + ".sam." + kScaleNames[s], c, rng);
  }
  fuse1x1_ = Conv2dLayer::create(store, prefix + ".pca.conv1x1", kNumScales * c, c / 2, 1, 1, 0, rng);
  fuse3x3_ = Conv2dLayer::create(store, prefix + ".pca.conv3x3", kNumScales * c, c / 2, 3, 1, 1, rng);
}

AlignedPyramid FeaturePyramidAttention::dim_align(const FeaturePyramid& pyramid) const {
  return {align_[0](pyramid.c3), align_[1](pyramid.c4), align_[2](pyramid.c5)};
}

SamOutput FeaturePyramidAttention::sam_forward(std::size_t scale, const Tensor& f_m) const {
  return sam_.at(scale).forward(f_m, config_.unit_gates);
}

PsaOutput FeaturePyramidAttention::psa_forward(const AlignedPyramid& aligned) const {
  const std::array<Tensor, kNumScales> levels{aligned.f_m3, aligned.f_m4, aligned.f_m5};
  const std::size_t h = aligned.f_m4.dim(2);
  const std::size_t w = aligned.f_m4.dim(3);
  if (aligned.f_m3.dim(2) < h || aligned.f_m3.dim(3) < w || aligned.f_m5.dim(2) > h || aligned.f_m5.dim(3) > w) {
    throw ShapeError("pyramid levels are not ordered fine-to-coarse: " + aligned.f_m3.shape().str() + ", " +
                     aligned.f_m4.shape().str() + ", " + aligned.f_m5.shape().str());
  }
  PsaOutput out;
  for (std::size_t s = 0; s < kNumScales; ++s) out.sam[s] = sam_forward(s, levels[s]);
  out.at_middle[0] = resample_spatial(out.sam[0].f_sa, h, w, ResampleMode::kAdaptiveAvgDown);
  out.at_middle[1] = out.sam[1].f_sa;
  out.at_middle[2] = resample_spatial(out.sam[2].f_sa, h, w, ResampleMode::kNearestUp);
  return out;
}

Tensor FeaturePyramidAttention::pca_forward(const std::array<Tensor, kNumScales>& maps) const {
  require_same_dims(maps[0], maps[1], "pyramid channel attention");
  require_same_dims(maps[0], maps[2], "pyramid channel attention");
  const std::size_t n = maps[0].dim(0);
  const std::size_t c = maps[0].dim(1);
  if (config_.unit_gates) return Tensor(Shape{n, c, 1, 1}, Real(1));
  const Tensor fused = concat_channels(maps);
  const std::array<Tensor, 2> refined{fuse1x1_(fused), fuse3x3_(fused)};
  const Tensor fused_refined = concat_channels(refined);
  return sigmoid(add(global_pool(fused_refined, PoolKind::kMax), global_pool(fused_refined, PoolKind::kAvg)));
}

AttentionBundle FeaturePyramidAttention::forward(const FeaturePyramid& pyramid) const {
  const PsaOutput psa = psa_forward(dim_align(pyramid));
  AttentionBundle bundle;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    bundle.f_s[s] = psa.sam[s].f_s;
    bundle.f_sa[s] = psa.at_middle[s];
  }
  bundle.f_ca = pca_forward(psa.at_middle);
  bundle.f_fpam = fpam_fuse(psa.at_middle, bundle.f_ca);
  return bundle;
}

Tensor fpam_fuse(const std::array<Tensor, kNumScales>& maps, const Tensor& f_ca) {
  require_same_dims(maps[0], maps[1], "fpam_fuse");
  require_same_dims(maps[0], maps[2], "fpam_fuse");
  if (f_ca.shape().rank() != 4 || f_ca.dim(1) != maps[0].dim(1)) {
    throw ShapeError("fpam_fuse: channel gate " + f_ca.shape().str() + " does not match " + maps[0].shape().str());
  }
  Tensor total = add(add(mul(maps[0], f_ca), mul(maps[1], f_ca)), mul(maps[2], f_ca));
  return scale(total, Real(1) / Real(3));
}

ClassifierHead::ClassifierHead(ParamStore& store, const std::string& name, std::size_t channels,
                               std::size_t num_classes, Rng& rng) {
  if (num_classes == 0) throw ConfigError("classifier head needs at least one class");
  fc_ = LinearLayer::create(store, name, channels, num_classes, rng);
}

Tensor ClassifierHead::forward(const Tensor& features) const {
  return fc_(flatten(global_pool(features, PoolKind::kAvg)));
}

}  // namespace fpam
