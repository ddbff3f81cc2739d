#include "fpam/model.hpp"

namespace fpam {
HeadKind parse_head(const std::string& name) {
  if (name == "fpam") return HeadKind::kFpam;
  if (name == "baseline") return HeadKind::kBaseline;
  throw ConfigError("unknown head '" + name + "' (expected fpam or baseline)");
}

std::string head_name(HeadKind head) { return head == HeadKind::kFpam ? "fpam" : "baseline"; }

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(seed);
  backbone_ = Backbone(config_.backbone, params_, rng);
  const auto& stages = config_.backbone.stage_channels;
  if (config_.head == HeadKind::kFpam) {
    FpamConfig fc;
    fc.in_channels = {stages[1], stages[2], stages[3]};
    fc.aligned_channels = config_.resolved_aligned_channels();
    fpam_ = FeaturePyramidAttention(fc, params_, rng);
    head_ = ClassifierHead(params_, "head.fc", fc.aligned_channels, config_.num_classes, rng);
  } else {
    head_ = ClassifierHead(params_, "head.fc", stages[3], config_.num_classes, rng);
  }
}

ModelOutput Model::run(const Tensor& x) const {
  ModelOutput out;
  out.pyramid = backbone_.forward(x);
  if (config_.head == HeadKind::kFpam) {
    out.attention = fpam_.forward(out.pyramid);
    out.logits = head_.forward(out.attention->f_fpam);
  } else {
    out.logits = head_.forward(out.pyramid.c5);
  }
  return out;
}

}  // namespace fpam
