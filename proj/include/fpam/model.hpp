#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "fpam/attention.hpp"

namespace fpam {

enum class HeadKind {
  kFpam,      // attention over Res-3/4/5, spatial mean, FC
  kBaseline,  // spatial mean of Res-5, FC
};

HeadKind parse_head(const std::string& name);
std::string head_name(HeadKind head);

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::preset("tiny");
  HeadKind head = HeadKind::kFpam;
  std::size_t num_classes = 0;
  std::size_t aligned_channels = 0;  // 0 selects the Res-4 width

  std::size_t resolved_aligned_channels() const {
    return aligned_channels ? aligned_channels : backbone.stage_channels[2];
  }
};

struct ModelOutput {
  Tensor logits;
  FeaturePyramid pyramid;
  std::optional<AttentionBundle> attention;
};

// Backbone plus classification head; all parameters live in one store whose
// registration order is fixed by the configuration.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  ModelOutput run(const Tensor& x) const;
  Tensor logits(const Tensor& x) const { return run(x).logits; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return config_; }
  const FeaturePyramidAttention* attention() const { return config_.head == HeadKind::kFpam ? &fpam_ : nullptr; }
  void set_unit_gates(bool on) { fpam_.set_unit_gates(on); }

 private:
  ModelConfig config_;
  ParamStore params_;
  Backbone backbone_;
  FeaturePyramidAttention fpam_;
  ClassifierHead head_;
};

}  // namespace fpam
