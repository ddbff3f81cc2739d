#include "fpam/backbone.hpp"

namespace fpam {

BackboneConfig BackboneConfig::preset(std::string_view name) {
  BackboneConfig c;
  c.name = std::string(name);
  if (name == "paper50") {
    c.stem_channels = 64;
    c.stage_channels = {256, 512, 1024, 2048};
    c.blocks = {3, 4, 6, 3};
    c.expansion = 4;
  } else if (name == "tiny") {
    c.stem_channels = 16;
    c.stage_channels = {16, 32, 64, 128};
    c.blocks = {1, 1, 1, 1};
    c.expansion = 1;
  } else {
    throw ConfigError("unknown backbone preset '" + std::string(name) + "' (expected paper50 or tiny)");
  }
  return c;
}

void BackboneConfig::validate() const {
  if (input_channels == 0 || stem_channels == 0 || expansion == 0) {
    throw ConfigError("backbone: channel counts and expansion must be positive");
  }
  for (std::size_t s = 0; s < 4; ++s) {
    if (blocks[s] == 0) throw ConfigError("backbone: every stage needs at least one block");
    if (stage_channels[s] == 0 || stage_channels[s] % expansion != 0) {
      throw ConfigError("backbone: stage width must be a positive multiple of the expansion factor");
    }
  }
}

Backbone::Backbone(const BackboneConfig& config, ParamStore& store, Rng& rng, const std::string& prefix)
    : config_(config) {
  config_.validate();
  stem_ = Conv2dLayer::create(store, prefix + ".stem", config_.input_channels, config_.stem_channels, 7, 2, 3, rng);
  constexpr std::array<std::size_t, 4> kStrides{1, 2, 2, 2};
  // Residual branches start at zero: every block begins as its shortcut.
  constexpr double kResidualGain = 0.0;
  std::size_t in = config_.stem_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t out = config_.stage_channels[s];
    const std::size_t mid = out / config_.expansion;
    for (std::size_t b = 0; b < config_.blocks[s]; ++b) {
      const std::size_t stride = b == 0 ? kStrides[s] : 1;
      const std::string name = prefix + ".res" + std::to_string(s + 2) + "." + std::to_string(b);
      Block block;
      block.bottleneck = config_.expansion > 1;
      if (block.bottleneck) {
        block.conv1 = Conv2dLayer::create(store, name + ".conv1", in, mid, 1, 1, 0, rng);
        block.conv2 = Conv2dLayer::create(store, name + ".conv2", mid, mid, 3, stride, 1, rng);
        block.conv3 = Conv2dLayer::create(store, name + ".conv3", mid, out, 1, 1, 0, rng, kResidualGain);
      } else {
        block.conv1 = Conv2dLayer::create(store, name + ".conv1", in, out, 3, stride, 1, rng);
        block.conv2 = Conv2dLayer::create(store, name + ".conv2", out, out, 3, 1, 1, rng, kResidualGain);
      }
      block.project = in != out || stride != 1;
      if (block.project) block.projection = Conv2dLayer::create(store, name + ".proj", in, out, 1, stride, 0, rng);
      stages_[s].push_back(std::move(block));
      in = out;
    }
  }
}

Tensor Backbone::run_block(const Block& block, const Tensor& x) const {
  Tensor y = relu(block.conv1(x));
  if (block.bottleneck) {
    y = relu(block.conv2(y));
    y = block.conv3(y);
  } else {
    y = block.conv2(y);
  }
  return relu(add(y, block.project ? block.projection(x) : x));
}

FeaturePyramid Backbone::forward(const Tensor& x) const {
  if (x.shape().rank() != 4) throw ShapeError("backbone input must be N x C x H x W, got " + x.shape().str());
  if (x.dim(1) != config_.input_channels) {
    throw ShapeError("backbone: axis C mismatch, expected " + std::to_string(config_.input_channels) +
                     " input channels, got " + std::to_string(x.dim(1)));
  }
  if (x.dim(2) < 32 || x.dim(3) < 16) {
    throw ShapeError("backbone: input " + x.shape().str() + " too small for five halvings (need H >= 32, W >= 16)");
  }
  FeaturePyramid out;
  out.stem = relu(stem_(x));
  Tensor h = out.stem;
  std::array<Tensor*, 4> levels{&out.c2, &out.c3, &out.c4, &out.c5};
  for (std::size_t s = 0; s < 4; ++s) {
    for (const auto& block : stages_[s]) h = run_block(block, h);
    *levels[s] = h;
  }
  return out;
}

Backbone build_backbone(const BackboneConfig& config, std::uint64_t seed, ParamStore& store) {
  Rng rng(seed);
  return Backbone(config, store, rng);
}

}  // namespace fpam
