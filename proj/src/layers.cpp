#include "fpam/layers.hpp"

#include <cmath>
#include <vector>

namespace fpam {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Real> values(shape.numel());
  for (auto& v : values) v = static_cast<Real>(gain * dist(rng));
  return Tensor(std::move(shape), std::move(values));
}

Conv2dLayer Conv2dLayer::create(ParamStore& store, const std::string& name, std::size_t in_channels,
                                std::size_t out_channels, std::size_t kernel, std::size_t stride,
                                std::size_t padding, Rng& rng, double gain) {
  Conv2dLayer layer;
  layer.weight = store.add(name + ".weight", he_uniform(Shape{out_channels, in_channels, kernel, kernel},
                                                        in_channels * kernel * kernel, rng, gain));
  layer.bias = store.add(name + ".bias", Tensor(Shape{out_channels}));
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

LinearLayer LinearLayer::create(ParamStore& store, const std::string& name, std::size_t in_features,
                                std::size_t out_features, Rng& rng) {
  LinearLayer layer;
  // sqrt(6 / D) * 1/sqrt(6) = 1/sqrt(D)
  layer.weight = store.add(name + ".weight",
                           he_uniform(Shape{in_features, out_features}, in_features, rng, 1.0 / std::sqrt(6.0)));
  layer.bias = store.add(name + ".bias", Tensor(Shape{out_features}));
  return layer;
}

}  // namespace fpam
