#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "fpam/ops.hpp"
#include "fpam/optim.hpp"

namespace fpam {

using Rng = std::mt19937_64;

// He-uniform: gain * U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0);

struct Conv2dLayer {
  Tensor weight;  // Cout x Cin x k x k
  Tensor bias;    // Cout
  std::size_t stride = 1;
  std::size_t padding = 0;

  // Registers <name>.weight and <name>.bias; bias starts at zero. The rng
  // stream advances by the same amount for every gain.
  static Conv2dLayer create(ParamStore& store, const std::string& name, std::size_t in_channels,
                            std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t padding,
                            Rng& rng, double gain = 1.0);

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
  std::size_t out_channels() const { return weight.dim(0); }
};

struct LinearLayer {
  Tensor weight;  // D x K
  Tensor bias;    // K

  // Weights U(-1/sqrt(D), 1/sqrt(D)), zero bias.
  static LinearLayer create(ParamStore& store, const std::string& name, std::size_t in_features,
                            std::size_t out_features, Rng& rng);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

}  // namespace fpam
