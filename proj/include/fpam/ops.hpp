#pragma once

#include <cstddef>
#include <span>

#include "fpam/tensor.hpp"

namespace fpam {

enum class PoolKind { kMax, kAvg };
enum class ResampleMode { kNearestUp, kAdaptiveAvgDown };

struct Window {
  std::size_t height;
  std::size_t width;
};

// N x Cin x H x W  (*)  Cout x Cin x kh x kw  ->  N x Cout x H' x W', zero
// padded, H' = floor((H + 2p - kh) / stride) + 1. `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

// Sliding-window pooling without padding. Max routes its gradient to the first
// row-major maximum of each window.
Tensor pool2d(const Tensor& input, PoolKind kind, Window window, std::size_t stride);

// Per-pixel reduction across channels: N x C x H x W -> N x 1 x H x W.
Tensor channel_reduce(const Tensor& input, PoolKind kind);

// Whole-plane reduction per channel: N x C x H x W -> N x C x 1 x 1.
Tensor global_pool(const Tensor& input, PoolKind kind);

// Nearest-neighbour upsampling (src = floor(dst * H / H*)) or adaptive average
// downsampling over bins [floor(i*H/H*), ceil((i+1)*H/H*)).
Tensor resample_spatial(const Tensor& input, std::size_t target_height, std::size_t target_width,
                        ResampleMode mode);

Tensor concat_channels(std::span<const Tensor> parts);
Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t count);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor scale(const Tensor& x, Real factor);

// Elementwise with per-axis broadcasting: operands have equal rank and every
// axis is either equal or 1 in one of them (N x C x 1 x 1 gates, N x 1 x H x W
// spatial maps).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// N x D times D x K plus K.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Mean over the batch of -sum(target * log_softmax(logits)). Target rows must
// sum to 1 within 1e-6.
Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& target_probs);

// Scalar sum of all elements, shape {1}.
Tensor sum(const Tensor& x);

// N x C x 1 x 1 (or any N x ...) -> N x (product of the rest).
Tensor flatten(const Tensor& x);

Tensor ones_like(const Tensor& x);

}  // namespace fpam
