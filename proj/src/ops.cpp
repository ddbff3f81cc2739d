#include "fpam/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fpam/parallel.hpp"

namespace fpam {
namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Samples per weight-gradient partial. Partials are summed in group order, so
// the reduction is identical for every thread count.
constexpr std::size_t kGradGroup = 8;

std::string axis_name(std::size_t axis) {
  static constexpr std::array<const char*, 4> kNames{"N", "C", "H", "W"};
  return axis < kNames.size() ? kNames[axis] : std::to_string(axis);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.shape().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     t.shape().str());
  }
}

struct Dims4 {
  std::size_t n, c, h, w;
  explicit Dims4(const Shape& s) : n(s[0]), c(s[1]), h(s[2]), w(s[3]) {}
  std::size_t plane() const { return h * w; }
};

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w, stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t pixels() const { return out_h * out_w; }
  bool pointwise() const { return kernel_h == 1 && kernel_w == 1 && stride == 1 && padding == 0; }
};

void im2col(const Real* image, const ConvGeometry& g, Real* col) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const Real* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        Real* dst = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
          Real* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(row, row + g.out_w, Real(0));
            continue;
          }
          const Real* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
            row[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? Real(0)
                                                                     : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const Real* col, const ConvGeometry& g, Real* image) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    Real* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const Real* src = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          Real* dst = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
            if (ix >= 0 && ix < static_cast<long>(g.width)) {
              dst[static_cast<std::size_t>(ix)] += src[oy * g.out_w + ox];
            }
          }
        }
      }
    }
  }
}

std::size_t pooled_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t padding,
                          const char* op, std::size_t axis) {
  if (window > in + 2 * padding) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(window) + " exceeds axis " +
                     axis_name(axis) + " extent " + std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - window) / stride + 1;
}

Real clamped_sigmoid(Real x) {
  constexpr Real kLow = std::numeric_limits<Real>::min();
  const Real kHigh = std::nextafter(Real(1), Real(0));
  const Real s = x >= 0 ? Real(1) / (Real(1) + std::exp(-x)) : std::exp(x) / (Real(1) + std::exp(x));
  return std::clamp(s, kLow, kHigh);
}

struct Broadcast {
  std::array<std::size_t, 4> out{1, 1, 1, 1};
  std::array<std::size_t, 4> stride_a{}, stride_b{};
  std::size_t rank = 0;
};

Broadcast broadcast_dims(const Shape& a, const Shape& b, const char* op) {
  if (a.rank() != b.rank()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + a.str() + " vs " + b.str());
  }
  Broadcast bc;
  bc.rank = a.rank();
  const std::size_t offset = 4 - bc.rank;
  std::array<std::size_t, 4> ea{1, 1, 1, 1}, eb{1, 1, 1, 1};
  for (std::size_t axis = 0; axis < bc.rank; ++axis) {
    ea[offset + axis] = a[axis];
    eb[offset + axis] = b[axis];
    if (a[axis] != b[axis] && a[axis] != 1 && b[axis] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast axis " +
                       (bc.rank == 4 ? axis_name(axis) : std::to_string(axis)) + " (" + a.str() +
                       " vs " + b.str() + ")");
    }
  }
  std::size_t sa = 1, sb = 1;
  for (int axis = 3; axis >= 0; --axis) {
    bc.out[axis] = std::max(ea[axis], eb[axis]);
    bc.stride_a[axis] = ea[axis] == 1 ? 0 : sa;
    bc.stride_b[axis] = eb[axis] == 1 ? 0 : sb;
    sa *= ea[axis];
    sb *= eb[axis];
  }
  return bc;
}

Shape broadcast_shape(const Broadcast& bc) {
  std::vector<std::size_t> extents(bc.out.begin() + (4 - bc.rank), bc.out.end());
  return Shape(std::move(extents));
}

template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < bc.out[0]; ++i0) {
    for (std::size_t i1 = 0; i1 < bc.out[1]; ++i1) {
      for (std::size_t i2 = 0; i2 < bc.out[2]; ++i2) {
        for (std::size_t i3 = 0; i3 < bc.out[3]; ++i3, ++o) {
          const std::size_t ia =
              i0 * bc.stride_a[0] + i1 * bc.stride_a[1] + i2 * bc.stride_a[2] + i3 * bc.stride_a[3];
          const std::size_t ib =
              i0 * bc.stride_b[0] + i1 * bc.stride_b[1] + i2 * bc.stride_b[2] + i3 * bc.stride_b[3];
          fn(o, ia, ib);
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const Dims4 in(input.shape());
  const Dims4 k(kernel.shape());
  if (k.c != in.c) {
    throw ShapeError("conv2d: axis C mismatch, input has " + std::to_string(in.c) +
                     " channels but kernel expects " + std::to_string(k.c));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.shape().rank() != 1 || bias.dim(0) != k.n)) {
    throw ShapeError("conv2d: bias must be a vector of " + std::to_string(k.n) + ", got " +
                     bias.shape().str());
  }
  ConvGeometry g{in.n, in.c, in.h, in.w, k.n, k.h, k.w, stride, padding, 0, 0};
  g.out_h = pooled_extent(in.h, k.h, stride, padding, "conv2d", 2);
  g.out_w = pooled_extent(in.w, k.w, stride, padding, "conv2d", 3);

  const std::size_t patch = g.patch();
  const std::size_t pixels = g.pixels();
  const std::size_t in_stride = in.c * in.h * in.w;
  const std::size_t out_stride = g.out_channels * pixels;
  std::vector<Real> out(g.batch * out_stride);
  {
    const Real* x = input.values().data();
    const ConstMatrixMap weights(kernel.values().data(), g.out_channels, patch);
    const Real* b = has_bias ? bias.values().data() : nullptr;
    parallel_for(g.batch, [&](std::size_t n) {
      MatrixMap y(out.data() + n * out_stride, g.out_channels, pixels);
      if (g.pointwise()) {
        y.noalias() = weights * ConstMatrixMap(x + n * in_stride, patch, pixels);
      } else {
        std::vector<Real> col(patch * pixels);
        im2col(x + n * in_stride, g, col.data());
        y.noalias() = weights * ConstMatrixMap(col.data(), patch, pixels);
      }
      if (b != nullptr) {
        for (std::size_t o = 0; o < g.out_channels; ++o) y.row(static_cast<Eigen::Index>(o)).array() += b[o];
      }
    });
  }

  std::vector<Tensor> inputs{input, kernel};
  if (has_bias) inputs.push_back(bias);
  Shape out_shape{g.batch, g.out_channels, g.out_h, g.out_w};
  return detail::make_result(out_shape, std::move(out), inputs, [g, has_bias](detail::Node& self) {
    auto& x_node = *self.inputs[0];
    auto& k_node = *self.inputs[1];
    detail::Node* b_node = has_bias ? self.inputs[2].get() : nullptr;
    const bool need_x = x_node.requires_grad;
    const bool need_k = k_node.requires_grad;
    const bool need_b = b_node != nullptr && b_node->requires_grad;

    const std::size_t patch = g.patch();
    const std::size_t pixels = g.pixels();
    const std::size_t in_stride = g.in_channels * g.height * g.width;
    const std::size_t out_stride = g.out_channels * pixels;
    const std::size_t groups = (g.batch + kGradGroup - 1) / kGradGroup;

    std::vector<Real> k_partial(need_k ? groups * g.out_channels * patch : 0, Real(0));
    std::vector<Real> b_partial(need_b ? groups * g.out_channels : 0, Real(0));
    Real* dx = need_x ? x_node.grad_buffer().data() : nullptr;
    const ConstMatrixMap weights(k_node.value.data(), g.out_channels, patch);
    const Real* x = x_node.value.data();
    const Real* gy = self.grad.data();

    parallel_for(groups, [&](std::size_t group) {
      std::vector<Real> col;
      std::vector<Real> dcol;
      const std::size_t first = group * kGradGroup;
      const std::size_t last = std::min(first + kGradGroup, g.batch);
      for (std::size_t n = first; n < last; ++n) {
        const ConstMatrixMap gout(gy + n * out_stride, g.out_channels, pixels);
        if (need_b) {
          Real* db = b_partial.data() + group * g.out_channels;
          // Plain loop: a vectorized reduction's order depends on buffer alignment.
          const Real* row = gy + n * out_stride;
          for (std::size_t o = 0; o < g.out_channels; ++o, row += pixels) {
            Real acc = 0;
            for (std::size_t p = 0; p < pixels; ++p) acc += row[p];
            db[o] += acc;
          }
        }
        if (need_k) {
          MatrixMap dk(k_partial.data() + group * g.out_channels * patch, g.out_channels, patch);
          if (g.pointwise()) {
            dk.noalias() += gout * ConstMatrixMap(x + n * in_stride, patch, pixels).transpose();
          } else {
            col.resize(patch * pixels);
            im2col(x + n * in_stride, g, col.data());
            dk.noalias() += gout * ConstMatrixMap(col.data(), patch, pixels).transpose();
          }
        }
        if (need_x) {
          if (g.pointwise()) {
            MatrixMap dxn(dx + n * in_stride, patch, pixels);
            dxn.noalias() += weights.transpose() * gout;
          } else {
            dcol.resize(patch * pixels);
            MatrixMap dc(dcol.data(), patch, pixels);
            dc.noalias() = weights.transpose() * gout;
            col2im_add(dcol.data(), g, dx + n * in_stride);
          }
        }
      }
    });

    if (need_k) {
      auto dk = k_node.grad_buffer();
      for (std::size_t group = 0; group < groups; ++group) {
        const Real* part = k_partial.data() + group * dk.size();
        for (std::size_t i = 0; i < dk.size(); ++i) dk[i] += part[i];
      }
    }
    if (need_b) {
      auto db = b_node->grad_buffer();
      for (std::size_t group = 0; group < groups; ++group) {
        const Real* part = b_partial.data() + group * db.size();
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += part[i];
      }
    }
  });
}

Tensor pool2d(const Tensor& input, PoolKind kind, Window window, std::size_t stride) {
  require_rank(input, 4, "pool2d");
  if (stride == 0) throw ContractError("pool2d: stride must be positive");
  if (window.height == 0 || window.width == 0) throw ContractError("pool2d: empty window");
  const Dims4 in(input.shape());
  const std::size_t oh = pooled_extent(in.h, window.height, stride, 0, "pool2d", 2);
  const std::size_t ow = pooled_extent(in.w, window.width, stride, 0, "pool2d", 3);
  const std::size_t planes = in.n * in.c;
  std::vector<Real> out(planes * oh * ow);
  std::vector<std::size_t> argmax(kind == PoolKind::kMax ? out.size() : 0);
  const Real* x = input.values().data();
  const Real inv_area = Real(1) / static_cast<Real>(window.height * window.width);

  for (std::size_t p = 0; p < planes; ++p) {
    const Real* plane = x + p * in.plane();
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t o = (p * oh + oy) * ow + ox;
        std::size_t best = (oy * stride) * in.w + ox * stride;
        Real acc = 0;
        for (std::size_t i = 0; i < window.height; ++i) {
          for (std::size_t j = 0; j < window.width; ++j) {
            const std::size_t idx = (oy * stride + i) * in.w + ox * stride + j;
            if (kind == PoolKind::kMax) {
              if (plane[idx] > plane[best]) best = idx;
            } else {
              acc += plane[idx];
            }
          }
        }
        if (kind == PoolKind::kMax) {
          out[o] = plane[best];
          argmax[o] = p * in.plane() + best;
        } else {
          out[o] = acc * inv_area;
        }
      }
    }
  }

  return detail::make_result(
      Shape{in.n, in.c, oh, ow}, std::move(out), {input},
      [kind, argmax = std::move(argmax), window, stride, in, oh, ow, inv_area](detail::Node& self) {
        auto& x_node = *self.inputs[0];
        if (!x_node.requires_grad) return;
        auto dx = x_node.grad_buffer();
        if (kind == PoolKind::kMax) {
          for (std::size_t o = 0; o < self.grad.size(); ++o) dx[argmax[o]] += self.grad[o];
          return;
        }
        for (std::size_t p = 0; p < in.n * in.c; ++p) {
          for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const Real g = self.grad[(p * oh + oy) * ow + ox] * inv_area;
              for (std::size_t i = 0; i < window.height; ++i) {
                for (std::size_t j = 0; j < window.width; ++j) {
                  dx[p * in.plane() + (oy * stride + i) * in.w + ox * stride + j] += g;
                }
              }
            }
          }
        }
      });
}

Tensor channel_reduce(const Tensor& input, PoolKind kind) {
  require_rank(input, 4, "channel_reduce");
  const Dims4 in(input.shape());
  const std::size_t plane = in.plane();
  std::vector<Real> out(in.n * plane);
  std::vector<std::size_t> argmax(kind == PoolKind::kMax ? out.size() : 0);
  const Real* x = input.values().data();
  for (std::size_t n = 0; n < in.n; ++n) {
    const Real* item = x + n * in.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      if (kind == PoolKind::kMax) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < in.c; ++c) {
          if (item[c * plane + p] > item[best * plane + p]) best = c;
        }
        out[n * plane + p] = item[best * plane + p];
        argmax[n * plane + p] = (n * in.c + best) * plane + p;
      } else {
        Real acc = 0;
        for (std::size_t c = 0; c < in.c; ++c) acc += item[c * plane + p];
        out[n * plane + p] = acc / static_cast<Real>(in.c);
      }
    }
  }
  return detail::make_result(
      Shape{in.n, 1, in.h, in.w}, std::move(out), {input},
      [kind, argmax = std::move(argmax), in](detail::Node& self) {
        auto& x_node = *self.inputs[0];
        if (!x_node.requires_grad) return;
        auto dx = x_node.grad_buffer();
        const std::size_t plane = in.plane();
        if (kind == PoolKind::kMax) {
          for (std::size_t o = 0; o < self.grad.size(); ++o) dx[argmax[o]] += self.grad[o];
          return;
        }
        const Real inv = Real(1) / static_cast<Real>(in.c);
        for (std::size_t n = 0; n < in.n; ++n) {
          for (std::size_t c = 0; c < in.c; ++c) {
            for (std::size_t p = 0; p < plane; ++p) {
              dx[(n * in.c + c) * plane + p] += self.grad[n * plane + p] * inv;
            }
          }
        }
      });
}

Tensor global_pool(const Tensor& input, PoolKind kind) {
  require_rank(input, 4, "global_pool");
  const Dims4 in(input.shape());
  const std::size_t plane = in.plane();
  const std::size_t planes = in.n * in.c;
  std::vector<Real> out(planes);
  std::vector<std::size_t> argmax(kind == PoolKind::kMax ? planes : 0);
  const Real* x = input.values().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* v = x + p * plane;
    if (kind == PoolKind::kMax) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < plane; ++i) {
        if (v[i] > v[best]) best = i;
      }
      out[p] = v[best];
      argmax[p] = p * plane + best;
    } else {
      Real acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += v[i];
      out[p] = acc / static_cast<Real>(plane);
    }
  }
  return detail::make_result(
      Shape{in.n, in.c, 1, 1}, std::move(out), {input},
      [kind, argmax = std::move(argmax), plane](detail::Node& self) {
        auto& x_node = *self.inputs[0];
        if (!x_node.requires_grad) return;
        auto dx = x_node.grad_buffer();
        if (kind == PoolKind::kMax) {
          for (std::size_t p = 0; p < self.grad.size(); ++p) dx[argmax[p]] += self.grad[p];
          return;
        }
        const Real inv = Real(1) / static_cast<Real>(plane);
        for (std::size_t p = 0; p < self.grad.size(); ++p) {
          const Real g = self.grad[p] * inv;
          for (std::size_t i = 0; i < plane; ++i) dx[p * plane + i] += g;
        }
      });
}

Tensor resample_spatial(const Tensor& input, std::size_t target_height, std::size_t target_width,
                        ResampleMode mode) {
  require_rank(input, 4, "resample_spatial");
  if (target_height == 0 || target_width == 0) throw ShapeError("resample_spatial: empty target");
  const Dims4 in(input.shape());
  const std::size_t th = target_height, tw = target_width;
  if (mode == ResampleMode::kNearestUp && (th < in.h || tw < in.w)) {
    throw ContractError("resample_spatial: nearest_up target " + std::to_string(th) + "x" +
                        std::to_string(tw) + " is smaller than source " + std::to_string(in.h) + "x" +
                        std::to_string(in.w));
  }
  if (mode == ResampleMode::kAdaptiveAvgDown && (th > in.h || tw > in.w)) {
    throw ContractError("resample_spatial: adaptive_avg_down target " + std::to_string(th) + "x" +
                        std::to_string(tw) + " is larger than source " + std::to_string(in.h) + "x" +
                        std::to_string(in.w));
  }

  // Each output pixel reads the rectangle [r0, r1) x [c0, c1) of its plane.
  struct Bin {
    std::size_t begin, end;
  };
  auto bins = [mode](std::size_t src, std::size_t dst) {
    std::vector<Bin> out(dst);
    for (std::size_t i = 0; i < dst; ++i) {
      if (mode == ResampleMode::kNearestUp) {
        const std::size_t s = i * src / dst;
        out[i] = {s, s + 1};
      } else {
        out[i] = {i * src / dst, ((i + 1) * src + dst - 1) / dst};
      }
    }
    return out;
  };
  const auto rows = bins(in.h, th);
  const auto cols = bins(in.w, tw);
  const std::size_t planes = in.n * in.c;
  std::vector<Real> out(planes * th * tw);
  const Real* x = input.values().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* plane = x + p * in.plane();
    for (std::size_t i = 0; i < th; ++i) {
      for (std::size_t j = 0; j < tw; ++j) {
        Real acc = 0;
        for (std::size_t r = rows[i].begin; r < rows[i].end; ++r) {
          for (std::size_t c = cols[j].begin; c < cols[j].end; ++c) acc += plane[r * in.w + c];
        }
        const auto count = (rows[i].end - rows[i].begin) * (cols[j].end - cols[j].begin);
        out[(p * th + i) * tw + j] = acc / static_cast<Real>(count);
      }
    }
  }
  return detail::make_result(Shape{in.n, in.c, th, tw}, std::move(out), {input},
                             [rows, cols, in, th, tw](detail::Node& self) {
                               auto& x_node = *self.inputs[0];
                               if (!x_node.requires_grad) return;
                               auto dx = x_node.grad_buffer();
                               for (std::size_t p = 0; p < in.n * in.c; ++p) {
                                 for (std::size_t i = 0; i < th; ++i) {
                                   for (std::size_t j = 0; j < tw; ++j) {
                                     const auto count = (rows[i].end - rows[i].begin) *
                                                        (cols[j].end - cols[j].begin);
                                     const Real g =
                                         self.grad[(p * th + i) * tw + j] / static_cast<Real>(count);
                                     for (std::size_t r = rows[i].begin; r < rows[i].end; ++r) {
                                       for (std::size_t c = cols[j].begin; c < cols[j].end; ++c) {
                                         dx[p * in.plane() + r * in.w + c] += g;
                                       }
                                     }
                                   }
                                 }
                               }
                             });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.size() < 2) throw ContractError("concat_channels needs at least two parts");
  for (const auto& part : parts) require_rank(part, 4, "concat_channels");
  const Dims4 first(parts[0].shape());
  std::vector<std::size_t> offsets;
  std::size_t channels = 0;
  for (const auto& part : parts) {
    const Dims4 d(part.shape());
    for (std::size_t axis : {0UL, 2UL, 3UL}) {
      if (part.dim(axis) != parts[0].dim(axis)) {
        throw ShapeError("concat_channels: axis " + axis_name(axis) + " mismatch (" +
                         parts[0].shape().str() + " vs " + part.shape().str() + ")");
      }
    }
    offsets.push_back(channels);
    channels += d.c;
  }
  const std::size_t plane = first.plane();
  std::vector<Real> out(first.n * channels * plane);
  for (std::size_t n = 0; n < first.n; ++n) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::size_t c = parts[k].dim(1);
      const Real* src = parts[k].values().data() + n * c * plane;
      std::copy(src, src + c * plane, out.data() + (n * channels + offsets[k]) * plane);
    }
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return detail::make_result(Shape{first.n, channels, first.h, first.w}, std::move(out), inputs,
                             [offsets, channels, plane, batch = first.n](detail::Node& self) {
                               for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                 auto& part = *self.inputs[k];
                                 if (!part.requires_grad) continue;
                                 auto dx = part.grad_buffer();
                                 const std::size_t c = part.shape[1];
                                 for (std::size_t n = 0; n < batch; ++n) {
                                   const Real* src =
                                       self.grad.data() + (n * channels + offsets[k]) * plane;
                                   Real* dst = dx.data() + n * c * plane;
                                   for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                                 }
                               }
                             });
}

Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t count) {
  require_rank(input, 4, "slice_channels");
  const Dims4 in(input.shape());
  if (count == 0 || begin + count > in.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside axis C of " + input.shape().str());
  }
  const std::size_t plane = in.plane();
  std::vector<Real> out(in.n * count * plane);
  for (std::size_t n = 0; n < in.n; ++n) {
    const Real* src = input.values().data() + (n * in.c + begin) * plane;
    std::copy(src, src + count * plane, out.data() + n * count * plane);
  }
  return detail::make_result(Shape{in.n, count, in.h, in.w}, std::move(out), {input},
                             [in, begin, count](detail::Node& self) {
                               auto& x_node = *self.inputs[0];
                               if (!x_node.requires_grad) return;
                               auto dx = x_node.grad_buffer();
                               const std::size_t plane = in.plane();
                               for (std::size_t n = 0; n < in.n; ++n) {
                                 const Real* src = self.grad.data() + n * count * plane;
                                 Real* dst = dx.data() + (n * in.c + begin) * plane;
                                 for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
                               }
                             });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<Real> out(x.numel());
  const auto v = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamped_sigmoid(v[i]);
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& x_node = *self.inputs[0];
    if (!x_node.requires_grad) return;
    auto dx = x_node.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const Real s = self.value[i];
      dx[i] += self.grad[i] * s * (Real(1) - s);
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<Real> out(x.numel());
  const auto v = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > 0 ? v[i] : Real(0);
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& x_node = *self.inputs[0];
    if (!x_node.requires_grad) return;
    auto dx = x_node.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (x_node.value[i] > 0) dx[i] += self.grad[i];
    }
  });
}

Tensor scale(const Tensor& x, Real factor) {
  std::vector<Real> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= factor;
  return detail::make_result(x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
    auto& x_node = *self.inputs[0];
    if (!x_node.requires_grad) return;
    auto dx = x_node.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * factor;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto bc = broadcast_dims(a.shape(), b.shape(), "add");
  const auto va = a.values();
  const auto vb = b.values();
  const Shape out_shape = broadcast_shape(bc);
  std::vector<Real> out(out_shape.numel());
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = va[ia] + vb[ib]; });
  return detail::make_result(out_shape, std::move(out), {a, b}, [bc](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    Real* da = na.requires_grad ? na.grad_buffer().data() : nullptr;
    Real* db = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (da) da[ia] += self.grad[o];
      if (db) db[ib] += self.grad[o];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto bc = broadcast_dims(a.shape(), b.shape(), "mul");
  const auto va = a.values();
  const auto vb = b.values();
  const Shape out_shape = broadcast_shape(bc);
  std::vector<Real> out(out_shape.numel());
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = va[ia] * vb[ib]; });
  return detail::make_result(out_shape, std::move(out), {a, b}, [bc](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    Real* da = na.requires_grad ? na.grad_buffer().data() : nullptr;
    Real* db = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (da) da[ia] += self.grad[o] * nb.value[ib];
      if (db) db[ib] += self.grad[o] * na.value[ia];
    });
  });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t n = input.dim(0), d = input.dim(1), k = weight.dim(1);
  if (weight.dim(0) != d) {
    throw ShapeError("linear: inner dimension mismatch, input has " + std::to_string(d) +
                     " features but weight has " + std::to_string(weight.dim(0)) + " rows");
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.shape().rank() != 1 || bias.dim(0) != k)) {
    throw ShapeError("linear: bias must be a vector of " + std::to_string(k));
  }
  std::vector<Real> out(n * k);
  MatrixMap y(out.data(), n, k);
  y.noalias() = ConstMatrixMap(input.values().data(), n, d) * ConstMatrixMap(weight.values().data(), d, k);
  if (has_bias) {
    const Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> b(bias.values().data(), k);
    y.rowwise() += b;
  }
  std::vector<Tensor> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result(Shape{n, k}, std::move(out), inputs, [n, d, k, has_bias](detail::Node& self) {
    auto& x_node = *self.inputs[0];
    auto& w_node = *self.inputs[1];
    const ConstMatrixMap g(self.grad.data(), n, k);
    if (x_node.requires_grad) {
      MatrixMap dx(x_node.grad_buffer().data(), n, d);
      dx.noalias() += g * ConstMatrixMap(w_node.value.data(), d, k).transpose();
    }
    if (w_node.requires_grad) {
      MatrixMap dw(w_node.grad_buffer().data(), d, k);
      dw.noalias() += ConstMatrixMap(x_node.value.data(), n, d).transpose() * g;
    }
    if (has_bias && self.inputs[2]->requires_grad) {
      auto db = self.inputs[2]->grad_buffer();
      for (std::size_t row = 0; row < n; ++row) {
        for (std::size_t col = 0; col < k; ++col) db[col] += self.grad[row * k + col];
      }
    }
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& target_probs) {
  require_rank(logits, 2, "softmax_cross_entropy logits");
  if (!(target_probs.shape() == logits.shape())) {
    throw ShapeError("softmax_cross_entropy: target " + target_probs.shape().str() +
                     " does not match logits " + logits.shape().str());
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto z = logits.values();
  const auto t = target_probs.values();
  std::vector<Real> probs(n * k);
  Real total = 0;
  for (std::size_t row = 0; row < n; ++row) {
    Real target_sum = 0;
    for (std::size_t c = 0; c < k; ++c) target_sum += t[row * k + c];
    if (std::abs(target_sum - Real(1)) > Real(1e-6)) {
      throw ContractError("softmax_cross_entropy: target row " + std::to_string(row) + " sums to " +
                          std::to_string(target_sum) + ", expected 1");
    }
    const Real peak = *std::max_element(z.begin() + row * k, z.begin() + (row + 1) * k);
    Real denom = 0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(z[row * k + c] - peak);
    const Real log_denom = std::log(denom);
    for (std::size_t c = 0; c < k; ++c) {
      const Real log_p = z[row * k + c] - peak - log_denom;
      probs[row * k + c] = std::exp(log_p);
      total -= t[row * k + c] * log_p;
    }
  }
  const Real loss = total / static_cast<Real>(n);
  return detail::make_result(Shape{1}, {loss}, {logits}, [probs = std::move(probs), target = target_probs, n, k](detail::Node& self) {
    auto& z_node = *self.inputs[0];
    if (!z_node.requires_grad) return;
    auto dz = z_node.grad_buffer();
    const auto t = target.values();
    const Real g = self.grad[0] / static_cast<Real>(n);
    for (std::size_t row = 0; row < n; ++row) {
      Real target_sum = 0;
      for (std::size_t c = 0; c < k; ++c) target_sum += t[row * k + c];
      for (std::size_t c = 0; c < k; ++c) {
        dz[row * k + c] += g * (probs[row * k + c] * target_sum - t[row * k + c]);
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  Real acc = 0;
  for (Real v : x.values()) acc += v;
  return detail::make_result(Shape{1}, {acc}, {x}, [](detail::Node& self) {
    auto& x_node = *self.inputs[0];
    if (!x_node.requires_grad) return;
    for (auto& g : x_node.grad_buffer()) g += self.grad[0];
  });
}

Tensor flatten(const Tensor& x) {
  const std::size_t n = x.dim(0);
  return x.reshape(Shape{n, x.numel() / n});
}

Tensor ones_like(const Tensor& x) { return Tensor(x.shape(), Real(1)); }

}  // namespace fpam
