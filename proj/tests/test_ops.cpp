#include <doctest.h>

#include <array>
#include <cmath>

#include "fpam/errors.hpp"
#include "fpam/ops.hpp"
#include "test_util.hpp"

using namespace fpam;
using fpam::test::max_abs_diff;
using fpam::test::random_tensor;

namespace {

// Direct six-loop convolution.
std::vector<double> naive_conv(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride,
                               std::size_t pad) {
  const auto n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const auto oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * co * oh * ow);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = b.defined() ? b.values()[o] : 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx) {
                const long sy = long(y * stride + dy) - long(pad), sx = long(xo * stride + dx) - long(pad);
                if (sy < 0 || sx < 0 || sy >= long(h) || sx >= long(w)) continue;
                acc += x.at({in, c, std::size_t(sy), std::size_t(sx)}) * k.at({o, c, dy, dx});
              }
          out[((in * co + o) * oh + y) * ow + xo] = acc;
        }
  return out;
}

void check_close(std::span<const Real> got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol);
}

}  // namespace

TEST_CASE("conv2d: stem geometry 1x1x201x64 with 7x7 stride 2 pad 3") {
  Tensor x(Shape{1, 1, 201, 64});
  Tensor k(Shape{64, 1, 7, 7});
  CHECK(conv2d(x, k, Tensor(), 2, 3).shape() == Shape({1, 64, 101, 32}));
}

TEST_CASE("conv2d: zero input yields the bias of each channel") {
  Tensor x(Shape{1, 2, 6, 5});
  Tensor k = random_tensor(Shape{3, 2, 3, 3}, 1);
  Tensor b(Shape{3}, std::vector<Real>{0.5, -1.0, 2.0});
  Tensor y = conv2d(x, k, b, 1, 1);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 5; ++j) CHECK(y.at({0, c, i, j}) == b.values()[c]);
}

TEST_CASE("conv2d matches direct convolution") {
  SUBCASE("1x1x5x5, 3x3, stride 1, pad 1") {
    Tensor x = random_tensor(Shape{1, 1, 5, 5}, 2);
    Tensor k = random_tensor(Shape{1, 1, 3, 3}, 3);
    check_close(conv2d(x, k, Tensor(), 1, 1).values(), naive_conv(x, k, Tensor(), 1, 1), 1e-12);
  }
  SUBCASE("batched, multi-channel, stride 2, pad 2, rectangular") {
    Tensor x = random_tensor(Shape{3, 4, 9, 7}, 4);
    Tensor k = random_tensor(Shape{5, 4, 3, 3}, 5);
    Tensor b = random_tensor(Shape{5}, 6);
    check_close(conv2d(x, k, b, 2, 2).values(), naive_conv(x, k, b, 2, 2), 1e-12);
  }
  SUBCASE("pointwise") {
    Tensor x = random_tensor(Shape{2, 6, 4, 3}, 7);
    Tensor k = random_tensor(Shape{3, 6, 1, 1}, 8);
    Tensor b = random_tensor(Shape{3}, 9);
    check_close(conv2d(x, k, b, 1, 0).values(), naive_conv(x, k, b, 1, 0), 1e-12);
    check_close(conv2d(x, k, b, 2, 0).values(), naive_conv(x, k, b, 2, 0), 1e-12);
  }
}

TEST_CASE("conv2d shape errors") {
  CHECK_THROWS_AS(conv2d(Tensor(Shape{1, 2, 5, 5}), Tensor(Shape{1, 3, 3, 3}), Tensor(), 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor(Shape{1, 1, 2, 2}), Tensor(Shape{1, 1, 5, 5}), Tensor(), 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor(Shape{1, 1, 5, 5}), Tensor(Shape{2, 1, 3, 3}), Tensor(Shape{3}), 1, 0), ShapeError);
}

TEST_CASE("conv2d output shape over randomized geometries") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t h = 1 + rng() % 12, w = 1 + rng() % 12, k = 1 + rng() % 4, s = 1 + rng() % 3, p = rng() % 3;
    if (k > h + 2 * p || k > w + 2 * p) continue;
    Tensor y = conv2d(Tensor(Shape{1, 2, h, w}), Tensor(Shape{3, 2, k, k}), Tensor(), s, p);
    CHECK(y.dim(2) == (h + 2 * p - k) / s + 1);
    CHECK(y.dim(3) == (w + 2 * p - k) / s + 1);
  }
}

TEST_CASE("pool2d: max over 1..16 with 2x2 windows") {
  std::vector<Real> v(16);
  for (int i = 0; i < 16; ++i) v[i] = i + 1;
  Tensor y = pool2d(Tensor(Shape{1, 1, 4, 4}, v), PoolKind::kMax, {2, 2}, 2);
  CHECK(std::vector<Real>(y.values().begin(), y.values().end()) == std::vector<Real>{6, 8, 14, 16});
}

TEST_CASE("pool2d: average and constant inputs") {
  Tensor y = pool2d(Tensor(Shape{1, 1, 2, 2}, std::vector<Real>{1, 3, 5, 7}), PoolKind::kAvg, {2, 2}, 2);
  CHECK(y.item() == 4.0);
  for (PoolKind kind : {PoolKind::kMax, PoolKind::kAvg}) {
    Tensor c = pool2d(Tensor(Shape{1, 2, 5, 5}, 2.5), kind, {3, 2}, 1);
    for (Real v : c.values()) CHECK(v == 2.5);
  }
  CHECK_THROWS_AS(pool2d(Tensor(Shape{1, 1, 2, 2}), PoolKind::kMax, {3, 3}, 1), ShapeError);
}

TEST_CASE("pool2d: max gradient goes to the first maximum of each window") {
  Tensor x(Shape{1, 1, 2, 2}, std::vector<Real>{1, 5, 5, 2});
  x.set_requires_grad();
  backward(sum(pool2d(x, PoolKind::kMax, {2, 2}, 2)));
  CHECK(std::vector<Real>(x.grad().begin(), x.grad().end()) == std::vector<Real>{0, 1, 0, 0});
}

TEST_CASE("channel_reduce") {
  Tensor one = random_tensor(Shape{1, 1, 3, 3}, 10);
  CHECK(max_abs_diff(channel_reduce(one, PoolKind::kMax).values(), one.values()) == 0.0);
  CHECK(max_abs_diff(channel_reduce(one, PoolKind::kAvg).values(), one.values()) == 0.0);

  Tensor px(Shape{1, 3, 1, 1}, std::vector<Real>{2, 4, 6});
  CHECK(channel_reduce(px, PoolKind::kAvg).item() == 4.0);
  CHECK(channel_reduce(px, PoolKind::kMax).item() == 6.0);

  Tensor x = random_tensor(Shape{1, 8, 5, 5}, 11);
  Tensor y = channel_reduce(x, PoolKind::kMax);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double best = -1e300;
      for (std::size_t c = 0; c < 8; ++c) best = std::max(best, double(x.at({0, c, i, j})));
      CHECK(y.at({0, 0, i, j}) == best);
    }
}

TEST_CASE("global_pool") {
  CHECK(global_pool(Tensor(Shape{1, 1024, 26, 8}), PoolKind::kAvg).shape() == Shape({1, 1024, 1, 1}));
  for (PoolKind kind : {PoolKind::kMax, PoolKind::kAvg}) {
    const Tensor pooled = global_pool(Tensor(Shape{2, 3, 4, 4}, -1.5), kind);
    for (Real v : pooled.values()) CHECK(v == -1.5);
  }
  Tensor x = random_tensor(Shape{1, 4, 3, 3}, 12);
  Tensor mx = global_pool(x, PoolKind::kMax), av = global_pool(x, PoolKind::kAvg);
  for (std::size_t c = 0; c < 4; ++c) {
    double best = -1e300, total = 0;
    for (std::size_t k = 0; k < 9; ++k) {
      const double v = x.values()[c * 9 + k];
      best = std::max(best, v);
      total += v;
    }
    CHECK(mx.values()[c] == best);
    CHECK(av.values()[c] == doctest::Approx(total / 9).epsilon(1e-14));
  }
}

TEST_CASE("resample_spatial: nearest 2x replicates each pixel") {
  Tensor x = random_tensor(Shape{1, 3, 13, 4}, 13);
  Tensor y = resample_spatial(x, 26, 8, ResampleMode::kNearestUp);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 26; ++i)
      for (std::size_t j = 0; j < 8; ++j) CHECK(y.at({0, c, i, j}) == x.at({0, c, i / 2, j / 2}));
}

TEST_CASE("resample_spatial: adaptive average 51x16 -> 26x8 matches per-bin means") {
  Tensor x = random_tensor(Shape{1, 2, 51, 16}, 14);
  Tensor y = resample_spatial(x, 26, 8, ResampleMode::kAdaptiveAvgDown);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 26; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        const std::size_t r0 = i * 51 / 26, r1 = ((i + 1) * 51 + 25) / 26;
        const std::size_t c0 = j * 16 / 8, c1 = ((j + 1) * 16 + 7) / 8;
        double total = 0;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t q = c0; q < c1; ++q) total += x.at({0, c, r, q});
        CHECK(y.at({0, c, i, j}) == doctest::Approx(total / double((r1 - r0) * (c1 - c0))).epsilon(1e-14));
      }
}

TEST_CASE("resample_spatial: identity at equal size, direction enforced") {
  Tensor x = random_tensor(Shape{1, 2, 5, 3}, 15);
  for (ResampleMode mode : {ResampleMode::kNearestUp, ResampleMode::kAdaptiveAvgDown}) {
    CHECK(max_abs_diff(resample_spatial(x, 5, 3, mode).values(), x.values()) == 0.0);
  }
  CHECK_THROWS_AS(resample_spatial(x, 4, 3, ResampleMode::kNearestUp), ContractError);
  CHECK_THROWS_AS(resample_spatial(x, 6, 3, ResampleMode::kAdaptiveAvgDown), ContractError);
}

TEST_CASE("concat and slice channels") {
  std::array<Tensor, 3> maps{Tensor(Shape{1, 1024, 26, 8}), Tensor(Shape{1, 1024, 26, 8}),
                             Tensor(Shape{1, 1024, 26, 8})};
  CHECK(concat_channels(maps).shape() == Shape({1, 3072, 26, 8}));

  Tensor x = random_tensor(Shape{2, 3, 2, 2}, 16);
  std::array<Tensor, 2> copies{x, x};
  Tensor both = concat_channels(copies);
  CHECK(max_abs_diff(slice_channels(both, 3, 3).values(), x.values()) == 0.0);
  CHECK(max_abs_diff(slice_channels(both, 0, 3).values(), x.values()) == 0.0);

  std::array<Tensor, 4> singles{random_tensor(Shape{1, 1, 4, 4}, 17), random_tensor(Shape{1, 1, 4, 4}, 18),
                                random_tensor(Shape{1, 1, 4, 4}, 19), random_tensor(Shape{1, 1, 4, 4}, 20)};
  CHECK(concat_channels(singles).dim(1) == 4);

  std::array<Tensor, 2> bad{Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 4, 5})};
  CHECK_THROWS_AS(concat_channels(bad), ShapeError);
  std::array<Tensor, 1> lone{x};
  CHECK_THROWS(concat_channels(lone));
}

TEST_CASE("broadcast multiply") {
  Tensor f = random_tensor(Shape{1, 4, 2, 2}, 21);
  CHECK(max_abs_diff(mul(f, ones_like(f)).values(), f.values()) == 0.0);
  CHECK(max_abs_diff(mul(f, Tensor(Shape{1, 4, 1, 1}, 1.0)).values(), f.values()) == 0.0);

  Tensor gate = random_tensor(Shape{1, 4, 1, 1}, 22);
  Tensor y = mul(f, gate);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(y.at({0, c, i, j}) == f.at({0, c, i, j}) * gate.values()[c]);

  Tensor spatial = random_tensor(Shape{1, 1, 2, 2}, 23);
  Tensor z = mul(f, spatial);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(z.at({0, c, i, j}) == f.at({0, c, i, j}) * spatial.at({0, 0, i, j}));

  CHECK_THROWS_AS(mul(f, Tensor(Shape{1, 3, 1, 1})), ShapeError);
  CHECK_THROWS_AS(add(f, Tensor(Shape{4, 2, 2})), ShapeError);
}

TEST_CASE("linear") {
  CHECK(linear(Tensor(Shape{1, 1024}), Tensor(Shape{1024, 10}), Tensor(Shape{10})).shape() == Shape({1, 10}));

  Tensor x = random_tensor(Shape{1, 3}, 24);
  std::vector<Real> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  CHECK(max_abs_diff(linear(x, Tensor(Shape{3, 3}, eye), Tensor(Shape{3})).values(), x.values()) == 0.0);

  Tensor a(Shape{1, 3}, std::vector<Real>{1, 2, 3});
  Tensor w(Shape{3, 2}, std::vector<Real>{1, 4, 2, 5, 3, 6});
  Tensor b(Shape{2}, std::vector<Real>{0.5, -0.5});
  Tensor y = linear(a, w, b);
  CHECK(y.values()[0] == 14.5);  // 1 + 4 + 9 + 0.5
  CHECK(y.values()[1] == 31.5);  // 4 + 10 + 18 - 0.5
  CHECK_THROWS_AS(linear(a, Tensor(Shape{2, 2}), Tensor(Shape{2})), ShapeError);
}

TEST_CASE("softmax cross-entropy") {
  std::vector<Real> target(10, 0.0);
  target[3] = 1.0;
  CHECK(softmax_cross_entropy(Tensor(Shape{1, 10}), Tensor(Shape{1, 10}, target)).item() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));

  std::vector<Real> logits(10, 0.0);
  logits[3] = 1e6;
  CHECK(softmax_cross_entropy(Tensor(Shape{1, 10}, logits), Tensor(Shape{1, 10}, target)).item() < 1e-12);

  Tensor z = random_tensor(Shape{2, 5}, 25, -4, 4);
  std::vector<Real> t{0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0};
  double want = 0;
  for (std::size_t n = 0; n < 2; ++n) {
    long double denom = 0;
    for (std::size_t k = 0; k < 5; ++k) denom += std::exp((long double)z.values()[n * 5 + k]);
    for (std::size_t k = 0; k < 5; ++k) {
      want -= double(t[n * 5 + k] * ((long double)z.values()[n * 5 + k] - std::log(denom)));
    }
  }
  CHECK(softmax_cross_entropy(z, Tensor(Shape{2, 5}, t)).item() == doctest::Approx(want / 2).epsilon(1e-12));

  std::vector<Real> bad{0.5, 0.4, 0, 0, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor(Shape{1, 5}), Tensor(Shape{1, 5}, bad)), ContractError);
}
