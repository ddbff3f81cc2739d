#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fpam/backbone.hpp"
#include "fpam/errors.hpp"
#include "fpam/model.hpp"
#include "test_util.hpp"

using namespace fpam;
using fpam::test::max_abs_diff;
using fpam::test::random_tensor;

namespace {

std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; }

// Closed-form parameter count of a residual trunk without normalization.
std::size_t trunk_params(const BackboneConfig& c) {
  std::size_t total = conv_params(c.input_channels, c.stem_channels, 7);
  std::size_t in = c.stem_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t out = c.stage_channels[s];
    for (std::size_t b = 0; b < c.blocks[s]; ++b) {
      if (c.expansion > 1) {
        const std::size_t mid = out / c.expansion;
        total += conv_params(in, mid, 1) + conv_params(mid, mid, 3) + conv_params(mid, out, 1);
      } else {
        total += conv_params(in, out, 3) + conv_params(out, out, 3);
      }
      if (in != out || (b == 0 && s > 0)) total += conv_params(in, out, 1);
      in = out;
    }
  }
  return total;
}

}  // namespace

TEST_CASE("paper50 trunk has about 23.5M parameters") {
  const BackboneConfig config = BackboneConfig::preset("paper50");
  ParamStore store;
  build_backbone(config, 1, store);
  CHECK(store.parameter_count() == trunk_params(config));
  CHECK(std::abs(double(store.parameter_count()) - 23.5e6) / 23.5e6 < 0.02);
}

TEST_CASE("tiny trunk: parameter count and pyramid shapes") {
  const BackboneConfig config = BackboneConfig::preset("tiny");
  ParamStore store;
  const Backbone trunk = build_backbone(config, 1, store);
  CHECK(store.parameter_count() == trunk_params(config));
  const FeaturePyramid p = trunk.forward(random_tensor(Shape{2, 1, 201, 64}, 1));
  CHECK(p.stem.shape() == Shape({2, 16, 101, 32}));
  CHECK(p.c2.shape() == Shape({2, 16, 101, 32}));
  CHECK(p.c3.shape() == Shape({2, 32, 51, 16}));
  CHECK(p.c4.shape() == Shape({2, 64, 26, 8}));
  CHECK(p.c5.shape() == Shape({2, 128, 13, 4}));
}

TEST_CASE("backbone input checks and unknown presets") {
  ParamStore store;
  const Backbone trunk = build_backbone(BackboneConfig::preset("tiny"), 1, store);
  CHECK_THROWS_AS(trunk.forward(Tensor(Shape{1, 2, 64, 64})), ShapeError);
  CHECK_THROWS_AS(trunk.forward(Tensor(Shape{1, 1, 16, 64})), ShapeError);
  CHECK_THROWS_AS(trunk.forward(Tensor(Shape{1, 64, 64})), ShapeError);
  CHECK_THROWS_AS(BackboneConfig::preset("resnet18"), ConfigError);
}

TEST_CASE("parameter names are unique and follow registration order") {
  ModelConfig config;
  config.num_classes = 4;
  Model model(config, 3);
  std::set<std::string> names;
  for (const auto& e : model.params().entries()) CHECK(names.insert(e.name).second);
  CHECK(model.params().entries().front().name == "backbone.stem.weight");
  CHECK(model.params().entries().back().name == "head.fc.bias");
  CHECK(names.count("fpam.sam.res4.refine.weight") == 1);
  CHECK(names.count("fpam.pca.conv3x3.weight") == 1);
}

TEST_CASE("model construction is deterministic in the seed") {
  ModelConfig config;
  config.num_classes = 3;
  Model a(config, 11), b(config, 11), c(config, 12);
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto va = a.params().entries()[i].value.values();
    const auto vb = b.params().entries()[i].value.values();
    const auto vc = c.params().entries()[i].value.values();
    CHECK(std::equal(va.begin(), va.end(), vb.begin(), vb.end()));
    differs = differs || !std::equal(va.begin(), va.end(), vc.begin(), vc.end());
  }
  CHECK(differs);
}

TEST_CASE("attention bundle shapes and ranges on the tiny model") {
  ModelConfig config;
  config.num_classes = 5;
  Model model(config, 2);
  const ModelOutput out = model.run(random_tensor(Shape{2, 1, 201, 64}, 3));
  REQUIRE(out.attention.has_value());
  const AttentionBundle& a = *out.attention;
  CHECK(out.logits.shape() == Shape({2, 5}));
  CHECK(a.f_s[0].shape() == Shape({2, 1, 51, 16}));
  CHECK(a.f_s[1].shape() == Shape({2, 1, 26, 8}));
  CHECK(a.f_s[2].shape() == Shape({2, 1, 13, 4}));
  for (const auto& m : a.f_sa) CHECK(m.shape() == Shape({2, 64, 26, 8}));
  CHECK(a.f_ca.shape() == Shape({2, 64, 1, 1}));
  CHECK(a.f_fpam.shape() == Shape({2, 64, 26, 8}));
  for (const auto& m : a.f_s)
    for (Real v : m.values()) REQUIRE((v > 0 && v < 1));
  for (Real v : a.f_ca.values()) REQUIRE((v > 0 && v < 1));
}

TEST_CASE("unit gates reduce the attention output to the mean of the aligned maps") {
  ParamStore store;
  Rng rng(4);
  FeaturePyramidAttention fpam(FpamConfig{{6, 8, 10}, 4, true}, store, rng);
  FeaturePyramid p;
  p.c3 = random_tensor(Shape{2, 6, 9, 6}, 5);
  p.c4 = random_tensor(Shape{2, 8, 5, 3}, 6);
  p.c5 = random_tensor(Shape{2, 10, 3, 2}, 7);
  const AttentionBundle bundle = fpam.forward(p);
  const AlignedPyramid aligned = fpam.dim_align(p);

  // Independent alignment: explicit bins for the finer level, index map for the coarser.
  const Tensor& f3 = aligned.f_m3;
  const Tensor& f4 = aligned.f_m4;
  const Tensor& f5 = aligned.f_m5;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          const std::size_t r0 = i * 9 / 5, r1 = ((i + 1) * 9 + 4) / 5, q0 = j * 6 / 3, q1 = ((j + 1) * 6 + 2) / 3;
          double down = 0;
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t q = q0; q < q1; ++q) down += f3.at({n, c, r, q});
          down /= double((r1 - r0) * (q1 - q0));
          const double up = f5.at({n, c, i * 3 / 5, j * 2 / 3});
          const double mean = (down + f4.at({n, c, i, j}) + up) / 3;
          CHECK(std::abs(bundle.f_fpam.at({n, c, i, j}) - mean) < 1e-6);
        }
  for (Real v : bundle.f_ca.values()) CHECK(v == 1.0);
}

TEST_CASE("attention config and fuse checks") {
  ParamStore store;
  Rng rng(1);
  CHECK_THROWS_AS(FeaturePyramidAttention(FpamConfig{{4, 4, 4}, 3, false}, store, rng), ConfigError);
  CHECK_THROWS_AS(FeaturePyramidAttention(FpamConfig{{4, 4, 4}, 0, false}, store, rng, "other"), ConfigError);
  std::array<Tensor, 3> maps{Tensor(Shape{1, 4, 2, 2}), Tensor(Shape{1, 4, 2, 2}), Tensor(Shape{1, 4, 2, 3})};
  CHECK_THROWS_AS(fpam_fuse(maps, Tensor(Shape{1, 4, 1, 1})), ShapeError);
}

TEST_CASE("baseline head skips attention") {
  ModelConfig config;
  config.num_classes = 3;
  config.head = HeadKind::kBaseline;
  Model model(config, 5);
  CHECK(model.attention() == nullptr);
  const ModelOutput out = model.run(random_tensor(Shape{1, 1, 64, 32}, 6));
  CHECK_FALSE(out.attention.has_value());
  CHECK(out.logits.shape() == Shape({1, 3}));
  for (const auto& e : model.params().entries()) CHECK(e.name.rfind("fpam.", 0) != 0);
  CHECK(parse_head("baseline") == HeadKind::kBaseline);
  CHECK(head_name(HeadKind::kFpam) == "fpam");
  CHECK_THROWS_AS(parse_head("cbam"), ConfigError);
}

namespace {

// Direct-loop convolution, stride 1, for checking attention sub-blocks.
double conv_at(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t n, std::size_t o, std::size_t i,
               std::size_t j) {
  const std::size_t k = w.dim(2);
  const long pad = long(k / 2);
  double acc = b.at({o});
  for (std::size_t c = 0; c < x.dim(1); ++c)
    for (std::size_t u = 0; u < k; ++u)
      for (std::size_t v = 0; v < k; ++v) {
        const long r = long(i) + long(u) - pad, q = long(j) + long(v) - pad;
        if (r < 0 || q < 0 || r >= long(x.dim(2)) || q >= long(x.dim(3))) continue;
        acc += w.at({o, c, u, v}) * x.at({n, c, std::size_t(r), std::size_t(q)});
      }
  return acc;
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("spatial attention matches a direct-loop oracle") {
  ParamStore store;
  Rng rng(8);
  SpatialAttention sam(store, "sam", 5, rng);
  for (auto& e : store.entries())
    if (e.name.find(".bias") != std::string::npos)
      for (Real& v : e.value.mutable_values()) v = Real(0.1);
  const Tensor x = random_tensor(Shape{2, 5, 6, 4}, 9);
  const SamOutput out = sam.forward(x, false);
  REQUIRE(out.f_s.shape() == Shape({2, 1, 6, 4}));
  REQUIRE(out.f_sa.shape() == x.shape());

  Tensor branches(Shape{2, 4, 6, 4});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double mx = -1e300, sum = 0;
        for (std::size_t c = 0; c < 5; ++c) {
          mx = std::max(mx, double(x.at({n, c, i, j})));
          sum += x.at({n, c, i, j});
        }
        branches.mutable_values()[((n * 4 + 0) * 6 + i) * 4 + j] = Real(mx);
        branches.mutable_values()[((n * 4 + 1) * 6 + i) * 4 + j] = Real(sum / 5);
        branches.mutable_values()[((n * 4 + 2) * 6 + i) * 4 + j] =
            Real(conv_at(x, store.get("sam.conv3x3.weight"), store.get("sam.conv3x3.bias"), n, 0, i, j));
        branches.mutable_values()[((n * 4 + 3) * 6 + i) * 4 + j] =
            Real(conv_at(x, store.get("sam.conv1x1.weight"), store.get("sam.conv1x1.bias"), n, 0, i, j));
      }
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const double gate =
            logistic(conv_at(branches, store.get("sam.refine.weight"), store.get("sam.refine.bias"), n, 0, i, j));
        CHECK(std::abs(out.f_s.at({n, 0, i, j}) - gate) < 1e-9);
        for (std::size_t c = 0; c < 5; ++c)
          CHECK(std::abs(out.f_sa.at({n, c, i, j}) - gate * x.at({n, c, i, j})) < 1e-9);
      }
}

TEST_CASE("a saturated spatial gate passes the aligned map through") {
  ParamStore store;
  Rng rng(10);
  SpatialAttention sam(store, "sam", 4, rng);
  for (Real& v : store.get("sam.refine.bias").mutable_values()) v = Real(60);
  const Tensor x = random_tensor(Shape{1, 4, 5, 3}, 11, -0.1, 0.1);
  const SamOutput out = sam.forward(x, false);
  for (Real v : out.f_s.values()) CHECK(v > 1 - 1e-12);
  CHECK(max_abs_diff(out.f_sa.values(), x.values()) < 1e-12);
}

TEST_CASE("alignment is a per-pixel matrix product") {
  ParamStore store;
  Rng rng(12);
  FeaturePyramidAttention fpam(FpamConfig{{3, 5, 7}, 4, false}, store, rng);
  for (Real& v : store.get("fpam.align.res4.bias").mutable_values()) v = Real(0.25);
  FeaturePyramid p;
  p.c3 = random_tensor(Shape{1, 3, 8, 4}, 13);
  p.c4 = random_tensor(Shape{1, 5, 4, 2}, 14);
  p.c5 = random_tensor(Shape{1, 7, 2, 1}, 15);
  const AlignedPyramid aligned = fpam.dim_align(p);
  CHECK(aligned.f_m3.shape() == Shape({1, 4, 8, 4}));
  CHECK(aligned.f_m5.shape() == Shape({1, 4, 2, 1}));
  const Tensor& w = store.get("fpam.align.res4.weight");
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double acc = 0.25;
        for (std::size_t c = 0; c < 5; ++c) acc += w.at({o, c, 0, 0}) * p.c4.at({0, c, i, j});
        CHECK(std::abs(aligned.f_m4.at({0, o, i, j}) - acc) < 1e-12);
      }

  // An identity kernel is a pass-through.
  ParamStore store2;
  Rng rng2(1);
  FeaturePyramidAttention same(FpamConfig{{4, 4, 4}, 4, false}, store2, rng2);
  Tensor& w2 = store2.get("fpam.align.res3.weight");
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t c = 0; c < 4; ++c) w2.mutable_values()[o * 4 + c] = o == c ? Real(1) : Real(0);
  FeaturePyramid q;
  q.c3 = random_tensor(Shape{2, 4, 3, 3}, 16);
  q.c4 = random_tensor(Shape{2, 4, 2, 2}, 17);
  q.c5 = random_tensor(Shape{2, 4, 1, 1}, 18);
  CHECK(max_abs_diff(same.dim_align(q).f_m3.values(), q.c3.values()) == 0.0);
}

TEST_CASE("channel attention: zero maps give one half, fusion matches a loop oracle") {
  ParamStore store;
  Rng rng(19);
  FeaturePyramidAttention fpam(FpamConfig{{4, 4, 4}, 6, false}, store, rng);
  const Shape shape{2, 6, 3, 2};
  const Tensor zero(shape);
  const Tensor half = fpam.pca_forward({zero, zero, zero});
  CHECK(half.shape() == Shape({2, 6, 1, 1}));
  for (Real v : half.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

  const std::array<Tensor, kNumScales> maps{random_tensor(shape, 20), random_tensor(shape, 21),
                                            random_tensor(shape, 22)};
  const Tensor gate = fpam.pca_forward(maps);
  // Gate oracle: the first half of channels from the 1x1 conv, the rest from
  // the 3x3 conv, each reduced by max + mean over space.
  Tensor stacked(Shape{2, 18, 3, 2});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t c = 0; c < 6; ++c)
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 2; ++j)
            stacked.mutable_values()[((n * 18 + s * 6 + c) * 3 + i) * 2 + j] = maps[s].at({n, c, i, j});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 6; ++c) {
      const bool first = c < 3;
      const Tensor& w = store.get(first ? "fpam.pca.conv1x1.weight" : "fpam.pca.conv3x3.weight");
      const Tensor& b = store.get(first ? "fpam.pca.conv1x1.bias" : "fpam.pca.conv3x3.bias");
      double mx = -1e300, sum = 0;
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
          const double v = conv_at(stacked, w, b, n, c % 3, i, j);
          mx = std::max(mx, v);
          sum += v;
        }
      CHECK(std::abs(gate.at({n, c, 0, 0}) - logistic(mx + sum / 6)) < 1e-9);
    }

  const Tensor fused = fpam_fuse(maps, gate);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
          const double mean = (maps[0].at({n, c, i, j}) + maps[1].at({n, c, i, j}) + maps[2].at({n, c, i, j})) / 3;
          CHECK(std::abs(fused.at({n, c, i, j}) - gate.at({n, c, 0, 0}) * mean) < 1e-12);
        }
  // Three identical maps reduce to the gated map itself.
  const Tensor same = fpam_fuse({maps[0], maps[0], maps[0]}, gate);
  for (std::size_t k = 0; k < same.numel(); ++k)
    CHECK(std::abs(same.values()[k] - maps[0].values()[k] * gate.values()[k / 6]) < 1e-12);
}

TEST_CASE("coarse-to-middle upsampling keeps a constant map constant") {
  ParamStore store;
  Rng rng(23);
  FeaturePyramidAttention fpam(FpamConfig{{4, 4, 4}, 4, true}, store, rng);
  AlignedPyramid a{random_tensor(Shape{1, 4, 8, 4}, 24), random_tensor(Shape{1, 4, 4, 2}, 25),
                   Tensor(Shape{1, 4, 2, 1}, Real(0.75))};
  const PsaOutput psa = fpam.psa_forward(a);
  CHECK(psa.at_middle[2].shape() == Shape({1, 4, 4, 2}));
  for (Real v : psa.at_middle[2].values()) CHECK(v == Real(0.75));
}

TEST_CASE("classifier head is the spatial mean followed by the linear layer") {
  ParamStore store;
  Rng rng(26);
  ClassifierHead head(store, "head", 4, 3, rng);
  for (Real& v : store.get("head.bias").mutable_values()) v = Real(-0.5);
  const Tensor x = random_tensor(Shape{2, 4, 3, 5}, 27);
  const Tensor logits = head.forward(x);
  REQUIRE(logits.shape() == Shape({2, 3}));
  const Tensor& w = head.fc().weight;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 3; ++k) {
      double acc = -0.5;
      for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0;
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 5; ++j) mean += x.at({n, c, i, j});
        acc += w.at({c, k}) * mean / 15;
      }
      CHECK(std::abs(logits.at({n, k}) - acc) < 1e-12);
    }
}

TEST_CASE("zero input through the freshly built trunk gives zero features") {
  ModelConfig config;
  config.num_classes = 4;
  Model model(config, 28);
  const ModelOutput out = model.run(Tensor(Shape{1, 1, 201, 64}));
  for (const Tensor* level : {&out.pyramid.c2, &out.pyramid.c3, &out.pyramid.c4, &out.pyramid.c5})
    for (Real v : level->values()) REQUIRE(v == 0);
  for (Real v : out.logits.values()) CHECK(v == 0);
}

TEST_CASE("paper50 attention maps are aligned to 1024 channels on the Res-4 grid") {
  ModelConfig config;
  config.backbone = BackboneConfig::preset("paper50");
  config.num_classes = 50;
  Model model(config, 1);
  const ModelOutput out = model.run(random_tensor(Shape{1, 1, 201, 64}, 29));
  REQUIRE(out.attention.has_value());
  for (const auto& m : out.attention->f_sa) CHECK(m.shape() == Shape({1, 1024, 26, 8}));
  CHECK(out.attention->f_s[0].shape() == Shape({1, 1, 51, 16}));
  CHECK(out.attention->f_s[2].shape() == Shape({1, 1, 13, 4}));
  CHECK(out.attention->f_ca.shape() == Shape({1, 1024, 1, 1}));
  CHECK(model.params().get("head.fc.weight").shape() == Shape({1024, 50}));
  CHECK(out.logits.shape() == Shape({1, 50}));
}
