#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "stm/features.hpp"
#include "stm/gradcheck.hpp"

using namespace stm;

namespace {

BackboneConfig small_cfg() {
  BackboneConfig c;
  c.stage_channels = {4, 6, 8, 8};
  c.stage_strides = {2, 2, 1, 2};
  c.reduced_channels = 5;
  c.input_side = 72;  // grid 9 at stride 8
  return c;
}

}  // namespace

TEST_CASE("backbone geometry: stride and grid side") {
  BackboneConfig c;
  CHECK(c.total_stride() == 8);
  CHECK(c.grid_side() == 37);  // ceil(289 / 8)
  CHECK(c.grid().stride == 8);
  CHECK(c.grid().offset == doctest::Approx(4.0));
  BackboneConfig s = small_cfg();
  CHECK(s.grid_side() == 9);
}

TEST_CASE("memory and query embeddings share C, H, W") {
  Rng rng(21);
  FeatureExtractor<float> fx(small_cfg(), rng);
  const auto frame = oracle::random_tensor<float>({3, 72, 72}, rng, 0.f, 1.f);
  const auto label = Tensor<float>::ones({1, 72, 72});
  const auto fm = fx.embed_memory(frame, label);
  const auto fq = fx.embed_query(frame);
  CHECK(fm.shape() == Shape{5, 9, 9});
  CHECK(fq.shape() == Shape{5, 9, 9});
}

TEST_CASE("label map drives the memory embedding") {
  Rng rng(22);
  FeatureExtractor<float> fx(small_cfg(), rng);
  const auto frame = oracle::random_tensor<float>({3, 72, 72}, rng, 0.f, 1.f);
  const auto ones = fx.embed_memory(frame, Tensor<float>::ones({1, 72, 72}));
  const auto zeros = fx.embed_memory(frame, Tensor<float>::zeros({1, 72, 72}));
  double gap = 0;
  for (std::int64_t i = 0; i < ones.numel(); ++i) {
    const double d = ones[i] - zeros[i];
    gap += d * d;
  }
  CHECK(std::sqrt(gap) > 1e-3);
}

TEST_CASE("zeroed g makes the label map inert; disabling it is identical") {
  Rng rng(23);
  BackboneConfig cfg = small_cfg();
  FeatureExtractor<float> fx(cfg, rng);
  fx.visit_params([](Parameter<float>& p) {
    if (p.name == "g.weight")
      std::fill(p.value.data(), p.value.data() + p.value.numel(), 0.f);
  });
  const auto frame = oracle::random_tensor<float>({3, 72, 72}, rng, 0.f, 1.f);
  const auto a = fx.embed_memory(frame, Tensor<float>::ones({1, 72, 72}));
  Rng lbl(24);
  const auto b = fx.embed_memory(
      frame, oracle::random_tensor<float>({1, 72, 72}, lbl, 0.f, 1.f));
  for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);

  fx.set_use_label_map(false);
  const auto c = fx.embed_memory(frame, Tensor<float>::ones({1, 72, 72}));
  for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == c[i]);
}

TEST_CASE("label map must match the frame's spatial shape") {
  Rng rng(25);
  FeatureExtractor<float> fx(small_cfg(), rng);
  const auto frame = oracle::random_tensor<float>({3, 72, 72}, rng);
  CHECK_THROWS_AS(fx.embed_memory(frame, Tensor<float>::ones({1, 64, 72})),
                  std::invalid_argument);
}

TEST_CASE("backbone sharing: phi parameters collapse, reducers stay apart") {
  Rng rng1(26), rng2(26);
  BackboneConfig unshared = small_cfg();
  BackboneConfig shared = small_cfg();
  shared.share_backbone = true;
  FeatureExtractor<float> a(unshared, rng1);
  FeatureExtractor<float> b(shared, rng2);

  std::size_t backbone_params = 0, q_names = 0, hq_names = 0;
  a.visit_params([&](Parameter<float>& p) {
    if (p.name.rfind("phi_m.", 0) == 0)
      backbone_params += static_cast<std::size_t>(p.value.numel());
  });
  b.visit_params([&](Parameter<float>& p) {
    if (p.name.rfind("phi_q.", 0) == 0) ++q_names;
    if (p.name.rfind("h_q", 0) == 0) ++hq_names;
  });
  CHECK(q_names == 0);    // single storage for both branches
  CHECK(hq_names == 2);   // h stays separate by default
  CHECK(a.parameter_count() == b.parameter_count() + backbone_params);
}

TEST_CASE("shared backbone feeds both branches from the same storage") {
  Rng rng(27);
  BackboneConfig cfg = small_cfg();
  cfg.share_backbone = true;
  FeatureExtractor<float> fx(cfg, rng);
  const auto frame = oracle::random_tensor<float>({3, 72, 72}, rng, 0.f, 1.f);
  const auto before = fx.embed_query(frame);
  // Mutating phi_m must change the query branch as well.
  fx.visit_params([](Parameter<float>& p) {
    if (p.name == "phi_m.stage0.weight")
      for (std::int64_t i = 0; i < p.value.numel(); ++i) p.value[i] *= 2.0f;
  });
  const auto after = fx.embed_query(frame);
  double gap = 0;
  for (std::int64_t i = 0; i < before.numel(); ++i)
    gap += std::abs(before[i] - after[i]);
  CHECK(gap > 1e-3);
}

TEST_CASE("translation covariance: one-stride shift moves the grid one cell") {
  Rng rng(28);
  BackboneConfig cfg = small_cfg();
  FeatureExtractor<float> fx(cfg, rng);
  const int side = cfg.input_side;
  const int stride = cfg.total_stride();
  const auto canvas =
      oracle::random_tensor<float>({3, side, side + stride}, rng, 0.f, 1.f);
  Tensor<float> f0({3, side, side}), f1({3, side, side});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) {
        f0.at(c, i, j) = canvas.at(c, i, j);
        f1.at(c, i, j) = canvas.at(c, i, j + stride);
      }
  const auto e0 = fx.embed_query(f0);
  const auto e1 = fx.embed_query(f1);
  const int gs = cfg.grid_side();
  // Interior margin of two cells clears the receptive field of the cascade.
  for (int c = 0; c < e0.dim(0); ++c)
    for (int i = 2; i < gs - 2; ++i)
      for (int j = 2; j < gs - 3; ++j)
        REQUIRE(e1.at(c, i, j) == e0.at(c, i, j + 1));
}

TEST_CASE("embedding gradients flow through g and both backbones") {
  Rng rng(29);
  BackboneConfig cfg;
  cfg.stage_channels = {2, 3};
  cfg.stage_strides = {2, 2};
  cfg.reduced_channels = 3;
  cfg.input_side = 16;
  FeatureExtractor<double> fx(cfg, rng);
  const auto frame = oracle::random_tensor<double>({3, 16, 16}, rng, 0.0, 1.0);
  const auto label = oracle::random_tensor<double>({1, 16, 16}, rng, 0.0, 1.0);
  const double err = grad_check(
      [&fx](Graph<double>& g, const std::vector<NodeId>& in) {
        NodeId y = fx.embed_memory(g, in[0], in[1]);
        return g.sum_all(g.mul(y, y));
      },
      {frame, label});
  CHECK(err < 1e-4);
}
