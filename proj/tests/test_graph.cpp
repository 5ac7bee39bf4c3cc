#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "stm/checkpoint.hpp"
#include "stm/gradcheck.hpp"
#include "stm/graph.hpp"

using namespace stm;

namespace {

// Nudges entries away from relu/min kinks so central differences stay clean.
Tensor<double> kink_free(Tensor<double> t, double margin = 1e-3) {
  for (std::int64_t i = 0; i < t.numel(); ++i)
    if (std::abs(t[i]) < margin) t[i] += 0.01;
  return t;
}

}  // namespace

TEST_CASE("conv2d: identity kernel passes the input through") {
  Graph<float> g;
  NodeId x = g.input(Tensor<float>::ones({1, 3, 3}));
  NodeId w = g.input(Tensor<float>::ones({1, 1, 1, 1}));
  NodeId b = g.input(Tensor<float>::zeros({1}));
  NodeId y = g.conv2d(x, w, b, 1, 0);
  CHECK(g.value(y).shape() == Shape{1, 3, 3});
  for (std::int64_t i = 0; i < 9; ++i) CHECK(g.value(y)[i] == 1.0f);
}

TEST_CASE("conv2d: hand-summed 2x2 box filter") {
  Graph<float> g;
  Tensor<float> x({1, 2, 2});
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  x[3] = 4;
  NodeId y = g.conv2d(g.input(std::move(x)),
                      g.input(Tensor<float>::ones({1, 1, 2, 2})),
                      g.input(Tensor<float>::zeros({1})), 1, 0);
  CHECK(g.value(y).shape() == Shape{1, 1, 1});
  CHECK(g.value(y)[0] == 10.0f);
}

TEST_CASE("conv2d: output shape follows the floor formula") {
  Graph<float> g;
  Rng rng(3);
  NodeId y = g.conv2d(g.input(oracle::random_tensor<float>({1, 4, 4}, rng)),
                      g.input(oracle::random_tensor<float>({1, 1, 3, 3}, rng)),
                      g.input(Tensor<float>::zeros({1})), 2, 1);
  CHECK(g.value(y).shape() == Shape{1, 2, 2});
}

TEST_CASE("conv2d equals the naive six-loop reference exactly") {
  Rng rng(4);
  for (int trial = 0; trial < 12; ++trial) {
    const int cin = static_cast<int>(rng.uniform_int(1, 8));
    const int cout = static_cast<int>(rng.uniform_int(1, 6));
    const int h = static_cast<int>(rng.uniform_int(3, 16));
    const int w = static_cast<int>(rng.uniform_int(3, 16));
    const int k = static_cast<int>(rng.uniform_int(1, 3));
    const int stride = static_cast<int>(rng.uniform_int(1, 2));
    const int pad = static_cast<int>(rng.uniform_int(0, 1));
    if (h + 2 * pad < k || w + 2 * pad < k) continue;
    const auto x = oracle::random_tensor<float>({cin, h, w}, rng);
    const auto wt = oracle::random_tensor<float>({cout, cin, k, k}, rng);
    const auto b = oracle::random_tensor<float>({cout}, rng);
    Graph<float> g;
    NodeId y = g.conv2d(g.input(x), g.input(wt), g.input(b), stride, pad);
    const auto ref = oracle::conv2d_naive(x, wt, b, stride, pad);
    REQUIRE(g.value(y).shape() == ref.shape());
    for (std::int64_t i = 0; i < ref.numel(); ++i)
      REQUIRE(g.value(y)[i] == ref[i]);
  }
}

TEST_CASE("conv2d: shape errors name the offending dimension") {
  Graph<float> g;
  NodeId x = g.input(Tensor<float>::zeros({4, 5, 5}));
  NodeId w = g.input(Tensor<float>::zeros({2, 3, 3, 3}));
  NodeId b = g.input(Tensor<float>::zeros({2}));
  CHECK_THROWS_WITH_AS(g.conv2d(x, w, b, 1, 1),
                       doctest::Contains("input channels 4"),
                       std::invalid_argument);
  NodeId small = g.input(Tensor<float>::zeros({3, 2, 2}));
  CHECK_THROWS_AS(g.conv2d(small, w, b, 1, 0), std::invalid_argument);
}

TEST_CASE("matmul identity and inner-dimension error") {
  Graph<double> g;
  Tensor<double> eye({2, 2});
  eye.at(0, 0) = 1;
  eye.at(1, 1) = 1;
  Tensor<double> v({2, 1});
  v[0] = 5;
  v[1] = 7;
  NodeId y = g.matmul(g.input(eye), g.input(v));
  CHECK(g.value(y)[0] == 5.0);
  CHECK(g.value(y)[1] == 7.0);
  CHECK_THROWS_WITH_AS(
      g.matmul(g.input(Tensor<double>::zeros({2, 3})),
               g.input(Tensor<double>::zeros({4, 2}))),
      doctest::Contains("inner dimension"), std::invalid_argument);
}

TEST_CASE("matmul associativity within 1e-5 relative") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int m = static_cast<int>(rng.uniform_int(1, 8));
    const int k = static_cast<int>(rng.uniform_int(1, 8));
    const int p = static_cast<int>(rng.uniform_int(1, 8));
    const int q = static_cast<int>(rng.uniform_int(1, 8));
    const auto a = oracle::random_tensor<float>({m, k}, rng);
    const auto b = oracle::random_tensor<float>({k, p}, rng);
    const auto c = oracle::random_tensor<float>({p, q}, rng);
    Graph<float> g;
    NodeId left = g.matmul(g.matmul(g.input(a), g.input(b)), g.input(c));
    NodeId right = g.matmul(g.input(a), g.matmul(g.input(b), g.input(c)));
    for (std::int64_t i = 0; i < g.value(left).numel(); ++i) {
      const double l = g.value(left)[i], r = g.value(right)[i];
      CHECK(std::abs(l - r) <= 1e-5 * std::max({std::abs(l), std::abs(r), 1.0}));
    }
  }
}

TEST_CASE("relu and concat_channels basics") {
  Graph<float> g;
  Tensor<float> x({3});
  x[0] = -1;
  x[1] = 0;
  x[2] = 2;
  NodeId y = g.relu(g.input(x));
  CHECK(g.value(y)[0] == 0.0f);
  CHECK(g.value(y)[1] == 0.0f);
  CHECK(g.value(y)[2] == 2.0f);

  NodeId c = g.concat_channels(g.input(Tensor<float>::ones({1, 2, 2})),
                               g.input(Tensor<float>::zeros({3, 2, 2})));
  CHECK(g.value(c).shape() == Shape{4, 2, 2});
  CHECK_THROWS_AS(
      g.concat_channels(g.input(Tensor<float>::zeros({1, 2, 2})),
                        g.input(Tensor<float>::zeros({1, 3, 2}))),
      std::invalid_argument);
}

TEST_CASE("tensor invariants: extents must be positive") {
  CHECK_THROWS_AS(Tensor<float>({3, 0, 2}), std::invalid_argument);
  CHECK(Tensor<float>({2, 3}).numel() == 6);
}

TEST_CASE("grad_check: closed-form cases") {
  // f(x) = sum(x^2) at [1, 2] -> gradient [2, 4]
  Tensor<double> x({2});
  x[0] = 1;
  x[1] = 2;
  const double err = grad_check(
      [](Graph<double>& g, const std::vector<NodeId>& in) {
        return g.sum_all(g.mul(in[0], in[0]));
      },
      {x}, 1e-5);
  CHECK(err < 1e-6);

  // all-positive relu is locally linear: error at noise floor
  Tensor<double> xp({4});
  for (int i = 0; i < 4; ++i) xp[i] = 0.5 + i;
  const double err2 = grad_check(
      [](Graph<double>& g, const std::vector<NodeId>& in) {
        return g.sum_all(g.relu(in[0]));
      },
      {xp}, 1e-5);
  CHECK(err2 < 1e-8);
}

TEST_CASE("grad_check: every op under 1e-4 over 20+ random seeds") {
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 22; ++seed) {
    Rng rng(seed * 977);
    const int c = static_cast<int>(rng.uniform_int(1, 3));
    const int h = static_cast<int>(rng.uniform_int(3, 6));
    const int w = static_cast<int>(rng.uniform_int(3, 6));

    const auto x3 = kink_free(oracle::random_tensor<double>({c, h, w}, rng));
    const auto conv_w =
        oracle::random_tensor<double>({2, c, 3, 3}, rng, -0.5, 0.5);
    const auto conv_b = oracle::random_tensor<double>({2}, rng);
    CHECK(grad_check(
              [](Graph<double>& g, const std::vector<NodeId>& in) {
                NodeId y = g.conv2d(in[0], in[1], in[2], 2, 1);
                return g.sum_all(g.mul(y, y));
              },
              {x3, conv_w, conv_b}) < 1e-4);

    CHECK(grad_check(
              [](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.sum_all(g.mul(g.relu(in[0]), in[0]));
              },
              {x3}) < 1e-4);

    const int m = static_cast<int>(rng.uniform_int(2, 5));
    const int k = static_cast<int>(rng.uniform_int(2, 5));
    const int p = static_cast<int>(rng.uniform_int(2, 5));
    const auto a = oracle::random_tensor<double>({m, k}, rng);
    const auto b = oracle::random_tensor<double>({k, p}, rng);
    CHECK(grad_check(
              [](Graph<double>& g, const std::vector<NodeId>& in) {
                NodeId y = g.matmul(in[0], in[1]);
                return g.sum_all(g.mul(y, y));
              },
              {a, b}) < 1e-4);

    CHECK(grad_check(
              [](Graph<double>& g, const std::vector<NodeId>& in) {
                NodeId y = g.transpose2d(in[0]);
                return g.sum_all(g.mul(y, y));
              },
              {a}) < 1e-4);

    CHECK(grad_check(
              [c, h, w](Graph<double>& g, const std::vector<NodeId>& in) {
                NodeId y = g.chw_to_rows(in[0]);
                NodeId z = g.reshape(y, {c * h * w});
                return g.sum_all(g.mul(z, z));
              },
              {x3}) < 1e-4);

    CHECK(grad_check(
              [](Graph<double>& g, const std::vector<NodeId>& in) {
                NodeId y = g.concat_rows({in[0], in[1]});
                return g.sum_all(g.mul(y, y));
              },
              {a, oracle::random_tensor<double>({3, k}, rng)}) < 1e-4);

    CHECK(grad_check(
              [](Graph<double>& g, const std::vector<NodeId>& in) {
                NodeId y = g.concat_channels(in[0], in[1]);
                return g.sum_all(g.mul(y, y));
              },
              {x3, oracle::random_tensor<double>({2, h, w}, rng)}) < 1e-4);

    CHECK(grad_check(
              [](Graph<double>& g, const std::vector<NodeId>& in) {
                NodeId y = g.softmax_columns(in[0], 1.7);
                return g.sum_all(g.mul(y, y));
              },
              {oracle::random_tensor<double>({m, p}, rng, -2, 2)}) < 1e-4);

    CHECK(grad_check(
              [](Graph<double>& g, const std::vector<NodeId>& in) {
                NodeId y = g.scaled_exp(in[0], 8.0);
                return g.sum_all(g.mul(y, y));
              },
              {oracle::random_tensor<double>({m, p}, rng, -1, 1)}) < 1e-4);

    CHECK(grad_check(
              [](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.weighted_sum({g.sum_all(in[0]), g.sum_all(in[1])},
                                      {0.25, -2.0});
              },
              {a, b}) < 1e-4);

    // losses
    Rng lrng(seed * 31 + 7);
    Tensor<double> labels({1, h, w});
    int pos = 0;
    for (std::int64_t i = 0; i < labels.numel(); ++i) {
      labels[i] = lrng.uniform() < 0.4 ? 1.0 : 0.0;
      pos += labels[i] > 0.5 ? 1 : 0;
    }
    const auto logits =
        oracle::random_tensor<double>({1, h, w}, lrng, -2, 2);
    const double n = std::max(1, pos);
    CHECK(grad_check(
              [labels, n](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.focal_loss_with_logits(in[0], labels, 0.25, 2.0, n);
              },
              {logits}) < 1e-4);

    Tensor<double> ctr_t({1, h, w});
    for (std::int64_t i = 0; i < ctr_t.numel(); ++i)
      ctr_t[i] = labels[i] > 0.5 ? lrng.uniform() : 0.0;
    CHECK(grad_check(
              [ctr_t, labels, n](Graph<double>& g,
                                 const std::vector<NodeId>& in) {
                return g.bce_with_logits_masked(in[0], ctr_t, labels, n);
              },
              {logits}) < 1e-4);

    if (pos > 0) {
      const auto pred =
          oracle::random_tensor<double>({4, h, w}, lrng, 0.5, 3.0);
      const auto targ =
          oracle::random_tensor<double>({4, h, w}, lrng, 0.5, 3.0);
      CHECK(grad_check(
                [targ, labels, n](Graph<double>& g,
                                  const std::vector<NodeId>& in) {
                  return g.iou_loss_ltrb(in[0], targ, labels, n);
                },
                {pred}) < 1e-4);
    }
    ++checked;
  }
  CHECK(checked >= 20);
}

TEST_CASE("backward visits every reachable node exactly once") {
  Rng rng(6);
  Graph<double> g;
  Tensor<double> xt = oracle::random_tensor<double>({3, 3}, rng);
  xt.requires_grad = true;
  NodeId x = g.input(std::move(xt));
  // Diamond: x feeds two branches that rejoin.
  NodeId a = g.relu(x);
  NodeId b = g.mul(x, x);
  NodeId j = g.add(a, b);
  NodeId loss = g.sum_all(g.mul(j, j));
  g.backward(loss);
  for (int id = 0; id < static_cast<int>(g.node_count()); ++id)
    CHECK(g.backward_visits(NodeId{id}) <= 1);
  CHECK(g.backward_visits(j) == 1);
  CHECK(g.backward_visits(b) == 1);
}

TEST_CASE("finite check flags non-finite op output when enabled") {
  Graph<double> g;
  g.set_check_finite(true);
  NodeId x = g.input(Tensor<double>::full({2}, 1e308));
  CHECK_THROWS_AS(g.mul(x, x), std::runtime_error);
  Graph<double> g2;
  g2.set_check_finite(false);
  NodeId y = g2.input(Tensor<double>::full({2}, 1e308));
  CHECK_NOTHROW(g2.mul(y, y));
}

TEST_CASE("backward requires a scalar root") {
  Graph<double> g;
  Tensor<double> t = Tensor<double>::ones({2, 2});
  t.requires_grad = true;
  NodeId x = g.input(std::move(t));
  CHECK_THROWS_AS(g.backward(x), std::invalid_argument);
}

TEST_CASE("parameters accumulate gradients through bound leaves") {
  Parameter<double> p("w", Tensor<double>::full({3}, 2.0));
  Graph<double> g;
  NodeId w = g.param(p);
  NodeId loss = g.sum_all(g.mul(w, w));
  g.backward(loss);
  REQUIRE(p.grad.numel() == 3);
  for (int i = 0; i < 3; ++i) CHECK(p.grad[i] == doctest::Approx(4.0));
  // second pass accumulates
  Graph<double> g2;
  NodeId w2 = g2.param(p);
  g2.backward(g2.sum_all(g2.mul(w2, w2)));
  for (int i = 0; i < 3; ++i) CHECK(p.grad[i] == doctest::Approx(8.0));
  // frozen parameters receive nothing
  Parameter<double> q("f", Tensor<double>::full({2}, 1.0));
  q.trainable = false;
  Graph<double> g3;
  NodeId qn = g3.param(q);
  g3.backward(g3.sum_all(g3.mul(qn, qn)));
  CHECK(q.grad.numel() == 0);
}

TEST_CASE("checkpoint: round trip with manifest and magic") {
  namespace fs = std::filesystem;
  const std::string path =
      (fs::temp_directory_path() / "stmt_ckpt_test.bin").string();
  Rng rng(7);
  const auto a = oracle::random_tensor<float>({3, 4}, rng);
  const auto b = oracle::random_tensor<float>({2, 2, 2}, rng);
  nlohmann::json meta;
  meta["note"] = "roundtrip";
  save_checkpoint<float>(path, {{"layer.w", &a}, {"layer.b", &b}}, meta);

  auto loaded = load_checkpoint<float>(path);
  CHECK(loaded.meta["note"] == "roundtrip");
  REQUIRE(loaded.tensors.count("layer.w") == 1);
  REQUIRE(loaded.tensors.at("layer.b").shape() == b.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    CHECK(loaded.tensors.at("layer.w")[i] == a[i]);

  // corrupting the magic must be detected
  {
    std::FILE* f = std::fopen(path.c_str(), "r+b");
    REQUIRE(f != nullptr);
    std::fputc('X', f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_checkpoint<float>(path), std::runtime_error);
  fs::remove(path);
}
