#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "stm/ablate.hpp"
#include "stm/gradcheck.hpp"
#include "stm/reader.hpp"

using namespace stm;

namespace {

template <typename T>
FeatureMap<T> fm(Tensor<T> data, int frame) {
  FeatureMap<T> f;
  f.data = std::move(data);
  f.source_frame = frame;
  return f;
}

template <typename T>
StackedMemory<T> raw_memory(Tensor<T> rows, int frames, int h, int w) {
  StackedMemory<T> m;
  m.channels = rows.dim(1);
  m.rows = std::move(rows);
  m.frames = frames;
  m.height = h;
  m.width = w;
  m.frame_of_row.assign(static_cast<std::size_t>(m.rows.dim(0)), 0);
  return m;
}

}  // namespace

TEST_CASE("stack_memory: row layout and provenance") {
  Rng rng(31);
  const auto a = oracle::random_tensor<float>({2, 2, 2}, rng);
  auto stacked = stack_memory<float>({fm(a, 5)});
  REQUIRE(stacked.rows.shape() == Shape{4, 2});
  // row (h*W + w) must hold the channel vector at pixel (h, w)
  for (int h = 0; h < 2; ++h)
    for (int w = 0; w < 2; ++w)
      for (int c = 0; c < 2; ++c)
        CHECK(stacked.rows.at(h * 2 + w, c) == a.at(c, h, w));

  const auto b = oracle::random_tensor<float>({2, 2, 2}, rng);
  auto two = stack_memory<float>({fm(a, 5), fm(b, 9)});
  REQUIRE(two.rows.dim(0) == 8);
  for (int r = 0; r < 4; ++r) {
    CHECK(two.frame_of_row[static_cast<std::size_t>(r)] == 5);
    CHECK(two.frame_of_row[static_cast<std::size_t>(r) + 4] == 9);
    for (int c = 0; c < 2; ++c)
      CHECK(two.rows.at(4 + r, c) == b.at(c, r / 2, r % 2));
  }

  // round trip: unstacking recovers the original maps exactly
  for (int t = 0; t < 2; ++t) {
    const auto& src = t == 0 ? a : b;
    for (int c = 0; c < 2; ++c)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w)
          REQUIRE(two.rows.at(t * 4 + h * 2 + w, c) == src.at(c, h, w));
  }

  CHECK_THROWS_AS(
      stack_memory<float>({fm(a, 1), fm(Tensor<float>::ones({2, 3, 2}), 2)}),
      std::invalid_argument);
}

TEST_CASE("read: hand-computed single-channel case") {
  // memory rows [1], [0]; query pixel ln 2; C=1 so s=1
  Tensor<double> rows({2, 1});
  rows[0] = 1.0;
  rows[1] = 0.0;
  Tensor<double> query({1, 1, 1});
  query[0] = std::log(2.0);
  const auto detail = memory_read_detail(raw_memory(rows, 2, 1, 1), query);
  CHECK(detail.weights[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(detail.weights[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  REQUIRE(detail.synth.shape() == Shape{2, 1, 1});
  CHECK(detail.synth[0] == doctest::Approx(std::log(2.0)));
  CHECK(detail.synth[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("read: identical memory rows return that vector at every pixel") {
  Rng rng(32);
  const int c = 4, h = 3, w = 3, t = 2;
  Tensor<double> v = oracle::random_tensor<double>({c}, rng);
  Tensor<double> rows({t * h * w, c});
  for (int r = 0; r < t * h * w; ++r)
    for (int ch = 0; ch < c; ++ch) rows.at(r, ch) = v[ch];
  const auto query = oracle::random_tensor<double>({c, h, w}, rng);
  const auto out = memory_read(raw_memory(rows, t, h, w), query);
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < h * w; ++p)
      CHECK(out[static_cast<std::int64_t>(c + ch) * h * w + p] ==
            doctest::Approx(v[ch]).epsilon(1e-12));
}

TEST_CASE("read: dominant row saturates the softmax") {
  Rng rng(33);
  const int c = 3, hw = 4, t = 2;
  const double s = std::sqrt(static_cast<double>(c));
  auto rows = oracle::random_tensor<double>({t * hw, c}, rng, -0.5, 0.5);
  Tensor<double> query({c, 2, 2});
  // Query aligned with row 5, scaled so its logit clears the rest by 30*s.
  for (int ch = 0; ch < c; ++ch) rows.at(5, ch) = 1.0;
  const double margin = 30.0 * s;
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < hw; ++p)
      query[static_cast<std::int64_t>(ch) * hw + p] = (margin + 3.0) / c;
  const auto out = memory_read(raw_memory(rows, t, 2, 2), query);
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < hw; ++p)
      CHECK(std::abs(out[static_cast<std::int64_t>(c + ch) * hw + p] -
                     rows.at(5, ch)) < 1e-9);
}

TEST_CASE("read invariants: stochastic columns, permutation, convex hull") {
  Rng rng(34);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = static_cast<int>(rng.uniform_int(1, 6));
    const int h = static_cast<int>(rng.uniform_int(2, 5));
    const int w = static_cast<int>(rng.uniform_int(2, 5));
    const int t = static_cast<int>(rng.uniform_int(1, 4));
    const int rows_n = t * h * w;
    auto rows = oracle::random_tensor<double>({rows_n, c}, rng, -2, 2);
    const auto query = oracle::random_tensor<double>({c, h, w}, rng, -2, 2);
    const auto mem = raw_memory(rows, t, h, w);
    const auto detail = memory_read_detail(mem, query);

    for (int j = 0; j < h * w; ++j) {
      double sum = 0;
      for (int i = 0; i < rows_n; ++i) {
        const double wv = detail.weights[static_cast<std::int64_t>(i) * h * w + j];
        CHECK(wv >= 0.0);
        CHECK(wv <= 1.0);
        sum += wv;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }

    // permuting memory rows never changes the synthetic feature
    std::vector<int> perm(static_cast<std::size_t>(rows_n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = rows_n - 1; i > 0; --i)
      std::swap(perm[static_cast<std::size_t>(i)],
                perm[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    Tensor<double> shuffled({rows_n, c});
    for (int i = 0; i < rows_n; ++i)
      for (int ch = 0; ch < c; ++ch)
        shuffled.at(i, ch) = rows.at(perm[static_cast<std::size_t>(i)], ch);
    const auto out_perm = memory_read(raw_memory(shuffled, t, h, w), query);
    for (std::int64_t i = 0; i < detail.synth.numel(); ++i)
      CHECK(std::abs(out_perm[i] - detail.synth[i]) < 1e-6);

    // readout stays inside the convex hull of the memory rows per channel
    for (int ch = 0; ch < c; ++ch) {
      double lo = rows.at(0, ch), hi = rows.at(0, ch);
      for (int i = 1; i < rows_n; ++i) {
        lo = std::min(lo, rows.at(i, ch));
        hi = std::max(hi, rows.at(i, ch));
      }
      for (int p = 0; p < h * w; ++p) {
        const double v =
            detail.synth[static_cast<std::int64_t>(c + ch) * h * w + p];
        CHECK(v >= lo - 1e-6);
        CHECK(v <= hi + 1e-6);
      }
    }
  }
}

TEST_CASE("read: scaled logits are invariant under channel duplication") {
  // Doubling C doubles the dot product while s grows by sqrt(2); scaling the
  // duplicated memory copies by 1/sqrt(2) keeps logits/s fixed, so the
  // weights must match.
  Rng rng(35);
  const int c = 5, h = 3, w = 2, t = 2;
  const auto rows = oracle::random_tensor<double>({t * h * w, c}, rng, -1, 1);
  const auto query = oracle::random_tensor<double>({c, h, w}, rng, -1, 1);
  const auto base = memory_read_detail(raw_memory(rows, t, h, w), query);

  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  Tensor<double> rows2({t * h * w, 2 * c});
  for (int i = 0; i < t * h * w; ++i)
    for (int ch = 0; ch < c; ++ch) {
      rows2.at(i, ch) = rows.at(i, ch) * inv_sqrt2;
      rows2.at(i, c + ch) = rows.at(i, ch) * inv_sqrt2;
    }
  Tensor<double> query2({2 * c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < h * w; ++p) {
      query2[static_cast<std::int64_t>(ch) * h * w + p] =
          query[static_cast<std::int64_t>(ch) * h * w + p];
      query2[static_cast<std::int64_t>(c + ch) * h * w + p] =
          query[static_cast<std::int64_t>(ch) * h * w + p];
    }
  const auto dup = memory_read_detail(raw_memory(rows2, t, h, w), query2);
  for (std::int64_t i = 0; i < base.weights.numel(); ++i)
    CHECK(std::abs(dup.weights[i] - base.weights[i]) < 1e-6);
}

TEST_CASE("read: channel mismatch is rejected") {
  Rng rng(36);
  const auto rows = oracle::random_tensor<double>({8, 3}, rng);
  const auto query = oracle::random_tensor<double>({4, 2, 2}, rng);
  CHECK_THROWS_WITH_AS(memory_read(raw_memory(rows, 2, 2, 2), query),
                       doctest::Contains("channels"), std::invalid_argument);
}

TEST_CASE("read gradient: memory and query both pass the oracle") {
  Rng rng(37);
  const int c = 3, h = 3, w = 2, t = 2;
  const auto rows = oracle::random_tensor<double>({t * h * w, c}, rng, -1, 1);
  const auto query = oracle::random_tensor<double>({c, h, w}, rng, -1, 1);
  const double err = grad_check(
      [](Graph<double>& g, const std::vector<NodeId>& in) {
        NodeId y = memory_read(g, in[0], in[1]);
        return g.sum_all(g.mul(y, y));
      },
      {rows, query});
  CHECK(err < 1e-4);
}

TEST_CASE("attention column dump: stochastic, labeled, ordered") {
  Rng rng(38);
  const int c = 3, h = 2, w = 2;
  const auto a = oracle::random_tensor<float>({c, h, w}, rng);
  const auto b = oracle::random_tensor<float>({c, h, w}, rng);
  auto mem = stack_memory<float>({fm(a, 1), fm(b, 7)});
  const auto query = oracle::random_tensor<float>({c, h, w}, rng);
  std::ostringstream os;
  dump_attention_column(mem, query, 2, os);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "row_index,frame_index,weight");
  double sum = 0;
  int row, frame, count = 0;
  char comma;
  double weight;
  while (is >> row >> comma >> frame >> comma >> weight) {
    CHECK(row == count);
    CHECK(frame == (count < 4 ? 1 : 7));
    sum += weight;
    ++count;
  }
  CHECK(count == 8);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("read wall time grows with memory size") {
  const auto rows = bench_read(16, 18, 18, {1, 2, 4, 6, 8}, 7, 2);
  REQUIRE(rows.size() == 5);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].median_seconds > 0);
    if (i > 0) CHECK(rows[i].median_seconds > rows[i - 1].median_seconds);
  }
  CHECK_THROWS_AS(bench_read(8, 8, 8, {1}, 0), std::invalid_argument);
}
