// Independent brute-force references used as ground truth by the test
// suites. These deliberately avoid the production kernels and graph ops:
// plain loops only.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stm/geometry.hpp"
#include "stm/metrics.hpp"
#include "stm/rng.hpp"
#include "stm/tensor.hpp"

namespace oracle {

// Direct six-loop convolution, accumulating (c_in, kh, kw) ascending per
// output element, bias added last.
template <typename T>
stm::Tensor<T> conv2d_naive(const stm::Tensor<T>& x, const stm::Tensor<T>& w,
                            const stm::Tensor<T>& b, int stride, int pad) {
  const int cin = x.dim(0), h = x.dim(1), ww = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (ww + 2 * pad - k) / stride + 1;
  stm::Tensor<T> y({cout, oh, ow});
  for (int co = 0; co < cout; ++co)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        T acc = 0;
        for (int ci = 0; ci < cin; ++ci)
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
              const int yy = i * stride - pad + ki;
              const int xx = j * stride - pad + kj;
              T v = 0;
              if (yy >= 0 && yy < h && xx >= 0 && xx < ww) v = x.at(ci, yy, xx);
              acc += w[((static_cast<std::int64_t>(co) * cin + ci) * k + ki) *
                           k +
                       kj] *
                     v;
            }
        y.at(co, i, j) = acc + b[co];
      }
  return y;
}

template <typename T>
stm::Tensor<T> gemm_naive(const stm::Tensor<T>& a, const stm::Tensor<T>& b) {
  const int m = a.dim(0), k = a.dim(1), p = b.dim(1);
  stm::Tensor<T> c({m, p});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < p; ++j) {
      T acc = 0;
      for (int kk = 0; kk < k; ++kk) acc += a.at(i, kk) * b.at(kk, j);
      c.at(i, j) = acc;
    }
  return c;
}

inline double iou_naive(const stm::BBox& a, const stm::BBox& b) {
  const double x1 = std::max(a.x, b.x);
  const double y1 = std::max(a.y, b.y);
  const double x2 = std::min(a.x + a.w, b.x + b.w);
  const double y2 = std::min(a.y + a.h, b.y + b.h);
  const double inter = std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
  return inter / (a.w * a.h + b.w * b.h - inter);
}

// Straightforward reimplementation of every reported metric.
inline stm::Metrics metrics_naive(const std::vector<stm::BBox>& preds,
                                  const std::vector<stm::BBox>& gts) {
  const std::size_t n = preds.size();
  stm::Metrics m;
  double auc = 0;
  for (int k = 0; k <= 100; ++k) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (iou_naive(preds[i], gts[i]) > k / 100.0) ++c;
    auc += static_cast<double>(c) / n;
  }
  m.success_auc = auc / 101.0;
  std::size_t prec = 0, nprec = 0, s50 = 0, s75 = 0;
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = iou_naive(preds[i], gts[i]);
    sum += v;
    if (v > 0.5) ++s50;
    if (v > 0.75) ++s75;
    const double dx = (preds[i].x + preds[i].w / 2) - (gts[i].x + gts[i].w / 2);
    const double dy = (preds[i].y + preds[i].h / 2) - (gts[i].y + gts[i].h / 2);
    const double d = std::sqrt(dx * dx + dy * dy);
    if (d <= 20.0) ++prec;
    if (d / std::sqrt(gts[i].w * gts[i].h) <= 0.2) ++nprec;
  }
  m.ao = sum / n;
  m.precision = static_cast<double>(prec) / n;
  m.norm_precision = static_cast<double>(nprec) / n;
  m.sr50 = static_cast<double>(s50) / n;
  m.sr75 = static_cast<double>(s75) / n;
  return m;
}

template <typename T>
stm::Tensor<T> random_tensor(stm::Shape shape, stm::Rng& rng, T lo = T(-1),
                             T hi = T(1)) {
  return stm::Tensor<T>::uniform(std::move(shape), rng, lo, hi);
}

}  // namespace oracle
