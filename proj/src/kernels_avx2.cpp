// AVX2 kernel variants. Vectorization runs across independent output
// elements only; per-element operation sequences match kernels_scalar.cpp
// exactly (no FMA, ascending-k accumulation), so outputs are bit-identical
// to the scalar table. Compiled with -mavx2 and dispatched at runtime.

#if defined(__AVX2__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "stm/kernels.hpp"

namespace stm::kernels {
namespace {

inline __m256 exp8(__m256 x) {
  // Mirrors exp_approx in kernels_scalar.cpp step for step.
  x = _mm256_min_ps(x, _mm256_set1_ps(88.02f));
  x = _mm256_max_ps(x, _mm256_set1_ps(-87.33f));
  const __m256 n = _mm256_floor_ps(_mm256_add_ps(
      _mm256_mul_ps(x, _mm256_set1_ps(1.44269504f)), _mm256_set1_ps(0.5f)));
  __m256 r =
      _mm256_sub_ps(x, _mm256_mul_ps(n, _mm256_set1_ps(0.693359375f)));
  r = _mm256_sub_ps(r, _mm256_mul_ps(n, _mm256_set1_ps(-2.12194440e-4f)));
  __m256 p = _mm256_set1_ps(1.9875691500e-4f);
  p = _mm256_add_ps(_mm256_mul_ps(p, r), _mm256_set1_ps(1.3981999507e-3f));
  p = _mm256_add_ps(_mm256_mul_ps(p, r), _mm256_set1_ps(8.3334519073e-3f));
  p = _mm256_add_ps(_mm256_mul_ps(p, r), _mm256_set1_ps(4.1665795894e-2f));
  p = _mm256_add_ps(_mm256_mul_ps(p, r), _mm256_set1_ps(1.6666665459e-1f));
  p = _mm256_add_ps(_mm256_mul_ps(p, r), _mm256_set1_ps(5.0000001201e-1f));
  const __m256 y = _mm256_add_ps(
      _mm256_add_ps(_mm256_mul_ps(_mm256_mul_ps(p, r), r), r),
      _mm256_set1_ps(1.0f));
  const __m256i ni = _mm256_cvttps_epi32(n);
  const __m256i bits =
      _mm256_slli_epi32(_mm256_add_epi32(ni, _mm256_set1_epi32(127)), 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(bits));
}

struct VecF {
  using Reg = __m256;
  using Elem = float;
  static constexpr int kWidth = 8;
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg v) { _mm256_storeu_ps(p, v); }
  static Reg set1(float v) { return _mm256_set1_ps(v); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_ps(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_ps(a, b); }
  static Reg max(Reg a, Reg b) { return _mm256_max_ps(a, b); }
  static Reg blend_gt0(Reg x, Reg keep, Reg take) {
    const __m256 mask = _mm256_cmp_ps(x, _mm256_setzero_ps(), _CMP_GT_OQ);
    return _mm256_blendv_ps(keep, take, mask);
  }
};

struct VecD {
  using Reg = __m256d;
  using Elem = double;
  static constexpr int kWidth = 4;
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg v) { _mm256_storeu_pd(p, v); }
  static Reg set1(double v) { return _mm256_set1_pd(v); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_pd(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_pd(a, b); }
  static Reg max(Reg a, Reg b) { return _mm256_max_pd(a, b); }
  static Reg blend_gt0(Reg x, Reg keep, Reg take) {
    const __m256d mask = _mm256_cmp_pd(x, _mm256_setzero_pd(), _CMP_GT_OQ);
    return _mm256_blendv_pd(keep, take, mask);
  }
};

template <typename V>
void gemm_nn(const typename V::Elem* a, const typename V::Elem* b,
             typename V::Elem* c, int m, int k, int p, bool acc) {
  using T = typename V::Elem;
  const int pv = p - p % V::kWidth;
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * p;
    const T* arow = a + static_cast<std::size_t>(i) * k;
    int k0 = 0;
    if (!acc) {
      const T aik = arow[0];
      const auto av = V::set1(aik);
      int j = 0;
      for (; j < pv; j += V::kWidth)
        V::store(crow + j, V::mul(av, V::load(b + j)));
      for (; j < p; ++j) crow[j] = aik * b[j];
      k0 = 1;
    }
    for (int kk = k0; kk < k; ++kk) {
      const T aik = arow[kk];
      const auto av = V::set1(aik);
      const T* brow = b + static_cast<std::size_t>(kk) * p;
      int j = 0;
      for (; j < pv; j += V::kWidth) {
        auto cv = V::load(crow + j);
        cv = V::add(cv, V::mul(av, V::load(brow + j)));
        V::store(crow + j, cv);
      }
      for (; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
}

template <typename T>
void transpose(const T* in, T* out, int m, int k) {
  constexpr int kBlock = 32;
  for (int i0 = 0; i0 < m; i0 += kBlock) {
    const int i1 = std::min(i0 + kBlock, m);
    for (int j0 = 0; j0 < k; j0 += kBlock) {
      const int j1 = std::min(j0 + kBlock, k);
      for (int i = i0; i < i1; ++i)
        for (int j = j0; j < j1; ++j)
          out[static_cast<std::size_t>(j) * m + i] =
              in[static_cast<std::size_t>(i) * k + j];
    }
  }
}

void softmax_columns_f32(const float* x, float* y, int m, int k, float s) {
  const float inv = 1.0f / s;
  const __m256 vinv = _mm256_set1_ps(inv);
  std::vector<float> colmax(static_cast<std::size_t>(k));
  std::vector<double> colsum(static_cast<std::size_t>(k), 0.0);
  const int kv = k - k % 8;

  for (int j = 0; j < kv; j += 8)
    _mm256_storeu_ps(colmax.data() + j,
                     _mm256_mul_ps(_mm256_loadu_ps(x + j), vinv));
  for (int j = kv; j < k; ++j) colmax[j] = x[j] * inv;
  for (int i = 1; i < m; ++i) {
    const float* row = x + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < kv; j += 8) {
      const __m256 z = _mm256_mul_ps(_mm256_loadu_ps(row + j), vinv);
      _mm256_storeu_ps(colmax.data() + j,
                       _mm256_max_ps(_mm256_loadu_ps(colmax.data() + j), z));
    }
    for (int j = kv; j < k; ++j)
      colmax[j] = std::max(colmax[j], row[j] * inv);
  }

  for (int i = 0; i < m; ++i) {
    const float* row = x + static_cast<std::size_t>(i) * k;
    float* yrow = y + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < kv; j += 8) {
      const __m256 z = _mm256_sub_ps(
          _mm256_mul_ps(_mm256_loadu_ps(row + j), vinv),
          _mm256_loadu_ps(colmax.data() + j));
      const __m256 e = exp8(z);
      _mm256_storeu_ps(yrow + j, e);
      const __m256d elo = _mm256_cvtps_pd(_mm256_castps256_ps128(e));
      const __m256d ehi = _mm256_cvtps_pd(_mm256_extractf128_ps(e, 1));
      _mm256_storeu_pd(colsum.data() + j,
                       _mm256_add_pd(_mm256_loadu_pd(colsum.data() + j), elo));
      _mm256_storeu_pd(
          colsum.data() + j + 4,
          _mm256_add_pd(_mm256_loadu_pd(colsum.data() + j + 4), ehi));
    }
    for (int j = kv; j < k; ++j) {
      const float e = exp_approx(row[j] * inv - colmax[j]);
      yrow[j] = e;
      colsum[j] += static_cast<double>(e);
    }
  }

  for (int i = 0; i < m; ++i) {
    float* yrow = y + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < kv; j += 8) {
      const __m256 e = _mm256_loadu_ps(yrow + j);
      const __m256d qlo =
          _mm256_div_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(e)),
                        _mm256_loadu_pd(colsum.data() + j));
      const __m256d qhi =
          _mm256_div_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(e, 1)),
                        _mm256_loadu_pd(colsum.data() + j + 4));
      const __m256 q = _mm256_set_m128(_mm256_cvtpd_ps(qhi),
                                       _mm256_cvtpd_ps(qlo));
      _mm256_storeu_ps(yrow + j, q);
    }
    for (int j = kv; j < k; ++j)
      yrow[j] = static_cast<float>(static_cast<double>(yrow[j]) / colsum[j]);
  }
}

// Double softmax keeps the scalar form; exp dominates and goes through libm
// either way. Arithmetic is identical to the scalar table by construction.
void softmax_columns_f64(const double* x, double* y, int m, int k, double s) {
  const double inv = 1.0 / s;
  std::vector<double> colmax(static_cast<std::size_t>(k));
  std::vector<double> colsum(static_cast<std::size_t>(k), 0.0);
  for (int j = 0; j < k; ++j) colmax[j] = x[j] * inv;
  for (int i = 1; i < m; ++i) {
    const double* row = x + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j)
      colmax[j] = std::max(colmax[j], row[j] * inv);
  }
  for (int i = 0; i < m; ++i) {
    const double* row = x + static_cast<std::size_t>(i) * k;
    double* yrow = y + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      const double e = std::exp(row[j] * inv - colmax[j]);
      yrow[j] = e;
      colsum[j] += e;
    }
  }
  for (int i = 0; i < m; ++i) {
    double* yrow = y + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j) yrow[j] = yrow[j] / colsum[j];
  }
}

template <typename V>
void relu(const typename V::Elem* x, typename V::Elem* y, std::size_t n) {
  using T = typename V::Elem;
  const std::size_t nv = n - n % V::kWidth;
  const auto zero = V::set1(T(0));
  for (std::size_t i = 0; i < nv; i += V::kWidth)
    V::store(y + i, V::max(V::load(x + i), zero));
  for (std::size_t i = nv; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename V>
void relu_backward(const typename V::Elem* x, const typename V::Elem* dy,
                   typename V::Elem* dx, std::size_t n) {
  using T = typename V::Elem;
  const std::size_t nv = n - n % V::kWidth;
  for (std::size_t i = 0; i < nv; i += V::kWidth) {
    const auto dxv = V::load(dx + i);
    const auto sum = V::add(dxv, V::load(dy + i));
    V::store(dx + i, V::blend_gt0(V::load(x + i), dxv, sum));
  }
  for (std::size_t i = nv; i < n; ++i)
    if (x[i] > T(0)) dx[i] += dy[i];
}

template <typename V>
void add(const typename V::Elem* a, const typename V::Elem* b,
         typename V::Elem* c, std::size_t n) {
  const std::size_t nv = n - n % V::kWidth;
  for (std::size_t i = 0; i < nv; i += V::kWidth)
    V::store(c + i, V::add(V::load(a + i), V::load(b + i)));
  for (std::size_t i = nv; i < n; ++i) c[i] = a[i] + b[i];
}

template <typename V>
void mul(const typename V::Elem* a, const typename V::Elem* b,
         typename V::Elem* c, std::size_t n) {
  const std::size_t nv = n - n % V::kWidth;
  for (std::size_t i = 0; i < nv; i += V::kWidth)
    V::store(c + i, V::mul(V::load(a + i), V::load(b + i)));
  for (std::size_t i = nv; i < n; ++i) c[i] = a[i] * b[i];
}

template <typename V>
void mul_acc(const typename V::Elem* a, const typename V::Elem* b,
             typename V::Elem* c, std::size_t n) {
  const std::size_t nv = n - n % V::kWidth;
  for (std::size_t i = 0; i < nv; i += V::kWidth)
    V::store(c + i,
             V::add(V::load(c + i), V::mul(V::load(a + i), V::load(b + i))));
  for (std::size_t i = nv; i < n; ++i) c[i] += a[i] * b[i];
}

template <typename V>
void axpy(typename V::Elem alpha, const typename V::Elem* x,
          typename V::Elem* y, std::size_t n) {
  const std::size_t nv = n - n % V::kWidth;
  const auto va = V::set1(alpha);
  for (std::size_t i = 0; i < nv; i += V::kWidth)
    V::store(y + i, V::add(V::load(y + i), V::mul(va, V::load(x + i))));
  for (std::size_t i = nv; i < n; ++i) y[i] += alpha * x[i];
}

template <typename V>
void scale(typename V::Elem alpha, typename V::Elem* x, std::size_t n) {
  const std::size_t nv = n - n % V::kWidth;
  const auto va = V::set1(alpha);
  for (std::size_t i = 0; i < nv; i += V::kWidth)
    V::store(x + i, V::mul(va, V::load(x + i)));
  for (std::size_t i = nv; i < n; ++i) x[i] = alpha * x[i];
}

template <typename V>
void add_row_bias(typename V::Elem* c, const typename V::Elem* bias, int m,
                  int p) {
  using T = typename V::Elem;
  const int pv = p - p % V::kWidth;
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * p;
    const T bi = bias[i];
    const auto vb = V::set1(bi);
    int j = 0;
    for (; j < pv; j += V::kWidth)
      V::store(crow + j, V::add(V::load(crow + j), vb));
    for (; j < p; ++j) crow[j] += bi;
  }
}

template <typename V>
void sgd_momentum(typename V::Elem* p, typename V::Elem* v,
                  const typename V::Elem* g, std::size_t n,
                  typename V::Elem mu, typename V::Elem lr,
                  typename V::Elem wd) {
  using T = typename V::Elem;
  const T lrwd = lr * wd;
  const std::size_t nv = n - n % V::kWidth;
  const auto vmu = V::set1(mu);
  const auto vlr = V::set1(lr);
  const auto vlrwd = V::set1(lrwd);
  for (std::size_t i = 0; i < nv; i += V::kWidth) {
    auto vv = V::add(V::mul(vmu, V::load(v + i)), V::load(g + i));
    V::store(v + i, vv);
    const auto pv_ = V::load(p + i);
    // p - lr*v - lrwd*p, evaluated left to right as in the scalar kernel
    auto res = V::sub(pv_, V::mul(vlr, vv));
    res = V::sub(res, V::mul(vlrwd, pv_));
    V::store(p + i, res);
  }
  for (std::size_t i = nv; i < n; ++i) {
    v[i] = mu * v[i] + g[i];
    p[i] = p[i] - lr * v[i] - lrwd * p[i];
  }
}

template <typename V>
KernelTable<typename V::Elem> make_table() {
  using T = typename V::Elem;
  KernelTable<T> t{};
  t.gemm_nn = &gemm_nn<V>;
  t.transpose = &transpose<T>;
  t.relu = &relu<V>;
  t.relu_backward = &relu_backward<V>;
  t.add = &add<V>;
  t.mul = &mul<V>;
  t.mul_acc = &mul_acc<V>;
  t.axpy = &axpy<V>;
  t.scale = &scale<V>;
  t.add_row_bias = &add_row_bias<V>;
  t.sgd_momentum = &sgd_momentum<V>;
  return t;
}

}  // namespace

namespace detail {

const KernelTable<float>* avx2_table_f32() {
  static const KernelTable<float> t = [] {
    KernelTable<float> x = make_table<VecF>();
    x.softmax_columns = &softmax_columns_f32;
    return x;
  }();
  return &t;
}

const KernelTable<double>* avx2_table_f64() {
  static const KernelTable<double> t = [] {
    KernelTable<double> x = make_table<VecD>();
    x.softmax_columns = &softmax_columns_f64;
    return x;
  }();
  return &t;
}

}  // namespace detail

}  // namespace stm::kernels

#endif  // __AVX2__
