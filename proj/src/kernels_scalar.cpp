#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "stm/kernels.hpp"

namespace stm::kernels {

float exp_approx(float x) {
  // Cody-Waite range reduction plus the classic degree-5 polynomial. The
  // AVX2 build mirrors this operation sequence exactly; keep the two in
  // lockstep when touching either.
  x = std::min(x, 88.02f);
  x = std::max(x, -87.33f);
  const float n = std::floor(x * 1.44269504f + 0.5f);
  float r = x - n * 0.693359375f;
  r = r - n * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float y = p * r * r + r + 1.0f;
  const std::int32_t ni = static_cast<std::int32_t>(n);
  std::uint32_t bits = static_cast<std::uint32_t>(ni + 127) << 23;
  float pow2n;
  std::memcpy(&pow2n, &bits, sizeof(pow2n));
  return y * pow2n;
}

namespace {

template <typename T>
T exp_elem(T x);
template <>
float exp_elem(float x) {
  return exp_approx(x);
}
template <>
double exp_elem(double x) {
  return std::exp(x);
}

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int p, bool acc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * p;
    const T* arow = a + static_cast<std::size_t>(i) * k;
    int k0 = 0;
    if (!acc) {
      const T aik = arow[0];
      const T* brow = b;
      for (int j = 0; j < p; ++j) crow[j] = aik * brow[j];
      k0 = 1;
    }
    for (int kk = k0; kk < k; ++kk) {
      const T aik = arow[kk];
      const T* brow = b + static_cast<std::size_t>(kk) * p;
      for (int j = 0; j < p; ++j) crow[j] += aik * brow[j];
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

template <typename T>
void softmax_columns(const T* x, T* y, int m, int k, T s) {
  const T inv = T(1) / s;
  std::vector<T> colmax(static_cast<std::size_t>(k));
  std::vector<double> colsum(static_cast<std::size_t>(k), 0.0);
  for (int j = 0; j < k; ++j) colmax[j] = x[j] * inv;
  for (int i = 1; i < m; ++i) {
    const T* row = x + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j) colmax[j] = std::max(colmax[j], row[j] * inv);
  }
  for (int i = 0; i < m; ++i) {
    const T* row = x + static_cast<std::size_t>(i) * k;
    T* yrow = y + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      const T e = exp_elem<T>(row[j] * inv - colmax[j]);
      yrow[j] = e;
      colsum[j] += static_cast<double>(e);
    }
  }
  for (int i = 0; i < m; ++i) {
    T* yrow = y + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j)
      yrow[j] = static_cast<T>(static_cast<double>(yrow[j]) / colsum[j]);
  }
}

template <typename T>
void relu(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > T(0)) dx[i] += dy[i];
}

template <typename T>
void add(const T* a, const T* b, T* c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

template <typename T>
void mul_acc(const T* a, const T* b, T* c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) c[i] += a[i] * b[i];
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale(T alpha, T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = alpha * x[i];
}

template <typename T>
void add_row_bias(T* c, const T* bias, int m, int p) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * p;
    const T bi = bias[i];
    for (int j = 0; j < p; ++j) crow[j] += bi;
  }
}

template <typename T>
void sgd_momentum(T* p, T* v, const T* g, std::size_t n, T mu, T lr, T wd) {
  const T lrwd = lr * wd;
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = mu * v[i] + g[i];
    p[i] = p[i] - lr * v[i] - lrwd * p[i];
  }
}

template <typename T>
constexpr KernelTable<T> make_table() {
  KernelTable<T> t{};
  t.gemm_nn = &gemm_nn<T>;
  t.transpose = &transpose<T>;
  t.softmax_columns = &softmax_columns<T>;
  t.relu = &relu<T>;
  t.relu_backward = &relu_backward<T>;
  t.add = &add<T>;
  t.mul = &mul<T>;
  t.mul_acc = &mul_acc<T>;
  t.axpy = &axpy<T>;
  t.scale = &scale<T>;
  t.add_row_bias = &add_row_bias<T>;
  t.sgd_momentum = &sgd_momentum<T>;
  return t;
}

}  // namespace

namespace detail {

const KernelTable<float>& scalar_table_f32() {
  static const KernelTable<float> t = make_table<float>();
  return t;
}

const KernelTable<double>& scalar_table_f64() {
  static const KernelTable<double> t = make_table<double>();
  return t;
}

}  // namespace detail

}  // namespace stm::kernels
