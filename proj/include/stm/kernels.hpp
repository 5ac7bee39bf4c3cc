#pragma once

#include <cstddef>

namespace stm::kernels {

// Arithmetic contract shared by every kernel variant: each output element is
// accumulated over its reduction index in ascending order, one rounding per
// multiply and per add, no FMA, no split accumulators. SIMD variants
// vectorize across independent output elements only, so every instruction
// set produces bit-identical results and runtime dispatch never shows up in
// the numerics. The equivalence tests assert exact equality.
//
// Softmax normalizers are accumulated in double even for float data; column
// sums would otherwise drift well past 1e-6 at tens of thousands of rows.

template <typename T>
struct KernelTable {
  // c[m x p] = a[m x k] * b[k x p]; accumulates into c when acc is set.
  void (*gemm_nn)(const T* a, const T* b, T* c, int m, int k, int p, bool acc);
  // out[k x m] = in[m x k] transposed.
  void (*transpose)(const T* in, T* out, int m, int k);
  // y[m x k]: softmax over rows within each column of x/s, max-subtracted.
  void (*softmax_columns)(const T* x, T* y, int m, int k, T s);
  void (*relu)(const T* x, T* y, std::size_t n);
  // dx += dy where x > 0.
  void (*relu_backward)(const T* x, const T* dy, T* dx, std::size_t n);
  void (*add)(const T* a, const T* b, T* c, std::size_t n);
  void (*mul)(const T* a, const T* b, T* c, std::size_t n);
  // c += a * b, elementwise.
  void (*mul_acc)(const T* a, const T* b, T* c, std::size_t n);
  // y += alpha * x.
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  void (*scale)(T alpha, T* x, std::size_t n);
  // c[i][*] += bias[i] for c[m x p].
  void (*add_row_bias)(T* c, const T* bias, int m, int p);
  // v = mu*v + g; p -= lr*v + lr*wd*p  (decoupled decay).
  void (*sgd_momentum)(T* p, T* v, const T* g, std::size_t n, T mu, T lr,
                       T wd);
};

enum class Isa { scalar, avx2 };

const char* isa_name(Isa isa);
bool avx2_supported();

// Active table: picked once from CPU capabilities, overridable via the
// STMT_ISA environment variable (scalar|avx2) or set_active_isa.
Isa active_isa();
void set_active_isa(Isa isa);

template <typename T>
const KernelTable<T>& active();

// Direct access to a specific variant (throws if unavailable on this CPU);
// used by the equivalence tests.
template <typename T>
const KernelTable<T>& table(Isa isa);

namespace detail {
const KernelTable<float>& scalar_table_f32();
const KernelTable<double>& scalar_table_f64();
// Null when the binary lacks AVX2 support.
const KernelTable<float>* avx2_table_f32();
const KernelTable<double>* avx2_table_f64();
}  // namespace detail

// Branch-free polynomial expf used inside the float softmax. Scalar and AVX2
// builds perform the identical operation sequence per element, so the two
// softmax variants agree bit for bit. Relative error is a few 1e-8.
float exp_approx(float x);

}  // namespace stm::kernels
