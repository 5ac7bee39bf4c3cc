#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "stm/kernels.hpp"

namespace stm::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable<float>* maybe_avx2_f32() {
#if defined(STMT_HAVE_AVX2)
  return cpu_has_avx2() ? detail::avx2_table_f32() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable<double>* maybe_avx2_f64() {
#if defined(STMT_HAVE_AVX2)
  return cpu_has_avx2() ? detail::avx2_table_f64() : nullptr;
#else
  return nullptr;
#endif
}

Isa pick_default() {
  if (const char* env = std::getenv("STMT_ISA")) {
    if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (maybe_avx2_f32() == nullptr)
        throw std::runtime_error("STMT_ISA=avx2 requested but unavailable");
      return Isa::avx2;
    }
  }
  return maybe_avx2_f32() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& active_slot() {
  static std::atomic<Isa> slot{pick_default()};
  return slot;
}

}  // namespace

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "?";
}

bool avx2_supported() { return maybe_avx2_f32() != nullptr; }

Isa active_isa() { return active_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::avx2 && !avx2_supported())
    throw std::invalid_argument("avx2 kernels unavailable on this CPU");
  active_slot().store(isa, std::memory_order_relaxed);
}

template <>
const KernelTable<float>& table<float>(Isa isa) {
  if (isa == Isa::avx2) {
    const auto* t = maybe_avx2_f32();
    if (!t) throw std::invalid_argument("avx2 kernels unavailable");
    return *t;
  }
  return detail::scalar_table_f32();
}

template <>
const KernelTable<double>& table<double>(Isa isa) {
  if (isa == Isa::avx2) {
    const auto* t = maybe_avx2_f64();
    if (!t) throw std::invalid_argument("avx2 kernels unavailable");
    return *t;
  }
  return detail::scalar_table_f64();
}

template <>
const KernelTable<float>& active<float>() {
  return table<float>(active_isa());
}

template <>
const KernelTable<double>& active<double>() {
  return table<double>(active_isa());
}

}  // namespace stm::kernels
