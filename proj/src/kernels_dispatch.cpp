#include "adasit/kernels.hpp"

#include "adasit/error.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace adasit::kernels {
namespace {

using DotFn = double (*)(const double*, const double*, std::size_t) noexcept;
using AxpyFn = void (*)(double, const double*, double*, std::size_t) noexcept;

struct Table {
  Backend backend;
  DotFn dot;
  AxpyFn axpy;
};

constexpr Table kScalarTable{Backend::scalar, &scalar::dot, &scalar::axpy};
#if defined(ADASIT_HAVE_AVX2)
constexpr Table kAvx2Table{Backend::avx2, &avx2::dot, &avx2::axpy};
#endif

bool cpu_has_avx2() noexcept {
#if defined(ADASIT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Table* table_for(Backend backend) noexcept {
  switch (backend) {
    case Backend::scalar:
      return &kScalarTable;
    case Backend::avx2:
#if defined(ADASIT_HAVE_AVX2)
      return cpu_has_avx2() ? &kAvx2Table : nullptr;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

const Table* initial_table() noexcept {
  if (const char* env = std::getenv("ADASIT_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &kScalarTable;
    if (want == "avx2") {
      if (const Table* t = table_for(Backend::avx2)) return t;
      return &kScalarTable;
    }
  }
  if (const Table* t = table_for(Backend::avx2)) return t;
  return &kScalarTable;
}

std::atomic<const Table*>& active() noexcept {
  static std::atomic<const Table*> table{initial_table()};
  return table;
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(std::string("kernel size mismatch in ") + what);
}

}  // namespace

std::string_view backend_name(Backend backend) noexcept {
  return backend == Backend::avx2 ? "avx2" : "scalar";
}

bool backend_available(Backend backend) noexcept { return table_for(backend) != nullptr; }

Backend active_backend() noexcept { return active().load(std::memory_order_acquire)->backend; }

void set_backend(Backend backend) {
  const Table* t = table_for(backend);
  if (t == nullptr) {
    throw Error("kernel backend '" + std::string(backend_name(backend)) + "' is not available on this CPU");
  }
  active().store(t, std::memory_order_release);
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot");
  return active().load(std::memory_order_acquire)->dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), "axpy");
  active().load(std::memory_order_acquire)->axpy(alpha, x.data(), y.data(), x.size());
}

void gemv_acc(std::span<const double> w, std::size_t rows, std::size_t cols,
              std::span<const double> x, std::span<double> y) {
  require(w.size() == rows * cols && x.size() == cols && y.size() == rows, "gemv_acc");
  const DotFn fn = active().load(std::memory_order_acquire)->dot;
  for (std::size_t r = 0; r < rows; ++r) y[r] += fn(w.data() + r * cols, x.data(), cols);
}

void gemv_t_acc(std::span<const double> w, std::size_t rows, std::size_t cols,
                std::span<const double> g, std::span<double> y) {
  require(w.size() == rows * cols && g.size() == rows && y.size() == cols, "gemv_t_acc");
  const AxpyFn fn = active().load(std::memory_order_acquire)->axpy;
  for (std::size_t r = 0; r < rows; ++r) {
    if (g[r] != 0.0) fn(g[r], w.data() + r * cols, y.data(), cols);
  }
}

void rank1_acc(std::span<double> w, std::size_t rows, std::size_t cols,
               std::span<const double> g, std::span<const double> x) {
  require(w.size() == rows * cols && g.size() == rows && x.size() == cols, "rank1_acc");
  const AxpyFn fn = active().load(std::memory_order_acquire)->axpy;
  for (std::size_t r = 0; r < rows; ++r) {
    if (g[r] != 0.0) fn(g[r], x.data(), w.data() + r * cols, cols);
  }
}

}  // namespace adasit::kernels
