#pragma once

// Dense double-precision kernels used by the backbone and the meta-loop.
//
// Each primitive has a scalar reference implementation and an AVX2/FMA
// variant. The variant is chosen once at startup from CPU support and the
// ADASIT_SIMD environment variable ("scalar" or "avx2"), and can be switched
// explicitly with set_backend(). Results of different backends agree to
// rounding, not bitwise; a single process always uses one backend for a run.

#include <cstddef>
#include <span>
#include <string_view>

namespace adasit::kernels {

enum class Backend { scalar, avx2 };

std::string_view backend_name(Backend backend) noexcept;
bool backend_available(Backend backend) noexcept;
Backend active_backend() noexcept;
/// Throws adasit::Error if the backend is not supported on this CPU/build.
void set_backend(Backend backend);

double dot(std::span<const double> a, std::span<const double> b);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// y += W x, W row-major rows x cols.
void gemv_acc(std::span<const double> w, std::size_t rows, std::size_t cols,
              std::span<const double> x, std::span<double> y);
/// y += W^T g, W row-major rows x cols.
void gemv_t_acc(std::span<const double> w, std::size_t rows, std::size_t cols,
                std::span<const double> g, std::span<double> y);
/// W += g x^T
void rank1_acc(std::span<double> w, std::size_t rows, std::size_t cols,
               std::span<const double> g, std::span<const double> x);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
}  // namespace scalar

#if defined(ADASIT_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
}  // namespace avx2
#endif

}  // namespace adasit::kernels
