#pragma once

#include <cstddef>
#include <string_view>

// Vector kernels used by the training and extraction inner loops.
// Scalar reference implementations always exist; an AVX2/FMA variant is
// selected at runtime when the CPU supports it. The two variants are
// equivalence-tested; FMA reassociation may change the last few ulps.

namespace snpkit::kernels {

enum class Backend { scalar, avx2 };

// Active backend. Defaults to the best the CPU supports; can be forced
// (e.g. SNPKIT_BACKEND=scalar) for bit-stable cross-machine runs.
Backend active_backend();
void set_backend(Backend b);
bool cpu_has_avx2();
std::string_view backend_name(Backend b);

// y += a * x
void axpy(double a, const double* x, double* y, std::size_t n);
// sum_i x[i] * y[i]
double dot(const double* x, const double* y, std::size_t n);
// x *= a
void scale(double a, double* x, std::size_t n);
double sum(const double* x, std::size_t n);
double max(const double* x, std::size_t n);
// sum_i |x[i]|
double asum(const double* x, std::size_t n);

namespace detail {
void axpy_scalar(double a, const double* x, double* y, std::size_t n);
double dot_scalar(const double* x, const double* y, std::size_t n);
void scale_scalar(double a, double* x, std::size_t n);
double sum_scalar(const double* x, std::size_t n);
double max_scalar(const double* x, std::size_t n);
double asum_scalar(const double* x, std::size_t n);

void axpy_avx2(double a, const double* x, double* y, std::size_t n);
double dot_avx2(const double* x, const double* y, std::size_t n);
void scale_avx2(double a, double* x, std::size_t n);
double sum_avx2(const double* x, std::size_t n);
double max_avx2(const double* x, std::size_t n);
double asum_avx2(const double* x, std::size_t n);
}  // namespace detail

}  // namespace snpkit::kernels
