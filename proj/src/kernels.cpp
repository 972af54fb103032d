#include "snpkit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#if defined(__x86_64__) || defined(_M_X64)
#define SNPKIT_X86 1
#include <immintrin.h>
#else
#define SNPKIT_X86 0
#endif

namespace snpkit::kernels {

namespace detail {

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void scale_scalar(double a, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

double sum_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double max_scalar(const double* x, std::size_t n) {
  double m = -HUGE_VAL;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

double asum_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::fabs(x[i]);
  return acc;
}

#if SNPKIT_X86

__attribute__((target("avx2,fma"))) void axpy_avx2(double a, const double* x,
                                                   double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

__attribute__((target("avx2,fma"))) double dot_avx2(const double* x,
                                                    const double* y,
                                                    std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4),
                           _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  acc0 = _mm256_add_pd(acc0, acc1);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc0);
  double acc = lanes[0] + lanes[1] + lanes[2] + lanes[3];
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

__attribute__((target("avx2,fma"))) void scale_avx2(double a, double* x,
                                                    std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= a;
}

__attribute__((target("avx2,fma"))) double sum_avx2(const double* x,
                                                    std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double s = lanes[0] + lanes[1] + lanes[2] + lanes[3];
  for (; i < n; ++i) s += x[i];
  return s;
}

__attribute__((target("avx2,fma"))) double max_avx2(const double* x,
                                                    std::size_t n) {
  if (n == 0) return -HUGE_VAL;
  __m256d acc = _mm256_set1_pd(-HUGE_VAL);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double m = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

__attribute__((target("avx2,fma"))) double asum_avx2(const double* x,
                                                     std::size_t n) {
  const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_and_pd(mask, _mm256_loadu_pd(x + i)));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double s = lanes[0] + lanes[1] + lanes[2] + lanes[3];
  for (; i < n; ++i) s += std::fabs(x[i]);
  return s;
}

#else

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  axpy_scalar(a, x, y, n);
}
double dot_avx2(const double* x, const double* y, std::size_t n) {
  return dot_scalar(x, y, n);
}
void scale_avx2(double a, double* x, std::size_t n) { scale_scalar(a, x, n); }
double sum_avx2(const double* x, std::size_t n) { return sum_scalar(x, n); }
double max_avx2(const double* x, std::size_t n) { return max_scalar(x, n); }
double asum_avx2(const double* x, std::size_t n) { return asum_scalar(x, n); }

#endif

}  // namespace detail

bool cpu_has_avx2() {
#if SNPKIT_X86
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {
Backend pick_default() {
  if (const char* env = std::getenv("SNPKIT_BACKEND")) {
    if (std::string_view(env) == "scalar") return Backend::scalar;
    if (std::string_view(env) == "avx2" && cpu_has_avx2()) return Backend::avx2;
  }
  return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}
Backend g_backend = pick_default();
}  // namespace

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !cpu_has_avx2()) b = Backend::scalar;
  g_backend = b;
}

std::string_view backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  g_backend == Backend::avx2 ? detail::axpy_avx2(a, x, y, n)
                             : detail::axpy_scalar(a, x, y, n);
}

double dot(const double* x, const double* y, std::size_t n) {
  return g_backend == Backend::avx2 ? detail::dot_avx2(x, y, n)
                                    : detail::dot_scalar(x, y, n);
}

void scale(double a, double* x, std::size_t n) {
  g_backend == Backend::avx2 ? detail::scale_avx2(a, x, n)
                             : detail::scale_scalar(a, x, n);
}

double sum(const double* x, std::size_t n) {
  return g_backend == Backend::avx2 ? detail::sum_avx2(x, n)
                                    : detail::sum_scalar(x, n);
}

double max(const double* x, std::size_t n) {
  return g_backend == Backend::avx2 ? detail::max_avx2(x, n)
                                    : detail::max_scalar(x, n);
}

double asum(const double* x, std::size_t n) {
  return g_backend == Backend::avx2 ? detail::asum_avx2(x, n)
                                    : detail::asum_scalar(x, n);
}

}  // namespace snpkit::kernels
