#include "xqcfd/vmath.hpp"

#include <cmath>

#if defined(__AVX512F__) && !defined(XQCFD_NO_LIBMVEC)
#include <immintrin.h>
extern "C" {
__m512d _ZGVeN8v_tanh(__m512d);
__m512d _ZGVeN8v_exp(__m512d);
__m512d _ZGVeN8v_log(__m512d);
__m512d _ZGVeN8v_sin(__m512d);
__m512d _ZGVeN8v_cos(__m512d);
__m512d _ZGVeN8v_log1p(__m512d);
}
#define XQCFD_VEC_LOOP(vecfn, scalarfn)                      \
  std::size_t i = 0;                                         \
  for (; i + 8 <= n; i += 8) {                               \
    _mm512_storeu_pd(y + i, vecfn(_mm512_loadu_pd(x + i)));  \
  }                                                          \
  for (; i < n; ++i) y[i] = scalarfn(x[i]);
#else
#define XQCFD_VEC_LOOP(vecfn, scalarfn) \
  for (std::size_t i = 0; i < n; ++i) y[i] = scalarfn(x[i]);
#endif

namespace xqcfd {

void vtanh(const double* x, double* y, std::size_t n) {
  XQCFD_VEC_LOOP(_ZGVeN8v_tanh, std::tanh)
}

void vexp(const double* x, double* y, std::size_t n) {
  XQCFD_VEC_LOOP(_ZGVeN8v_exp, std::exp)
}

void vlog(const double* x, double* y, std::size_t n) {
  XQCFD_VEC_LOOP(_ZGVeN8v_log, std::log)
}

void vsin(const double* x, double* y, std::size_t n) {
  XQCFD_VEC_LOOP(_ZGVeN8v_sin, std::sin)
}

void vcos(const double* x, double* y, std::size_t n) {
  XQCFD_VEC_LOOP(_ZGVeN8v_cos, std::cos)
}

void vsoftplus(const double* x, double* y, std::size_t n) {
  // softplus(x) = max(x, 0) + log1p(exp(-|x|))
#if defined(__AVX512F__) && !defined(XQCFD_NO_LIBMVEC)
  std::size_t i = 0;
  const __m512d zero = _mm512_setzero_pd();
  for (; i + 8 <= n; i += 8) {
    __m512d v = _mm512_loadu_pd(x + i);
    __m512d neg_abs = _mm512_min_pd(v, _mm512_sub_pd(zero, v));
    __m512d l = _ZGVeN8v_log1p(_ZGVeN8v_exp(neg_abs));
    _mm512_storeu_pd(y + i, _mm512_add_pd(_mm512_max_pd(v, zero), l));
  }
  for (; i < n; ++i) {
    y[i] = std::fmax(x[i], 0.0) + std::log1p(std::exp(-std::fabs(x[i])));
  }
#else
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::fmax(x[i], 0.0) + std::log1p(std::exp(-std::fabs(x[i])));
  }
#endif
}

double abs_sum(const double* x, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += std::fabs(x[i]);
    s1 += std::fabs(x[i + 1]);
    s2 += std::fabs(x[i + 2]);
    s3 += std::fabs(x[i + 3]);
  }
  for (; i < n; ++i) s0 += std::fabs(x[i]);
  return (s0 + s1) + (s2 + s3);
}

}  // namespace xqcfd
