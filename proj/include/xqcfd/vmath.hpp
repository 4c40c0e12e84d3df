#pragma once

#include <cstddef>

namespace xqcfd {

// Elementwise fp64 kernels over contiguous arrays. Backed by glibc's
// vectorized libmvec on AVX-512 builds, scalar libm otherwise; results agree
// with libm to <= 2 ulp either way.
void vtanh(const double* x, double* y, std::size_t n);
void vexp(const double* x, double* y, std::size_t n);
void vlog(const double* x, double* y, std::size_t n);
void vsin(const double* x, double* y, std::size_t n);
void vcos(const double* x, double* y, std::size_t n);
// softplus(x) = log(1 + e^x), overflow-safe.
void vsoftplus(const double* x, double* y, std::size_t n);

// Sum of |x_i|; NaN/Inf anywhere makes the result non-finite.
double abs_sum(const double* x, std::size_t n);

}  // namespace xqcfd
