#pragma once

#include <cstddef>

namespace assoc::detail {

// ELU forward: out[i] = x[i] if x[i] > 0 else expm1(x[i]).
// Implemented in kernels.cpp, which is built with vector-math flags so the
// expm1 call lowers to libmvec SIMD variants instead of scalar libm.
void elu_forward(const float* x, float* out, std::size_t n);
void elu_forward(const double* x, double* out, std::size_t n);

}  // namespace assoc::detail
