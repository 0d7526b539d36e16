#include "assoc/detail/kernels.h"

#include <algorithm>
#include <cmath>

// This file is compiled with -ffast-math (see CMakeLists.txt) so that glibc
// exposes its SIMD expm1 declarations and the loops below vectorize. Keep it
// free of reductions or anything else sensitive to float reassociation.

namespace assoc::detail {

void elu_forward(const float* x, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    float v = x[i];
    float e = std::expm1(std::min(v, 0.0f));
    out[i] = v > 0.0f ? v : e;
  }
}

void elu_forward(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double v = x[i];
    double e = std::expm1(std::min(v, 0.0));
    out[i] = v > 0.0 ? v : e;
  }
}

}  // namespace assoc::detail
