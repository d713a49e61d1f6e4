#include "omni/common.hpp"

#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace omni {

double Rng::normal() {
  // Box-Muller, no cached spare.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

int max_threads() {
  static int cached = [] {
    if (const char* env = std::getenv("OMNI_THREADS")) {
      int n = std::atoi(env);
      if (n >= 1) return n;
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
  }();
  return cached;
}

}  // namespace omni
