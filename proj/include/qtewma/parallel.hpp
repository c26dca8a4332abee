#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

namespace qtewma {

// Thread count for a parallel region; requested <= 0 means the OpenMP default.
inline int resolve_workers(int requested) noexcept {
#ifdef _OPENMP
    return requested > 0 ? requested : omp_get_max_threads();
#else
    (void)requested;
    return 1;
#endif
}

}  // namespace qtewma
