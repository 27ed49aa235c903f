#include "udma/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace udma {

namespace {
ExecMode g_mode = ExecMode::Parallel;
}

ExecMode exec_mode() { return g_mode; }

void set_exec_mode(ExecMode mode) { g_mode = mode; }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace udma
