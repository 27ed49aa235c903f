#pragma once

#include <cstdint>
#include <utility>

namespace udma {

// Execution mode for the data-parallel kernels. Every parallel kernel has a
// serial twin that computes each output element with the same inner loop
// order, so the two modes are bit-identical; the tests assert this.
enum class ExecMode { Serial, Parallel };

ExecMode exec_mode();
void set_exec_mode(ExecMode mode);

// Number of OpenMP threads the Parallel mode will use (1 when built
// without OpenMP).
int max_threads();

namespace detail {

template <typename Fn>
void parallel_for(std::int64_t n, ExecMode mode, Fn&& fn) {
    if (mode == ExecMode::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; ++i) fn(i);
    } else {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
    }
}

}  // namespace detail

// Runs fn(i) for i in [0, n). Each invocation must write only outputs
// indexed by i; under that contract the result does not depend on the mode
// or thread count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    detail::parallel_for(n, exec_mode(), std::forward<Fn>(fn));
}

}  // namespace udma
