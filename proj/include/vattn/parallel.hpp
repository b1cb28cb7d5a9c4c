#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vattn {

// Thread control for the OpenMP kernels. Every parallel loop in this library
// iterates over independent slots (one writer per element) and all floating
// point reductions are performed serially in index order afterwards, so the
// results are bitwise identical for any thread count, including 1.
//
// thread_count() honours, in order: set_threads(), the VATTN_THREADS
// environment variable, and the OpenMP default.
int thread_count();
void set_threads(int n); // n <= 1 forces the serial path

namespace detail {
bool parallel_enabled();
}

template <typename F>
void parallel_for(std::size_t n, F&& body) {
#ifdef _OPENMP
    if (detail::parallel_enabled() && n > 1) {
        const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
        for (long long i = 0; i < static_cast<long long>(n); ++i) {
            body(static_cast<std::size_t>(i));
        }
        return;
    }
#endif
    for (std::size_t i = 0; i < n; ++i) {
        body(i);
    }
}

} // namespace vattn
