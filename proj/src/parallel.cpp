#include "vattn/parallel.hpp"

#include <atomic>
#include <cstdlib>

namespace vattn {

namespace {
std::atomic<int> g_threads{-1}; // -1 = not set explicitly
}

void set_threads(int n) {
    g_threads.store(n < 1 ? -1 : n); // n < 1 reverts to the env/OpenMP default
}

int thread_count() {
    int n = g_threads.load();
    if (n > 0) {
        return n;
    }
    if (const char* env = std::getenv("VATTN_THREADS")) {
        int e = std::atoi(env);
        if (e >= 1) {
            return e;
        }
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace detail {
bool parallel_enabled() {
    return thread_count() > 1;
}
} // namespace detail

} // namespace vattn
