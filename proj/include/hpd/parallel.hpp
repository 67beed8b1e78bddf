#ifndef HPD_PARALLEL_HPP
#define HPD_PARALLEL_HPP

#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hpd {

// Runs fn(i) for i in [0, n) across a fixed pool of threads, contiguous
// chunks per worker. Results must go to per-i slots so the outcome does not
// depend on worker count. The first exception is rethrown on the caller.
template <class Fn>
void parallel_for(std::int64_t n, Fn&& fn, int max_workers = 0) {
    if (n <= 0) return;
    int workers = max_workers > 0 ? max_workers
                                  : static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    if (workers > n) workers = static_cast<int>(n);
    if (workers == 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mu;
    const std::int64_t chunk = (n + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::int64_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (std::thread& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace hpd

#endif  // HPD_PARALLEL_HPP
