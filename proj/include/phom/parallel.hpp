#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace phom {

/// Number of worker threads used by path loops; 0 means hardware concurrency.
inline std::size_t& worker_threads() {
    static std::size_t n = 0;
    return n;
}

/// Calls body(i) for i in [0, n). Work is split into contiguous chunks; each
/// index is processed exactly once and writes only its own output slot, so
/// any reduction done afterwards in index order is thread-count independent.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
    std::size_t threads = worker_threads();
    if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

/// Sample mean and standard error of the mean, accumulated in index order.
struct SampleStats {
    double mean = 0.0;
    double se = 0.0;
    double variance = 0.0;
};

template <typename Range>
SampleStats sample_stats(const Range& values) {
    SampleStats s;
    const auto n = static_cast<double>(std::size(values));
    if (n == 0) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / n;
    if (n < 2) return s;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.variance = ss / (n - 1);
    s.se = std::sqrt(s.variance / n);
    return s;
}

}  // namespace phom
