#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace symbranch {

inline unsigned resolve_threads(unsigned requested) {
    if (requested != 0) return requested;
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs body(i) for i in [0, n). Work items are claimed dynamically, so callers
// must write results into per-index slots. If several items throw, the
// exception from the smallest index is rethrown, independent of scheduling.
template <class Body>
void parallel_for(std::size_t n, Body&& body, unsigned threads = 0) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    std::size_t error_index = n;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (i < error_index) {
                    error_index = i;
                    error = std::current_exception();
                }
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    pool.clear();
    if (error) std::rethrow_exception(error);
}

} // namespace symbranch
