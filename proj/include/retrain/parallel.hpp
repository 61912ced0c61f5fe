#pragma once
// Deterministic parallel map. body(i) may only touch state owned by index i,
// so results are identical for any thread count; reductions stay sequential.

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace retrain {

// Process-wide worker count. 0 = use hardware concurrency. Set once by the CLI.
inline int& thread_count() {
    static int n = 0;
    return n;
}

inline int effective_threads(std::size_t n_items) {
    int t = thread_count() > 0 ? thread_count()
                               : static_cast<int>(std::thread::hardware_concurrency());
    if (t < 1) {
        t = 1;
    }
    if (static_cast<std::size_t>(t) > n_items) {
        t = static_cast<int>(n_items);
    }
    return t;
}

template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
    const int workers = effective_threads(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto run = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= n) {
                return;
            }
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
                next.store(n, std::memory_order_relaxed);
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    for (int t = 1; t < workers; ++t) {
        pool.emplace_back(run);
    }
    run();
    for (auto& th : pool) {
        th.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

} // namespace retrain
