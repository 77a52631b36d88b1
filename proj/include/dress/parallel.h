#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dress {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Work is handed out by
// index, so any output written to slot i is independent of scheduling. The
// first exception thrown by any task is rethrown on the calling thread.
template <typename Fn>
void parallel_for(size_t n, size_t workers, Fn && fn) {
    workers = std::max<size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto run = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mu);
                if (!error) {
                    error = std::current_exception();
                }
                next.store(n);
                return;
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (size_t w = 0; w < workers; ++w) {
            pool.emplace_back(run);
        }
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace dress
