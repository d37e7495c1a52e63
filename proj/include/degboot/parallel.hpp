#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace degboot {

/**
 * Calls fn(i) for i in [0, n) on up to `workers` threads.
 *
 * Work is handed out through a shared counter, so which thread runs which
 * index is unspecified; callers write results into slot i and fold in index
 * order afterwards. If any call throws, the exception from the smallest
 * failing index is rethrown after all threads have joined.
 */
template <class Fn>
void parallel_for_index(std::size_t n, unsigned workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::atomic<bool> failed{false};
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
                failed.store(true, std::memory_order_relaxed);
            }
        }
    };
    const unsigned count = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    std::vector<std::thread> pool;
    pool.reserve(count);
    for (unsigned w = 0; w < count; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (failed.load())
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
}

}  // namespace degboot
