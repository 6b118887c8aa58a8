#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace bbmtube::detail {

inline unsigned resolve_threads(unsigned threads, std::size_t work_items) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    return static_cast<unsigned>(
        std::min<std::size_t>(threads, std::max<std::size_t>(1, work_items)));
}

// Round-robin over [0, n). Exceptions thrown by `body` propagate from the
// calling thread after all workers have joined.
template <class Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
    threads = resolve_threads(threads, n);
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> pool;
        for (unsigned tid = 0; tid < threads; ++tid) {
            pool.emplace_back([&, tid] {
                try {
                    for (std::size_t i = tid; i < n; i += threads) body(i);
                } catch (...) {
                    errors[tid] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace bbmtube::detail
