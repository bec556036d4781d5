#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace lgcp {

// Resolve the worker count: explicit request wins, then the LGCP_WORKERS
// environment variable, then 1. Always clamped to [1, hardware_concurrency].
inline int resolve_workers(int requested) {
    int w = requested;
    if (w <= 0) {
        if (const char* env = std::getenv("LGCP_WORKERS")) {
            try {
                w = std::stoi(env);
            } catch (...) {
                w = 1;
            }
        }
    }
    if (w <= 0) w = 1;
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw > 0) w = std::min(w, hw);
    return std::max(1, w);
}

// Run body(i) for i in [0, count) across at most `workers` threads. Results
// must be written to pre-sized slots indexed by i so the output is identical
// for any worker count. Exceptions are captured and the first one rethrown.
inline void parallel_for(int count, int workers, const std::function<void(int)>& body) {
    workers = std::min(std::max(workers, 1), std::max(count, 1));
    if (workers == 1 || count <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::mutex mu;
    std::exception_ptr first_error;
    int next = 0;
    auto work = [&]() {
        for (;;) {
            int i;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= count || first_error) return;
                i = next++;
            }
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}
