#pragma once

// Deterministic fork-join helper. Work is split into fixed-size chunks that
// do not depend on the worker count, so chunked reductions give bit-identical
// results under any DFM_THREADS setting.

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dfm {

inline int thread_count() {
    if (const char* env = std::getenv("DFM_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    return static_cast<int>(hw > 16 ? 16 : hw);
}

// Runs fn(i) for i in [0, n). Chunk boundaries are fixed by chunk_size, and
// workers pull chunks from a shared counter.
inline void parallel_for(int n, const std::function<void(int)>& fn, int chunk_size = 16) {
    const int workers = thread_count();
    if (workers <= 1 || n <= chunk_size) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int nchunks = (n + chunk_size - 1) / chunk_size;
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        try {
            for (;;) {
                const int c = next.fetch_add(1);
                if (c >= nchunks) break;
                const int lo = c * chunk_size;
                const int hi = lo + chunk_size < n ? lo + chunk_size : n;
                for (int i = lo; i < hi; ++i) fn(i);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    };
    std::vector<std::thread> pool;
    const int spawn = workers < nchunks ? workers : nchunks;
    pool.reserve(static_cast<size_t>(spawn));
    for (int w = 0; w < spawn - 1; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace dfm
