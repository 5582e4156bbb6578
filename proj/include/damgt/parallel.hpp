#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace damgt {

// Run fn over [0, n) split into contiguous ranges, one per worker. Used only
// where ranges write disjoint outputs, so results do not depend on the worker
// count. workers <= 1 runs inline.
inline void parallel_for(std::size_t n, unsigned workers,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
    if (workers <= 1 || n < 2) {
        fn(0, n);
        return;
    }
    const unsigned t = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    std::vector<std::thread> threads;
    threads.reserve(t);
    const std::size_t chunk = (n + t - 1) / t;
    for (unsigned w = 0; w < t; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& th : threads) th.join();
}

}  // namespace damgt
