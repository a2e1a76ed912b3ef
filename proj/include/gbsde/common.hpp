#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "gbsde/errors.hpp"

namespace gbsde {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(begin, end) over a static partition of [0, n).
/// Chunks are disjoint, so results are independent of the thread count
/// as long as fn only writes to its own index range.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    threads = resolve_threads(threads);
    if (threads <= 1 || n < 2) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(nt);
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (std::size_t w = 0; w < nt; ++w) {
        const std::size_t begin = n * w / nt;
        const std::size_t end = n * (w + 1) / nt;
        pool.emplace_back([&, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline void check_finite(double v, const char* where) {
    if (!std::isfinite(v)) throw NonFinite(std::string("non-finite value in ") + where);
}

inline std::vector<double> linspace(double lo, double hi, int count) {
    std::vector<double> xs(static_cast<std::size_t>(count));
    if (count == 1) {
        xs[0] = lo;
        return xs;
    }
    const double h = (hi - lo) / static_cast<double>(count - 1);
    for (int i = 0; i < count; ++i) xs[static_cast<std::size_t>(i)] = lo + h * i;
    xs.back() = hi;
    return xs;
}

/// Deterministic splitmix64 stream; used wherever sampled checks need
/// reproducible draws that do not depend on libstdc++ distribution details.
class SampleRng {
public:
    explicit SampleRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t x = (state_ += 0x9e3779b97f4a7c15ull);
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    /// Uniform in [0, 1).
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

private:
    std::uint64_t state_;
};

} // namespace gbsde
