#pragma once

// Deterministic parallelism helpers. Work is assigned to workers by a static
// rule and results land in replicate-indexed slots, so output is identical
// for any job count. Reductions always use the same pairwise tree.

#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

namespace mtem {

// Pairwise (balanced tree) sum; fixed association independent of chunking.
inline double pairwise_sum(std::span<const double> v) {
    const std::size_t n = v.size();
    if (n <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
    long n = 0;
};

inline MeanSe mean_and_se(std::span<const double> v) {
    MeanSe r;
    r.n = static_cast<long>(v.size());
    if (r.n == 0) return r;
    r.mean = pairwise_sum(v) / static_cast<double>(r.n);
    if (r.n < 2) return r;
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - r.mean;
        sq[i] = d * d;
    }
    const double var = pairwise_sum(sq) / static_cast<double>(r.n - 1);
    r.se = std::sqrt(var / static_cast<double>(r.n));
    return r;
}

inline int resolve_jobs(int jobs) {
    if (jobs > 0) return jobs;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(index) for index in [0, count) across jobs threads. Assignment is
// index % jobs, so the mapping of work to workers is schedule-independent.
inline void for_each_index(long count, int jobs, const std::function<void(long)>& fn) {
    jobs = resolve_jobs(jobs);
    if (jobs <= 1 || count <= 1) {
        for (long i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(jobs));
    std::exception_ptr first_error;
    std::mutex err_mu;
    for (int w = 0; w < jobs; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (long i = w; i < count; i += jobs) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace mtem
