#pragma once

// Dyadic Brownian increment ladder. Increments are generated once at the
// finest level from addressed counter draws; every coarser level is obtained
// by summing adjacent pairs, so refining a path never changes the coarse
// increments a scheme consumed.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mtem/core.hpp"
#include "mtem/rng.hpp"

namespace mtem {

inline constexpr int kMaxFinestLevel = 26;

struct PathLadder {
    double t_end = 1.0;
    int finest_level = 0;
    int m = 1;
    std::uint64_t seed = 0;
    std::uint64_t replicate = 0;
    std::vector<double> inc;     // n x m, n = 2^finest_level
    std::vector<double> prefix;  // (n+1) x m, running sums of inc

    long points() const { return 1L << finest_level; }
    double delta_min() const { return t_end / static_cast<double>(points()); }

    std::span<const double> increment(long k) const {
        return {inc.data() + static_cast<std::size_t>(k) * m, static_cast<std::size_t>(m)};
    }
    // B at fine grid index k (B(0) = 0)
    std::span<const double> value_at_index(long k) const {
        return {prefix.data() + static_cast<std::size_t>(k) * m, static_cast<std::size_t>(m)};
    }
    long snap(double t) const {
        long k = static_cast<long>(std::llround(t / delta_min()));
        if (k < 0) k = 0;
        if (k > points()) k = points();
        return k;
    }
};

inline PathLadder generate_ladder(double t_end, int finest_level, int m,
                                  std::uint64_t seed, std::uint64_t replicate) {
    if (finest_level < 0 || finest_level > kMaxFinestLevel)
        throw std::invalid_argument("ladder too deep");
    if (!(t_end > 0.0)) throw std::invalid_argument("t_end must be positive");
    if (m < 1) throw std::invalid_argument("m must be >= 1");
    PathLadder lad;
    lad.t_end = t_end;
    lad.finest_level = finest_level;
    lad.m = m;
    lad.seed = seed;
    lad.replicate = replicate;
    const long n = lad.points();
    const double sd = std::sqrt(lad.delta_min());
    lad.inc.resize(static_cast<std::size_t>(n) * m);
    lad.prefix.assign(static_cast<std::size_t>(n + 1) * m, 0.0);
    for (long k = 0; k < n; ++k) {
        for (int c = 0; c < m; ++c) {
            const double z = path_normal(seed, replicate, static_cast<std::uint64_t>(k),
                                         static_cast<std::uint32_t>(c));
            const double v = sd * z;
            lad.inc[static_cast<std::size_t>(k) * m + c] = v;
            lad.prefix[static_cast<std::size_t>(k + 1) * m + c] =
                lad.prefix[static_cast<std::size_t>(k) * m + c] + v;
        }
    }
    return lad;
}

// Increments at a coarser level, n_out = 2^level rows of m entries. Built by
// repeated pairwise summation so that for every level j the identity
// coarse[k] = finer[2k] + finer[2k+1] holds bitwise.
inline std::vector<double> coarsen(const PathLadder& lad, int level) {
    if (level < 0 || level > lad.finest_level)
        throw std::invalid_argument("level outside ladder range");
    std::vector<double> cur(lad.inc);
    long n = lad.points();
    const int m = lad.m;
    for (int j = lad.finest_level; j > level; --j) {
        const long half = n / 2;
        std::vector<double> next(static_cast<std::size_t>(half) * m);
        for (long k = 0; k < half; ++k)
            for (int c = 0; c < m; ++c)
                next[static_cast<std::size_t>(k) * m + c] =
                    cur[static_cast<std::size_t>(2 * k) * m + c] +
                    cur[static_cast<std::size_t>(2 * k + 1) * m + c];
        cur = std::move(next);
        n = half;
    }
    return cur;
}

// B at an arbitrary time, snapped to the finest grid.
inline Vec bridge_value(const PathLadder& lad, double t) {
    const long k = lad.snap(t);
    auto v = lad.value_at_index(k);
    return Vec(v.begin(), v.end());
}

} // namespace mtem
