#pragma once

// Explicit one-step schemes on a dyadic grid. The modified truncated scheme
// (mtem) rescales both coefficients outside the radius h(delta); em uses the
// raw coefficients; tem clamps the coefficient argument to the ball.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtem/brownian.hpp"
#include "mtem/core.hpp"
#include "mtem/truncation.hpp"

namespace mtem {

inline constexpr double kDivergenceGuard = 1e154;

enum class Scheme { Mtem, Em, Tem };

inline const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::Mtem: return "mtem";
        case Scheme::Em: return "em";
        case Scheme::Tem: return "tem";
    }
    return "?";
}

inline Scheme scheme_from_name(const std::string& s) {
    if (s == "mtem") return Scheme::Mtem;
    if (s == "em") return Scheme::Em;
    if (s == "tem") return Scheme::Tem;
    throw std::invalid_argument("unknown scheme: " + s);
}

namespace detail {

// Per-run view of the scheme's effective coefficients.
struct SchemeCoeffs {
    const SdeProblem* prob;
    Scheme scheme;
    double radius;  // ignored for em

    void drift(std::span<const double> x, std::span<double> out, std::span<double> scratch) const {
        switch (scheme) {
            case Scheme::Mtem: truncate_modified(prob->drift, radius, x, out, scratch); break;
            case Scheme::Em: prob->drift(x, out); break;
            case Scheme::Tem: truncate_clamped(prob->drift, radius, x, out, scratch); break;
        }
    }
    void diffusion(std::span<const double> x, std::span<double> out,
                   std::span<double> scratch) const {
        switch (scheme) {
            case Scheme::Mtem: truncate_modified(prob->diffusion, radius, x, out, scratch); break;
            case Scheme::Em: prob->diffusion(x, out); break;
            case Scheme::Tem: truncate_clamped(prob->diffusion, radius, x, out, scratch); break;
        }
    }
};

} // namespace detail

// One scheme step: x + f_h(x) delta + g_h(x) dw.
inline Vec mtem_step(const SdeProblem& prob, const Vec& x, double delta, double radius,
                     std::span<const double> dw) {
    Vec fx = truncate_modified(prob.drift, radius, x, prob.d);
    Vec gx = truncate_modified(prob.diffusion, radius, x, prob.d * prob.m);
    Vec out(x);
    for (int i = 0; i < prob.d; ++i) out[i] += fx[i] * delta;
    matvec_add(gx, prob.d, prob.m, dw, out);
    return out;
}

inline Vec em_step(const SdeProblem& prob, const Vec& x, double delta,
                   std::span<const double> dw) {
    Vec fx = prob.drift_at(x);
    Mat gx = prob.diffusion_at(x);
    Vec out(x);
    for (int i = 0; i < prob.d; ++i) out[i] += fx[i] * delta;
    matvec_add(gx.a, prob.d, prob.m, dw, out);
    return out;
}

inline Vec tem_step(const SdeProblem& prob, const Vec& x, double delta, double radius,
                    std::span<const double> dw) {
    Vec fx = truncate_clamped(prob.drift, radius, x, prob.d);
    Vec gx = truncate_clamped(prob.diffusion, radius, x, prob.d * prob.m);
    Vec out(x);
    for (int i = 0; i < prob.d; ++i) out[i] += fx[i] * delta;
    matvec_add(gx, prob.d, prob.m, dw, out);
    return out;
}

// Level whose step equals delta on this ladder, or "step not dyadic".
inline int level_for_delta(const PathLadder& ladder, double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("step not dyadic");
    const double ratio = ladder.t_end / delta;
    const double lvl = std::log2(ratio);
    const int level = static_cast<int>(std::llround(lvl));
    if (level < 0 || level > ladder.finest_level ||
        std::fabs(lvl - static_cast<double>(level)) > 1e-9)
        throw std::invalid_argument("step not dyadic");
    return level;
}

struct GridSolution {
    Scheme scheme = Scheme::Mtem;
    double delta = 0.0;
    double t_end = 0.0;
    int level = 0;   // delta = t_end * 2^-level
    int d = 1;
    double radius = 0.0;  // truncation radius used (0 for em)
    std::vector<double> states;  // (k+1) x d for surviving steps, X_0 first
    std::optional<long> diverged_at;  // index of the first bad state; later states absent

    long steps() const { return 1L << level; }
    std::span<const double> state(long k) const {
        return {states.data() + static_cast<std::size_t>(k) * d, static_cast<std::size_t>(d)};
    }
    long stored_states() const { return static_cast<long>(states.size()) / d; }
};

// Advance the scheme over the whole grid at the given level, consuming the
// ladder's increments coarsened to that level. Stops early the first time a
// state goes non-finite or beyond the overflow guard.
inline GridSolution run(const SdeProblem& prob, const std::optional<TruncationPolicy>& policy,
                        Scheme scheme, int level, const PathLadder& ladder) {
    if (level < 0 || level > ladder.finest_level)
        throw std::invalid_argument("step not dyadic");
    if (scheme != Scheme::Em && !policy.has_value())
        throw std::invalid_argument("truncated scheme requires a policy");

    GridSolution sol;
    sol.scheme = scheme;
    sol.level = level;
    sol.t_end = ladder.t_end;
    sol.delta = ladder.t_end / static_cast<double>(1L << level);
    sol.d = prob.d;
    sol.radius = (scheme == Scheme::Em) ? 0.0 : policy->radius_at(sol.delta);

    const detail::SchemeCoeffs co{&prob, scheme, sol.radius};
    const std::vector<double> dw = coarsen(ladder, level);
    const long n = sol.steps();
    const int d = prob.d, m = prob.m;

    sol.states.reserve(static_cast<std::size_t>(n + 1) * d);
    sol.states.insert(sol.states.end(), prob.x0.begin(), prob.x0.end());

    std::vector<double> x(prob.x0.begin(), prob.x0.end());
    std::vector<double> fx(static_cast<std::size_t>(d));
    std::vector<double> gx(static_cast<std::size_t>(d) * m);
    std::vector<double> scratch(static_cast<std::size_t>(d));
    for (long k = 0; k < n; ++k) {
        co.drift(x, fx, scratch);
        co.diffusion(x, gx, scratch);
        for (int i = 0; i < d; ++i) x[i] += fx[i] * sol.delta;
        matvec_add(gx, d, m,
                   std::span<const double>(dw.data() + static_cast<std::size_t>(k) * m,
                                           static_cast<std::size_t>(m)),
                   x);
        bool bad = false;
        double norm2 = 0.0;
        for (int i = 0; i < d; ++i) {
            if (!std::isfinite(x[i])) { bad = true; break; }
            norm2 += x[i] * x[i];
        }
        if (!bad && norm2 > kDivergenceGuard * kDivergenceGuard) bad = true;
        if (bad) {
            sol.diverged_at = k + 1;
            return sol;
        }
        sol.states.insert(sol.states.end(), x.begin(), x.end());
    }
    return sol;
}

inline GridSolution run(const SdeProblem& prob, const std::optional<TruncationPolicy>& policy,
                        Scheme scheme, double delta, const PathLadder& ladder) {
    return run(prob, policy, scheme, level_for_delta(ladder, delta), ladder);
}

// Piecewise-constant readout: X_k on [k delta, (k+1) delta), X_N at t_end.
inline Vec step_process_value(const GridSolution& sol, double t) {
    const double ratio = t / sol.delta;
    long k = static_cast<long>(std::floor(ratio + 1e-12 * (1.0 + std::fabs(ratio))));
    if (k < 0) k = 0;
    if (k > sol.steps()) k = sol.steps();
    if (k >= sol.stored_states()) throw std::runtime_error("trajectory diverged");
    auto s = sol.state(k);
    return Vec(s.begin(), s.end());
}

// Continuous readout: within a cell the drift and diffusion stay frozen at
// the cell's left state, so grid times reproduce the grid states exactly.
inline Vec continuous_value(const GridSolution& sol, const SdeProblem& prob,
                            const PathLadder& ladder, double t) {
    const long fine_per_cell = 1L << (ladder.finest_level - sol.level);
    const long i = ladder.snap(t);
    long k = i / fine_per_cell;
    if (k > sol.steps()) k = sol.steps();
    if (t >= sol.t_end) k = sol.steps();
    if (k >= sol.stored_states()) throw std::runtime_error("trajectory diverged");

    auto xk = sol.state(k);
    Vec out(xk.begin(), xk.end());
    const double dt = static_cast<double>(i - k * fine_per_cell) * ladder.delta_min();
    if (dt == 0.0) return out;

    const detail::SchemeCoeffs co{&prob, sol.scheme, sol.radius};
    Vec fx(prob.d), scratch(prob.d);
    std::vector<double> gx(static_cast<std::size_t>(prob.d) * prob.m);
    co.drift(xk, fx, scratch);
    co.diffusion(xk, gx, scratch);
    for (int ii = 0; ii < prob.d; ++ii) out[ii] += fx[ii] * dt;

    auto b_t = ladder.value_at_index(i);
    auto b_k = ladder.value_at_index(k * fine_per_cell);
    std::vector<double> db(static_cast<std::size_t>(prob.m));
    for (int c = 0; c < prob.m; ++c) db[c] = b_t[c] - b_k[c];
    matvec_add(gx, prob.d, prob.m, db, out);
    return out;
}

} // namespace mtem
