#pragma once

// Monte Carlo measurement of strong errors, empirical convergence rates, and
// sampled verification of the structural conditions a problem declares.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtem/brownian.hpp"
#include "mtem/core.hpp"
#include "mtem/integrators.hpp"
#include "mtem/parallel.hpp"
#include "mtem/truncation.hpp"

namespace mtem {

// ============================================================
// Reference solutions
// ============================================================

using ClosedFormFn = std::function<void(double t, const PathLadder&, std::span<double> out)>;

struct Reference {
    ClosedFormFn closed_form;  // set for exact references
    int fine_level = -1;       // set for fine-grid self-reference

    bool is_closed() const { return static_cast<bool>(closed_form); }

    static Reference closed(ClosedFormFn fn) {
        Reference r;
        r.closed_form = std::move(fn);
        return r;
    }
    static Reference fine(int level) {
        Reference r;
        r.fine_level = level;
        return r;
    }
};

// ============================================================
// Strong error ladders
// ============================================================

struct ErrorLadderRow {
    double delta = 0.0;
    int level = 0;
    double err_T_mean = 0.0, err_T_se = 0.0;
    double err_sup_mean = 0.0, err_sup_se = 0.0;            // continuous readout
    double err_T_step_mean = 0.0, err_T_step_se = 0.0;      // piecewise readout at t_end
    double err_sup_step_mean = 0.0, err_sup_step_se = 0.0;  // piecewise readout, sup
    double L_h_delta = 0.0;   // Lipschitz bound at the truncation radius
    double l4_delta = 0.0;    // L^4 * delta
    long replicates = 0;      // surviving replicates entering the means
    long diverged = 0;
    bool has_sup = false;
};

struct ErrorLadder {
    std::string problem;
    Scheme scheme = Scheme::Mtem;
    double q = 2.0;
    double t_end = 1.0;
    std::vector<ErrorLadderRow> rows;
};

namespace detail {

inline double dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace detail

// Couples every measured level to one reference trajectory per replicate on a
// shared increment ladder, then averages q-th powers of the path distances.
inline ErrorLadder measure_strong_error(const SdeProblem& prob,
                                        const std::optional<TruncationPolicy>& policy,
                                        Scheme scheme, double q, double t_end,
                                        std::vector<int> levels, long replicates,
                                        const Reference& ref, std::uint64_t seed,
                                        bool with_sup, int jobs) {
    if (levels.empty()) throw std::invalid_argument("no ladder levels given");
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    if (replicates < 100) throw std::runtime_error("insufficient sample");
    if (!(q > 0.0)) throw std::invalid_argument("error exponent must be positive");

    const int coarsest = levels.front();
    const int finest = levels.back();
    int j_eval;
    if (ref.is_closed()) {
        j_eval = with_sup ? std::min(finest + 5, kMaxFinestLevel) : finest;
    } else {
        // self-comparison (a measured level equal to the reference) is legal
        if (ref.fine_level < finest || ref.fine_level < coarsest + 5)
            throw std::invalid_argument("reference level too coarse");
        if (!policy.has_value())
            throw std::invalid_argument("fine-grid reference requires a truncation policy");
        j_eval = ref.fine_level;
    }

    const int nl = static_cast<int>(levels.size());
    // replicate-indexed slots keep aggregation independent of the job count
    std::vector<double> errT(static_cast<std::size_t>(replicates) * nl, 0.0);
    std::vector<double> supC(with_sup ? errT.size() : 0, 0.0);
    std::vector<double> supS(with_sup ? errT.size() : 0, 0.0);
    std::vector<unsigned char> dead(errT.size(), 0);

    for_each_index(replicates, jobs, [&](long rep) {
        const PathLadder lad =
            generate_ladder(t_end, j_eval, prob.m, seed, static_cast<std::uint64_t>(rep));
        GridSolution ref_sol;
        if (!ref.is_closed()) {
            ref_sol = run(prob, policy, Scheme::Mtem, ref.fine_level, lad);
            if (ref_sol.diverged_at) {
                for (int li = 0; li < nl; ++li)
                    dead[static_cast<std::size_t>(rep) * nl + li] = 1;
                return;
            }
        }
        Vec ref_T(prob.d);
        if (ref.is_closed())
            ref.closed_form(t_end, lad, ref_T);
        else {
            auto s = ref_sol.state(ref_sol.steps());
            ref_T.assign(s.begin(), s.end());
        }

        Vec scratch(prob.d), fk(prob.d), cont(prob.d), ref_i(prob.d);
        std::vector<double> gk(static_cast<std::size_t>(prob.d) * prob.m);
        std::vector<double> db(static_cast<std::size_t>(prob.m));
        const long n_eval = lad.points();

        for (int li = 0; li < nl; ++li) {
            const std::size_t slot = static_cast<std::size_t>(rep) * nl + li;
            const GridSolution sol = run(prob, policy, scheme, levels[li], lad);
            if (sol.diverged_at) {
                dead[slot] = 1;
                continue;
            }
            errT[slot] = std::pow(detail::dist(ref_T, sol.state(sol.steps())), q);
            if (!with_sup) continue;

            const detail::SchemeCoeffs co{&prob, scheme, sol.radius};
            const long fpc = 1L << (j_eval - levels[li]);
            double worst_cont = 0.0, worst_step = 0.0;
            for (long i = 0; i <= n_eval; ++i) {
                const long cell = std::min(i / fpc, sol.steps());
                const long cell_start = cell * fpc;
                auto xk = sol.state(cell);
                if (i == cell_start) {
                    co.drift(xk, fk, scratch);
                    co.diffusion(xk, gk, scratch);
                }
                if (ref.is_closed())
                    ref.closed_form(static_cast<double>(i) * lad.delta_min(), lad, ref_i);
                else {
                    auto s = ref_sol.state(i);
                    ref_i.assign(s.begin(), s.end());
                }
                const double dt = static_cast<double>(i - cell_start) * lad.delta_min();
                auto b_i = lad.value_at_index(i);
                auto b_k = lad.value_at_index(cell_start);
                for (int c = 0; c < prob.m; ++c) db[c] = b_i[c] - b_k[c];
                for (int ii = 0; ii < prob.d; ++ii) cont[ii] = xk[ii] + fk[ii] * dt;
                matvec_add(gk, prob.d, prob.m, db, cont);
                worst_cont = std::max(worst_cont, detail::dist(ref_i, cont));
                worst_step = std::max(worst_step, detail::dist(ref_i, xk));
            }
            supC[slot] = std::pow(worst_cont, q);
            supS[slot] = std::pow(worst_step, q);
        }
    });

    ErrorLadder out;
    out.problem = prob.name;
    out.scheme = scheme;
    out.q = q;
    out.t_end = t_end;
    std::vector<double> buf;
    buf.reserve(static_cast<std::size_t>(replicates));
    for (int li = 0; li < nl; ++li) {
        ErrorLadderRow row;
        row.level = levels[li];
        row.delta = t_end / static_cast<double>(1L << levels[li]);
        row.has_sup = with_sup;
        if (policy.has_value()) {
            const double h = policy->radius_at(row.delta);
            row.L_h_delta = prob.lipschitz_at(h);
            row.l4_delta = std::pow(row.L_h_delta, 4.0) * row.delta;
        }
        auto collect = [&](const std::vector<double>& src) {
            buf.clear();
            for (long rep = 0; rep < replicates; ++rep) {
                const std::size_t slot = static_cast<std::size_t>(rep) * nl + li;
                if (!dead[slot]) buf.push_back(src[slot]);
            }
            return mean_and_se(buf);
        };
        const MeanSe t = collect(errT);
        row.replicates = t.n;
        row.diverged = replicates - t.n;
        if (t.n < 100) throw std::runtime_error("insufficient sample");
        row.err_T_mean = t.mean;
        row.err_T_se = t.se;
        // at t_end both readouts coincide with the final grid state
        row.err_T_step_mean = t.mean;
        row.err_T_step_se = t.se;
        if (with_sup) {
            const MeanSe c = collect(supC);
            row.err_sup_mean = c.mean;
            row.err_sup_se = c.se;
            const MeanSe s = collect(supS);
            row.err_sup_step_mean = s.mean;
            row.err_sup_step_se = s.se;
        }
        out.rows.push_back(row);
    }
    return out;
}

inline ErrorLadder strong_error_at_T(const SdeProblem& prob,
                                     const std::optional<TruncationPolicy>& policy,
                                     const ConditionSet& cond, Scheme scheme, double t_end,
                                     const std::vector<int>& levels, long replicates,
                                     const Reference& ref, std::uint64_t seed, int jobs = 1) {
    cond.validate();
    return measure_strong_error(prob, policy, scheme, cond.q, t_end, levels, replicates, ref,
                                seed, /*with_sup=*/false, jobs);
}

inline ErrorLadder strong_error_sup(const SdeProblem& prob,
                                    const std::optional<TruncationPolicy>& policy,
                                    const ConditionSet& cond, Scheme scheme, double t_end,
                                    const std::vector<int>& levels, long replicates,
                                    const Reference& ref, std::uint64_t seed, int jobs = 1) {
    cond.validate();
    return measure_strong_error(prob, policy, scheme, cond.q, t_end, levels, replicates, ref,
                                seed, /*with_sup=*/true, jobs);
}

// ============================================================
// Rate fits
// ============================================================

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  // rms residual in log space
    double theoretical_slope = 0.5;
    int rows_used = 0;
};

// Least squares line through (log x_i, log y_i).
inline RateFit fit_loglog(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() < 3) throw std::invalid_argument("degenerate ladder");
    const int n = static_cast<int>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::vector<double> lx(xs.size()), ly(ys.size());
    for (int i = 0; i < n; ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw std::invalid_argument("degenerate ladder");
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
        sx += lx[i];
        sy += ly[i];
        sxx += lx[i] * lx[i];
        sxy += lx[i] * ly[i];
    }
    RateFit fit;
    fit.rows_used = n;
    const double det = n * sxx - sx * sx;
    fit.slope = (n * sxy - sx * sy) / det;
    fit.intercept = (sy - fit.slope * sx) / n;
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
        ss += r * r;
    }
    fit.residual = std::sqrt(ss / n);
    return fit;
}

enum class ErrorStat { TerminalContinuous, SupContinuous, TerminalStep, SupStep };

// Slope of log(err^{1/q}) against log(delta); 1/2 is the covered-regime rate.
inline RateFit fit_rate(const ErrorLadder& ladder, ErrorStat stat = ErrorStat::TerminalContinuous) {
    std::vector<double> xs, ys;
    for (const auto& row : ladder.rows) {
        double v = 0.0;
        switch (stat) {
            case ErrorStat::TerminalContinuous: v = row.err_T_mean; break;
            case ErrorStat::SupContinuous: v = row.err_sup_mean; break;
            case ErrorStat::TerminalStep: v = row.err_T_step_mean; break;
            case ErrorStat::SupStep: v = row.err_sup_step_mean; break;
        }
        xs.push_back(row.delta);
        ys.push_back(std::pow(v, 1.0 / ladder.q));
    }
    return fit_loglog(xs, ys);
}

// ============================================================
// Condition margins
// ============================================================

// Worst sampled value of
//   [<x-y, f(x)-f(y)> + ((q-1)/2) |g(x)-g(y)|^2] / |x-y|^2
// against the declared pairwise constant H.
inline MarginReport check_monotonicity_condition(const SdeProblem& prob, const ConditionSet& cond,
                                                 long samples, double radius, std::uint64_t seed) {
    cond.validate();
    SampleStream rng(seed);
    MarginReport rep;
    rep.samples = samples;
    rep.bound = cond.H;
    Vec fx(prob.d), fy(prob.d);
    std::vector<double> gx(static_cast<std::size_t>(prob.d) * prob.m), gy(gx.size());
    for (long s = 0; s < samples; ++s) {
        Vec x = detail::sample_in_ball(rng, prob.d, radius);
        Vec y = detail::sample_in_ball(rng, prob.d, radius);
        Vec diff(prob.d);
        for (int i = 0; i < prob.d; ++i) diff[i] = x[i] - y[i];
        const double sep2 = dot(diff, diff);
        if (sep2 < 1e-28) {
            --s;
            continue;
        }
        prob.drift(x, fx);
        prob.drift(y, fy);
        double inner = 0.0;
        for (int i = 0; i < prob.d; ++i) inner += diff[i] * (fx[i] - fy[i]);
        prob.diffusion(x, gx);
        prob.diffusion(y, gy);
        double g2 = 0.0;
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double dg = gx[i] - gy[i];
            g2 += dg * dg;
        }
        rep.worst = std::max(rep.worst, (inner + 0.5 * (cond.q - 1.0) * g2) / sep2);
    }
    rep.margin = rep.worst / rep.bound;
    return rep;
}

// Worst sampled value of [<x, f(x)> + ((p-1)/2) |g(x)|^2] / (1 + |x|^2)
// against the declared growth constant K.
inline MarginReport check_khasminskii(const SdeProblem& prob, const ConditionSet& cond,
                                      long samples, double radius, std::uint64_t seed) {
    cond.validate();
    SampleStream rng(seed);
    MarginReport rep;
    rep.samples = samples;
    rep.bound = cond.K;
    Vec fx(prob.d);
    std::vector<double> gx(static_cast<std::size_t>(prob.d) * prob.m);
    for (long s = 0; s < samples; ++s) {
        Vec x = detail::sample_in_ball(rng, prob.d, radius);
        prob.drift(x, fx);
        prob.diffusion(x, gx);
        double g2 = 0.0;
        for (double v : gx) g2 += v * v;
        const double lhs = dot(x, fx) + 0.5 * (cond.p - 1.0) * g2;
        rep.worst = std::max(rep.worst, lhs / (1.0 + dot(x, x)));
    }
    rep.margin = rep.worst / rep.bound;
    return rep;
}

// Worst sampled value of |g(x)|^2 / (1 + |x|^r) against Kbar.
inline MarginReport check_diffusion_growth(const SdeProblem& prob, const ConditionSet& cond,
                                           long samples, double radius, std::uint64_t seed) {
    cond.validate();
    if (!cond.r.has_value() || !cond.Kbar.has_value())
        throw std::invalid_argument("diffusion growth check requires r and Kbar");
    SampleStream rng(seed);
    MarginReport rep;
    rep.samples = samples;
    rep.bound = *cond.Kbar;
    std::vector<double> gx(static_cast<std::size_t>(prob.d) * prob.m);
    for (long s = 0; s < samples; ++s) {
        Vec x = detail::sample_in_ball(rng, prob.d, radius);
        prob.diffusion(x, gx);
        double g2 = 0.0;
        for (double v : gx) g2 += v * v;
        const double nx = euclidean_norm(x);
        rep.worst = std::max(rep.worst, g2 / (1.0 + std::pow(nx, *cond.r)));
    }
    rep.margin = rep.worst / rep.bound;
    return rep;
}

// ============================================================
// Interpolant gap
// ============================================================

struct GapRow {
    double delta = 0.0;
    int level = 0;
    double fixed_time_moment = 0.0;  // max over fine times of mean |gap|^p
    double sup_moment = 0.0;         // mean over paths of max |gap|^q
    long replicates = 0;
    long diverged = 0;
};

// Gap between the continuous and piecewise readouts of the same trajectory,
// measured on a grid five levels finer than the finest step.
inline std::vector<GapRow> interpolant_gap(const SdeProblem& prob, const TruncationPolicy& policy,
                                           double p_exp, double q_exp, double t_end,
                                           std::vector<int> levels, long replicates,
                                           std::uint64_t seed, int jobs = 1) {
    if (levels.empty()) throw std::invalid_argument("no ladder levels given");
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    const int j_eval = std::min(levels.back() + 5, kMaxFinestLevel);
    const long n_eval = 1L << j_eval;
    const int nl = static_cast<int>(levels.size());
    constexpr long kChunk = 64;
    const long n_chunks = (replicates + kChunk - 1) / kChunk;

    // chunked accumulators keep the fixed-time means independent of job count
    std::vector<std::vector<double>> acc(
        static_cast<std::size_t>(n_chunks) * nl,
        std::vector<double>());
    for (auto& a : acc) a.assign(static_cast<std::size_t>(n_eval) + 1, 0.0);
    std::vector<double> sup_vals(static_cast<std::size_t>(replicates) * nl, 0.0);
    std::vector<unsigned char> dead(sup_vals.size(), 0);

    for_each_index(n_chunks, jobs, [&](long chunk) {
        Vec scratch(prob.d), fk(prob.d);
        std::vector<double> gk(static_cast<std::size_t>(prob.d) * prob.m);
        std::vector<double> db(static_cast<std::size_t>(prob.m));
        const long rep_lo = chunk * kChunk;
        const long rep_hi = std::min(rep_lo + kChunk, replicates);
        for (long rep = rep_lo; rep < rep_hi; ++rep) {
            const PathLadder lad =
                generate_ladder(t_end, j_eval, prob.m, seed, static_cast<std::uint64_t>(rep));
            for (int li = 0; li < nl; ++li) {
                const std::size_t slot = static_cast<std::size_t>(rep) * nl + li;
                const GridSolution sol = run(prob, policy, Scheme::Mtem, levels[li], lad);
                if (sol.diverged_at) {
                    dead[slot] = 1;
                    continue;
                }
                const detail::SchemeCoeffs co{&prob, Scheme::Mtem, sol.radius};
                auto& a = acc[static_cast<std::size_t>(chunk) * nl + li];
                const long fpc = 1L << (j_eval - levels[li]);
                double worst = 0.0;
                for (long i = 0; i <= n_eval; ++i) {
                    const long cell = std::min(i / fpc, sol.steps());
                    const long cell_start = cell * fpc;
                    if (i == cell_start) {
                        auto xk = sol.state(cell);
                        co.drift(xk, fk, scratch);
                        co.diffusion(xk, gk, scratch);
                        continue;  // gap vanishes at cell anchors
                    }
                    const double dt = static_cast<double>(i - cell_start) * lad.delta_min();
                    auto b_i = lad.value_at_index(i);
                    auto b_k = lad.value_at_index(cell_start);
                    for (int c = 0; c < prob.m; ++c) db[c] = b_i[c] - b_k[c];
                    double g2 = 0.0;
                    for (int ii = 0; ii < prob.d; ++ii) {
                        double gap = fk[ii] * dt;
                        const double* row = gk.data() + static_cast<std::size_t>(ii) * prob.m;
                        for (int c = 0; c < prob.m; ++c) gap += row[c] * db[c];
                        g2 += gap * gap;
                    }
                    const double gap_norm = std::sqrt(g2);
                    a[static_cast<std::size_t>(i)] += std::pow(gap_norm, p_exp);
                    worst = std::max(worst, gap_norm);
                }
                sup_vals[slot] = std::pow(worst, q_exp);
            }
        }
    });

    std::vector<GapRow> rows;
    std::vector<double> buf;
    for (int li = 0; li < nl; ++li) {
        GapRow row;
        row.level = levels[li];
        row.delta = t_end / static_cast<double>(1L << levels[li]);
        long survivors = 0;
        for (long rep = 0; rep < replicates; ++rep)
            if (!dead[static_cast<std::size_t>(rep) * nl + li]) ++survivors;
        row.replicates = survivors;
        row.diverged = replicates - survivors;
        if (survivors == 0) throw std::runtime_error("insufficient sample");
        double worst_mean = 0.0;
        for (long i = 0; i <= n_eval; ++i) {
            double s = 0.0;
            for (long chunk = 0; chunk < n_chunks; ++chunk)
                s += acc[static_cast<std::size_t>(chunk) * nl + li][static_cast<std::size_t>(i)];
            worst_mean = std::max(worst_mean, s / static_cast<double>(survivors));
        }
        row.fixed_time_moment = worst_mean;
        buf.clear();
        for (long rep = 0; rep < replicates; ++rep) {
            const std::size_t slot = static_cast<std::size_t>(rep) * nl + li;
            if (!dead[slot]) buf.push_back(sup_vals[slot]);
        }
        row.sup_moment = mean_and_se(buf).mean;
        rows.push_back(row);
    }
    return rows;
}

// ============================================================
// Moment stability
// ============================================================

struct MomentRow {
    double delta = 0.0;
    int level = 0;
    double max_mean_moment = 0.0;  // max over grid indices of mean |X_k|^p
    double mean_max_moment = 0.0;  // mean over paths of max_k |X_k|^pbar
    long replicates = 0;
    long diverged = 0;
};

inline std::vector<MomentRow> empirical_moment_sup(const SdeProblem& prob,
                                                   const std::optional<TruncationPolicy>& policy,
                                                   Scheme scheme, double p_exp, double pbar_exp,
                                                   double t_end, std::vector<int> levels,
                                                   long replicates, std::uint64_t seed,
                                                   int jobs = 1) {
    if (levels.empty()) throw std::invalid_argument("no ladder levels given");
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    const int j_top = levels.back();
    const int nl = static_cast<int>(levels.size());
    constexpr long kChunk = 64;
    const long n_chunks = (replicates + kChunk - 1) / kChunk;

    std::vector<std::vector<double>> acc(static_cast<std::size_t>(n_chunks) * nl);
    for (int li = 0; li < nl; ++li) {
        const long n = 1L << levels[li];
        for (long chunk = 0; chunk < n_chunks; ++chunk)
            acc[static_cast<std::size_t>(chunk) * nl + li].assign(
                static_cast<std::size_t>(n) + 1, 0.0);
    }
    std::vector<double> max_vals(static_cast<std::size_t>(replicates) * nl, 0.0);
    std::vector<unsigned char> dead(max_vals.size(), 0);

    for_each_index(n_chunks, jobs, [&](long chunk) {
        const long rep_lo = chunk * kChunk;
        const long rep_hi = std::min(rep_lo + kChunk, replicates);
        for (long rep = rep_lo; rep < rep_hi; ++rep) {
            const PathLadder lad =
                generate_ladder(t_end, j_top, prob.m, seed, static_cast<std::uint64_t>(rep));
            for (int li = 0; li < nl; ++li) {
                const std::size_t slot = static_cast<std::size_t>(rep) * nl + li;
                const GridSolution sol = run(prob, policy, scheme, levels[li], lad);
                if (sol.diverged_at) {
                    dead[slot] = 1;
                    continue;
                }
                auto& a = acc[static_cast<std::size_t>(chunk) * nl + li];
                double worst = 0.0;
                for (long k = 0; k <= sol.steps(); ++k) {
                    double n2 = 0.0;
                    auto x = sol.state(k);
                    for (double v : x) n2 += v * v;
                    const double nx = std::sqrt(n2);
                    a[static_cast<std::size_t>(k)] += std::pow(nx, p_exp);
                    worst = std::max(worst, nx);
                }
                max_vals[slot] = std::pow(worst, pbar_exp);
            }
        }
    });

    std::vector<MomentRow> rows;
    std::vector<double> buf;
    for (int li = 0; li < nl; ++li) {
        MomentRow row;
        row.level = levels[li];
        row.delta = t_end / static_cast<double>(1L << levels[li]);
        long survivors = 0;
        for (long rep = 0; rep < replicates; ++rep)
            if (!dead[static_cast<std::size_t>(rep) * nl + li]) ++survivors;
        row.replicates = survivors;
        row.diverged = replicates - survivors;
        const long n = 1L << levels[li];
        double worst_mean = 0.0;
        if (survivors > 0) {
            for (long k = 0; k <= n; ++k) {
                double s = 0.0;
                for (long chunk = 0; chunk < n_chunks; ++chunk)
                    s += acc[static_cast<std::size_t>(chunk) * nl + li][static_cast<std::size_t>(k)];
                worst_mean = std::max(worst_mean, s / static_cast<double>(survivors));
            }
            buf.clear();
            for (long rep = 0; rep < replicates; ++rep) {
                const std::size_t slot = static_cast<std::size_t>(rep) * nl + li;
                if (!dead[slot]) buf.push_back(max_vals[slot]);
            }
            row.mean_max_moment = mean_and_se(buf).mean;
        }
        row.max_mean_moment = worst_mean;
        rows.push_back(row);
    }
    return rows;
}

// Exponents taken from the declared conditions: p, and 2 + p - r when r is set.
inline std::vector<MomentRow> empirical_moment_sup(const SdeProblem& prob,
                                                   const std::optional<TruncationPolicy>& policy,
                                                   Scheme scheme, const ConditionSet& cond,
                                                   double t_end, const std::vector<int>& levels,
                                                   long replicates, std::uint64_t seed,
                                                   int jobs = 1) {
    cond.validate();
    const double pbar = cond.r.has_value() ? 2.0 + cond.p - *cond.r : cond.p;
    return empirical_moment_sup(prob, policy, scheme, cond.p, pbar, t_end, levels, replicates,
                                seed, jobs);
}

} // namespace mtem
