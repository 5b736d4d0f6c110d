#pragma once

// Problem description and small dense linear algebra. States are plain
// vectors of doubles; diffusion values are row-major d x m matrices.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtem/rng.hpp"

namespace mtem {

using Vec = std::vector<double>;

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;  // row-major

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
};

inline double euclidean_norm(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) {
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite state");
        s += v * v;
    }
    return std::sqrt(s);
}

inline double euclidean_norm(const Vec& x) { return euclidean_norm(std::span<const double>(x)); }

// Frobenius norm.
inline double trace_norm(const Mat& g) {
    double s = 0.0;
    for (double v : g.a) {
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite matrix");
        s += v * v;
    }
    return std::sqrt(s);
}

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

// out += g * w, g row-major d x m, w length m
inline void matvec_add(std::span<const double> g, int d, int m,
                       std::span<const double> w, std::span<double> out) {
    for (int i = 0; i < d; ++i) {
        double s = 0.0;
        const double* row = g.data() + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) s += row[j] * w[j];
        out[i] += s;
    }
}

// Coefficient callbacks write into caller-provided storage so the step loop
// never allocates. Drift output has length d, diffusion output d*m row-major.
using CoeffFn = std::function<void(std::span<const double> x, std::span<double> out)>;

struct SdeProblem {
    std::string name;
    int d = 1;
    int m = 1;
    CoeffFn drift;
    CoeffFn diffusion;
    Vec x0;
    // Lipschitz bound valid for both coefficients on the centered ball of radius R
    std::function<double(double)> lipschitz_at;

    Vec drift_at(const Vec& x) const {
        Vec out(static_cast<std::size_t>(d));
        drift(x, out);
        return out;
    }
    Mat diffusion_at(const Vec& x) const {
        Mat out(d, m);
        diffusion(x, out.a);
        return out;
    }
};

// Exponents and constants the problem is declared to satisfy. p bounds the
// moments, q is the error exponent, r the diffusion growth power.
struct ConditionSet {
    double p = 6.0;
    double q = 4.0;
    std::optional<double> r;
    double K = 0.0;     // one-sided linear growth constant
    double H = 0.0;     // pairwise monotonicity constant
    std::optional<double> Kbar;  // diffusion growth constant, present iff r is

    void validate() const {
        if (!(q > 2.0) || !(q < p) || !(p <= 6.0))
            throw std::invalid_argument("condition set requires 2 < q < p <= 6");
        if (!(K > 0.0) || !(H > 0.0))
            throw std::invalid_argument("condition set requires positive K and H");
        if (r.has_value()) {
            if (!(*r >= 2.0) || !(*r < p))
                throw std::invalid_argument("condition set requires 2 <= r < p");
            if (!(q <= p + 2.0 - *r))
                throw std::invalid_argument("condition set requires q <= p + 2 - r");
            if (!Kbar.has_value() || !(*Kbar > 0.0))
                throw std::invalid_argument("condition set requires positive Kbar with r");
        }
    }
};

// ============================================================
// Sampled coefficient checks
// ============================================================

namespace detail {

// Uniform point in the centered ball of radius R.
inline Vec sample_in_ball(SampleStream& rng, int d, double R) {
    Vec x(static_cast<std::size_t>(d));
    if (d == 1) {
        x[0] = rng.uniform(-R, R);
        return x;
    }
    double n2 = 0.0;
    for (auto& v : x) {
        v = rng.normal();
        n2 += v * v;
    }
    const double n = std::sqrt(n2);
    const double rad = R * std::pow(rng.uniform(), 1.0 / d);
    for (auto& v : x) v *= rad / (n > 0.0 ? n : 1.0);
    return x;
}

} // namespace detail

struct LipschitzReport {
    double worst_drift_ratio = 0.0;
    double worst_diffusion_ratio = 0.0;
    long samples = 0;
};

// Monte Carlo check that the declared profile really bounds both coefficients
// on the radius-R ball: ratios should stay <= 1.
inline LipschitzReport check_local_lipschitz(const SdeProblem& prob, double R,
                                             long samples, std::uint64_t seed) {
    SampleStream rng(seed);
    const double L = prob.lipschitz_at(R);
    if (!(L > 0.0)) throw std::invalid_argument("lipschitz profile must be positive");
    LipschitzReport rep;
    rep.samples = samples;
    Vec fx(prob.d), fy(prob.d);
    std::vector<double> gx(static_cast<std::size_t>(prob.d) * prob.m);
    std::vector<double> gy(gx.size());
    for (long s = 0; s < samples; ++s) {
        Vec x = detail::sample_in_ball(rng, prob.d, R);
        Vec y = detail::sample_in_ball(rng, prob.d, R);
        Vec diff(prob.d);
        for (int i = 0; i < prob.d; ++i) diff[i] = x[i] - y[i];
        const double sep = euclidean_norm(diff);
        if (sep < 1e-14) {
            --s;  // resample near-coincident pairs
            continue;
        }
        prob.drift(x, fx);
        prob.drift(y, fy);
        for (int i = 0; i < prob.d; ++i) fx[i] -= fy[i];
        rep.worst_drift_ratio = std::max(rep.worst_drift_ratio, euclidean_norm(fx) / (L * sep));
        prob.diffusion(x, gx);
        prob.diffusion(y, gy);
        double gs = 0.0;
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double dg = gx[i] - gy[i];
            gs += dg * dg;
        }
        rep.worst_diffusion_ratio =
            std::max(rep.worst_diffusion_ratio, std::sqrt(gs) / (L * sep));
    }
    return rep;
}

} // namespace mtem
