#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <mtem/integrators.hpp>

using namespace mtem;

namespace {

SdeProblem cubic_power() {
    SdeProblem prob;
    prob.name = "cubic-power";
    prob.d = prob.m = 1;
    prob.drift = [](std::span<const double> x, std::span<double> out) {
        out[0] = x[0] - x[0] * x[0] * x[0];
    };
    prob.diffusion = [](std::span<const double> x, std::span<double> out) {
        out[0] = std::pow(std::fabs(x[0]), 1.5);
    };
    prob.x0 = {1.0};
    prob.lipschitz_at = [](double R) { return 3.0 * R * R + 1.0; };
    return prob;
}

SdeProblem geometric(double a, double b) {
    SdeProblem prob;
    prob.name = "geometric";
    prob.d = prob.m = 1;
    prob.drift = [a](std::span<const double> x, std::span<double> out) { out[0] = a * x[0]; };
    prob.diffusion = [b](std::span<const double> x, std::span<double> out) {
        out[0] = b * x[0];
    };
    prob.x0 = {1.0};
    prob.lipschitz_at = [a, b](double) { return std::max({std::fabs(a), std::fabs(b), 1.0}); };
    return prob;
}

}  // namespace

TEST_CASE("scheme names round-trip") {
    REQUIRE(scheme_from_name("mtem") == Scheme::Mtem);
    REQUIRE(scheme_from_name("em") == Scheme::Em);
    REQUIRE(scheme_from_name("tem") == Scheme::Tem);
    REQUIRE(scheme_name(Scheme::Tem) == std::string("tem"));
    REQUIRE_THROWS_WITH(scheme_from_name("milstein"), "unknown scheme: milstein");
}

TEST_CASE("single step oracles at x = 4, radius 2") {
    auto prob = cubic_power();
    const Vec x{4.0};
    const Vec dw{0.1};
    const double delta = 0.01;
    // rescaled: 4 + 2 f(2) 0.01 + 2 g(2) 0.1 = 4 - 0.12 + 0.1 * 2^{5/2}
    REQUIRE_THAT(mtem_step(prob, x, delta, 2.0, dw)[0],
                 Catch::Matchers::WithinRel(4.0 - 0.12 + 0.1 * std::pow(2.0, 2.5), 1e-14));
    // raw: 4 + (4 - 64) 0.01 + 8 * 0.1
    REQUIRE_THAT(em_step(prob, x, delta, dw)[0],
                 Catch::Matchers::WithinRel(4.2, 1e-14));
    // clamped: 4 + f(2) 0.01 + g(2) 0.1
    REQUIRE_THAT(tem_step(prob, x, delta, 2.0, dw)[0],
                 Catch::Matchers::WithinRel(4.0 - 0.06 + 0.1 * std::pow(2.0, 1.5), 1e-14));
    // repeated evaluation is bitwise stable
    REQUIRE(mtem_step(prob, x, delta, 2.0, dw)[0] == mtem_step(prob, x, delta, 2.0, dw)[0]);
}

TEST_CASE("level lookup accepts only dyadic steps") {
    auto lad = generate_ladder(1.0, 8, 1, 5, 0);
    REQUIRE(level_for_delta(lad, 1.0) == 0);
    REQUIRE(level_for_delta(lad, 0.25) == 2);
    REQUIRE(level_for_delta(lad, 1.0 / 256.0) == 8);
    REQUIRE_THROWS_WITH(level_for_delta(lad, 0.3), "step not dyadic");
    REQUIRE_THROWS_WITH(level_for_delta(lad, 1.0 / 512.0), "step not dyadic");
    REQUIRE_THROWS_WITH(level_for_delta(lad, 0.0), "step not dyadic");
}

TEST_CASE("truncated schemes require a policy") {
    auto prob = geometric(0.5, 0.3);
    auto lad = generate_ladder(1.0, 4, 1, 9, 0);
    REQUIRE_THROWS_WITH(run(prob, std::nullopt, Scheme::Mtem, 4, lad),
                        "truncated scheme requires a policy");
    REQUIRE_THROWS_WITH(run(prob, std::nullopt, Scheme::Tem, 4, lad),
                        "truncated scheme requires a policy");
    REQUIRE_NOTHROW(run(prob, std::nullopt, Scheme::Em, 4, lad));
}

TEST_CASE("an inert radius makes the truncated schemes match em bitwise") {
    auto prob = cubic_power();
    auto policy = fixed_radius_policy(1e6);
    for (std::uint64_t rep = 0; rep < 20; ++rep) {
        auto lad = generate_ladder(1.0, 6, 1, 333, rep);
        auto em = run(prob, std::nullopt, Scheme::Em, 6, lad);
        auto mt = run(prob, policy, Scheme::Mtem, 6, lad);
        auto te = run(prob, policy, Scheme::Tem, 6, lad);
        REQUIRE(em.states == mt.states);
        REQUIRE(em.states == te.states);
        REQUIRE_FALSE(em.diverged_at.has_value());
    }
}

TEST_CASE("grid solution exposes grid states exactly") {
    auto prob = geometric(0.5, 0.3);
    auto lad = generate_ladder(1.0, 6, 1, 21, 4);
    auto sol = run(prob, std::nullopt, Scheme::Em, 4, lad);
    REQUIRE(sol.steps() == 16);
    REQUIRE(sol.stored_states() == 17);
    REQUIRE(sol.state(0)[0] == 1.0);
    // manual recomputation of the first step
    const double delta = 1.0 / 16.0;
    const auto dw = coarsen(lad, 4);
    const double x1 = 1.0 + 0.5 * delta + 0.3 * dw[0];
    REQUIRE(sol.state(1)[0] == x1);

    // readouts at grid times reproduce the states bitwise
    for (long k = 0; k <= 16; ++k) {
        const double t = static_cast<double>(k) * delta;
        REQUIRE(step_process_value(sol, t)[0] == sol.state(k)[0]);
        REQUIRE(continuous_value(sol, prob, lad, t)[0] == sol.state(k)[0]);
    }
}

TEST_CASE("step process is constant within a cell") {
    auto prob = geometric(0.5, 0.3);
    auto lad = generate_ladder(1.0, 5, 1, 77, 2);
    auto sol = run(prob, std::nullopt, Scheme::Em, 3, lad);
    const double delta = 1.0 / 8.0;
    for (long k = 0; k < 8; ++k) {
        const double left = static_cast<double>(k) * delta;
        REQUIRE(step_process_value(sol, left + 0.4 * delta)[0] == sol.state(k)[0]);
        REQUIRE(step_process_value(sol, left + 0.9 * delta)[0] == sol.state(k)[0]);
    }
    REQUIRE(step_process_value(sol, 1.0)[0] == sol.state(8)[0]);
}

TEST_CASE("continuous readout interpolates with frozen coefficients") {
    // f = 3 constant, g = 0: halfway through a cell the interpolant has moved
    // by exactly f * delta / 2 from the cell state
    SdeProblem prob;
    prob.d = prob.m = 1;
    prob.drift = [](std::span<const double>, std::span<double> out) { out[0] = 3.0; };
    prob.diffusion = [](std::span<const double>, std::span<double> out) { out[0] = 0.0; };
    prob.x0 = {0.0};
    prob.lipschitz_at = [](double) { return 1.0; };
    auto lad = generate_ladder(1.0, 6, 1, 1, 0);
    auto sol = run(prob, std::nullopt, Scheme::Em, 3, lad);
    const double delta = 1.0 / 8.0;
    for (long k = 0; k < 8; ++k) {
        const double mid = (static_cast<double>(k) + 0.5) * delta;
        const double gap = continuous_value(sol, prob, lad, mid)[0] -
                           step_process_value(sol, mid)[0];
        REQUIRE(gap == 3.0 * delta / 2.0);
    }
}

TEST_CASE("divergence stops the trajectory and readouts past it throw") {
    // deterministic doubling drift overflows the guard quickly
    SdeProblem prob;
    prob.d = prob.m = 1;
    prob.drift = [](std::span<const double> x, std::span<double> out) {
        out[0] = x[0] * x[0] * x[0];
    };
    prob.diffusion = [](std::span<const double>, std::span<double> out) { out[0] = 0.0; };
    prob.x0 = {10.0};
    prob.lipschitz_at = [](double R) { return 3.0 * R * R; };
    auto lad = generate_ladder(1.0, 4, 1, 8, 0);
    auto sol = run(prob, std::nullopt, Scheme::Em, 3, lad);
    REQUIRE(sol.diverged_at.has_value());
    REQUIRE(*sol.diverged_at >= 1);
    REQUIRE(sol.stored_states() == *sol.diverged_at);
    // values before the divergence stay readable
    REQUIRE_NOTHROW(step_process_value(sol, 0.0));
    REQUIRE_THROWS_WITH(step_process_value(sol, 1.0), "trajectory diverged");
    REQUIRE_THROWS_WITH(continuous_value(sol, prob, lad, 1.0), "trajectory diverged");
}

TEST_CASE("mtem with a shrinking radius stays bounded where em explodes") {
    auto prob = cubic_power();
    prob.x0 = {3.0};
    auto policy = build_h_from_profile(prob.lipschitz_at, 0.5);
    auto lad = generate_ladder(1.0, 10, 1, 4096, 1);
    auto sol = run(prob, policy, Scheme::Mtem, 10, lad);
    REQUIRE_FALSE(sol.diverged_at.has_value());
    for (long k = 0; k <= sol.steps(); ++k)
        REQUIRE(std::fabs(sol.state(k)[0]) < 1e3);
}
