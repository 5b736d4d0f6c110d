// Command-line front end: experiment runs, constant derivation, condition checks.

#include <cinttypes>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <mtem/mtem.hpp>

namespace {

constexpr double kMarginTol = 1.0 + 1e-9;

void print_margin(const char* name, const mtem::MarginReport& rep) {
    std::printf("%-24s worst %.10g  bound %.10g  margin %.10g  %s\n", name, rep.worst, rep.bound,
                rep.margin, rep.margin <= kMarginTol ? "ok" : "FAIL");
}

int check_conditions(const mtem::ExperimentConfig& ex, long samples, double radius) {
    const auto& prob = ex.problem.sde;
    const auto& cond = ex.problem.cond;
    std::printf("problem %s: p=%g q=%g K=%.10g H=%.10g", prob.name.c_str(), cond.p, cond.q,
                cond.K, cond.H);
    if (cond.r.has_value()) std::printf(" r=%g Kbar=%.10g", *cond.r, *cond.Kbar);
    std::printf("\nsamples %ld, radius %g, seed %" PRIu64 "\n", samples, radius, ex.seed);

    bool all_ok = true;
    auto track = [&](const mtem::MarginReport& rep) {
        all_ok = all_ok && rep.margin <= kMarginTol;
        return rep;
    };
    print_margin("monotonicity",
                 track(mtem::check_monotonicity_condition(prob, cond, samples, radius,
                                                          ex.seed + 1)));
    print_margin("khasminskii",
                 track(mtem::check_khasminskii(prob, cond, samples, radius, ex.seed + 2)));
    if (cond.r.has_value() && cond.Kbar.has_value())
        print_margin("diffusion_growth",
                     track(mtem::check_diffusion_growth(prob, cond, samples, radius,
                                                        ex.seed + 3)));
    for (int j : ex.levels) {
        const double delta = ex.t_end / static_cast<double>(1L << j);
        const auto tk = mtem::check_truncated_khasminskii(
            prob, ex.problem.policy, cond, delta, samples,
            ex.seed + 10 + static_cast<std::uint64_t>(j));
        char label[64];
        std::snprintf(label, sizeof label, "truncated_khas (j=%d)", j);
        print_margin(label, tk);
        all_ok = all_ok && tk.margin <= kMarginTol;
        const auto ad = mtem::check_step_admissible(prob, ex.problem.policy, cond, delta);
        std::printf("admissibility (j=%d)     h %.10g  L %.10g  L4*delta %.10g  %s\n", j,
                    ad.radius, ad.lipschitz, ad.l4_delta,
                    ad.theorem_covered ? "covered" : "NOT COVERED");
    }
    for (const auto& f : ex.regime_flags) std::printf("flag: %s\n", f.c_str());
    return all_ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Modified truncated Euler-Maruyama toolkit"};
    app.require_subcommand(1);

    std::string config_path, problem_name, out_dir;
    std::uint64_t seed = 0;
    int jobs = 1;
    long samples = 100000;
    double radius = 50.0;

    auto* run_cmd = app.add_subcommand("run", "Run an experiment config and write CSV/JSON");
    run_cmd->add_option("config", config_path, "Path to a key = value config file")->required();
    auto* run_seed = run_cmd->add_option("--seed", seed, "Override run.seed");
    run_cmd->add_option("--jobs", jobs, "Worker threads; outputs do not depend on this");
    auto* run_out = run_cmd->add_option("--out-dir", out_dir, "Override output.dir");

    auto* derive_cmd = app.add_subcommand(
        "derive-constants", "Write the grid-derived constants of a built-in problem as JSON");
    derive_cmd->add_option("problem", problem_name, "example1 | example2 | linear")->required();
    derive_cmd->add_option("--out-dir", out_dir, "Output directory")->default_str("out");

    auto* check_cmd = app.add_subcommand(
        "check-conditions", "Sample the structural condition margins of a config's problem");
    check_cmd->add_option("config", config_path, "Path to a key = value config file")->required();
    auto* check_seed = check_cmd->add_option("--seed", seed, "Override run.seed");
    check_cmd->add_option("--jobs", jobs, "Accepted for symmetry; checks are single-threaded");
    check_cmd->add_option("--samples", samples, "Sample count per condition");
    check_cmd->add_option("--radius", radius, "Sampling ball radius");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int r = app.exit(e);
        return r == 0 ? 0 : 2;
    }

    try {
        if (run_cmd->parsed()) {
            auto ex = mtem::resolve_config(mtem::load_config_file(config_path));
            if (run_seed->count() > 0) ex.seed = seed;
            if (run_out->count() > 0) ex.out_dir = out_dir;
            ex.jobs = mtem::resolve_jobs(jobs);
            mtem::run_experiment(ex);
            std::printf("wrote %s\n", ex.out_dir.c_str());
            return 0;
        }
        if (derive_cmd->parsed()) {
            if (out_dir.empty()) out_dir = "out";
            const auto path = mtem::write_constants_file(problem_name, out_dir);
            std::printf("wrote %s\n", path.c_str());
            return 0;
        }
        auto ex = mtem::resolve_config(mtem::load_config_file(config_path));
        if (check_seed->count() > 0) ex.seed = seed;
        return check_conditions(ex, samples, radius);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return std::string(e.what()) == "insufficient sample" ? 3 : 1;
    }
}
