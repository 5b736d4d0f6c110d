#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>
#include <mtem/experiments.hpp>

using namespace mtem;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& leaf) {
    const fs::path dir = fs::temp_directory_path() / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

const char* kSmallLinear = R"(# small smoke experiment
[problem]
name = linear

[run]
levels = 4..6
replicates = 200
seed = 4242
sup = true
q = 2
)";

}  // namespace

TEST_CASE("config text parses sections, comments, and whitespace") {
    auto cfg = parse_config_text(
        "[problem]\n"
        "  name = linear  # trailing comment\n"
        "\n"
        "[run]\n"
        "levels= 4, 6 ,8\n"
        "seed =99\n");
    REQUIRE(cfg.has("problem.name"));
    REQUIRE(cfg.kv.at("problem.name") == "linear");
    REQUIRE(cfg.kv.at("run.levels") == "4, 6 ,8");
    REQUIRE(cfg.kv.at("run.seed") == "99");
    REQUIRE(cfg.get("run.t_end", "1.0") == "1.0");
}

TEST_CASE("config text rejects malformed input") {
    REQUIRE_THROWS_WITH(parse_config_text("[run]\nwalltime = 3\n"),
                        "unknown config key: run.walltime");
    REQUIRE_THROWS_WITH(parse_config_text("[run]\nseed = 1\nseed = 2\n"),
                        "duplicate config key: run.seed");
    REQUIRE_THROWS_WITH(parse_config_text("[run]\nseed\n"),
                        "config line 2: expected key = value");
    REQUIRE_THROWS_WITH(parse_config_text("[run\nseed = 1\n"),
                        "config line 1: unterminated section header");
}

TEST_CASE("level lists accept ranges and explicit values") {
    REQUIRE(detail::parse_levels("4..7") == std::vector<int>{4, 5, 6, 7});
    REQUIRE(detail::parse_levels("3, 5, 9") == std::vector<int>{3, 5, 9});
    REQUIRE(detail::parse_levels("12") == std::vector<int>{12});
    REQUIRE_THROWS_WITH(detail::parse_levels("7..4"), "levels range reversed");
    REQUIRE_THROWS_WITH(detail::parse_levels("1, 27"), "levels outside [0, 26]");
    REQUIRE_THROWS_WITH(detail::parse_levels(""), "levels empty");
}

TEST_CASE("resolution fills defaults for a minimal linear config") {
    auto ex = resolve_config(parse_config_text("[problem]\nname = linear\n[run]\nlevels = 4..6\n"));
    REQUIRE(ex.problem.sde.name == "linear");
    REQUIRE(ex.schemes == std::vector<Scheme>{Scheme::Mtem});
    REQUIRE(ex.t_end == 1.0);
    REQUIRE(ex.levels == std::vector<int>{4, 5, 6});
    REQUIRE(ex.ref_closed);  // linear has an exact solution
    REQUIRE(ex.q_meas == 4.0);
    REQUIRE(ex.replicates == 1000);
    REQUIRE(ex.seed == 12345);
    REQUIRE_FALSE(ex.sup);
    REQUIRE(ex.out_dir == "out");
    REQUIRE(ex.regime_flags.empty());
}

TEST_CASE("resolution picks a fine reference when no closed form exists") {
    auto ex = resolve_config(
        parse_config_text("[problem]\nname = example2\n[run]\nlevels = 4..6\n"));
    REQUIRE_FALSE(ex.ref_closed);
    REQUIRE(ex.ref_level == 10);  // coarsest + 6

    auto pinned = resolve_config(parse_config_text(
        "[problem]\nname = example2\n[run]\nlevels = 4..6\nreference = fine:14\n"));
    REQUIRE(pinned.ref_level == 14);

    REQUIRE_THROWS_WITH(
        resolve_config(parse_config_text(
            "[problem]\nname = example2\n[run]\nlevels = 4..6\nreference = closed-form\n")),
        "closed-form reference unavailable for this problem");
    REQUIRE_THROWS_WITH(
        resolve_config(parse_config_text(
            "[problem]\nname = linear\n[run]\nlevels = 4..6\nreference = fine:30\n")),
        "reference level outside [0, 26]");
}

TEST_CASE("resolution rejects bad settings with config errors") {
    REQUIRE_THROWS_AS(
        resolve_config(parse_config_text("[problem]\nname = cir\n[run]\nlevels = 4\n")),
        std::invalid_argument);
    REQUIRE_THROWS_WITH(
        resolve_config(parse_config_text(
            "[problem]\nname = example2\nh = quadratic\n[run]\nlevels = 4\n")),
        "problem.h must be profile-inverse or closed-form");
    REQUIRE_THROWS_WITH(
        resolve_config(parse_config_text("[problem]\nname = linear\n[run]\nt_end = 0\nlevels = 4\n")),
        "t_end must be positive");
    REQUIRE_THROWS_WITH(
        resolve_config(parse_config_text("[problem]\nname = linear\n")),
        "run.levels required");
}

TEST_CASE("too few replicates is a sampling error, not a config error") {
    REQUIRE_THROWS_MATCHES(
        resolve_config(parse_config_text(
            "[problem]\nname = linear\n[run]\nlevels = 4..6\nreplicates = 50\n")),
        std::runtime_error, Catch::Matchers::Message("insufficient sample"));
}

TEST_CASE("out-of-regime measurement exponents are flagged but accepted") {
    auto ex = resolve_config(parse_config_text(
        "[problem]\nname = linear\n[run]\nlevels = 4..6\nq = 2\n"));
    REQUIRE(ex.q_meas == 2.0);
    REQUIRE(ex.regime_flags.size() == 1);
    REQUIRE(ex.regime_flags[0].find("outside covered regime") != std::string::npos);

    auto sup_gap = resolve_config(parse_config_text(
        "[problem]\nname = example2\n[run]\nlevels = 4..6\nq = 5.5\n"));
    REQUIRE(sup_gap.regime_flags.size() == 1);
    REQUIRE(sup_gap.regime_flags[0].find("q > p + 2 - r") != std::string::npos);
}

TEST_CASE("inline polynomial problems resolve coefficients and radius") {
    auto ex = resolve_config(parse_config_text(
        "[problem]\nname = inline\nx0 = 0.5\ndrift_coeffs = 0, 1, 0, -1\n"
        "diffusion_coeffs = 0.5\nradius = 8\n[conditions]\nK = 3\nH = 2\n[run]\nlevels = 4\n"));
    REQUIRE(ex.problem.sde.name == "inline");
    REQUIRE(ex.problem.sde.drift_at(Vec{2.0})[0] == 2.0 - 8.0);
    REQUIRE(ex.problem.sde.diffusion_at(Vec{2.0})(0, 0) == 0.5);
    REQUIRE(ex.problem.sde.lipschitz_at(2.0) == 13.0);  // 1 + 3 R^2 at R = 2
    REQUIRE(ex.problem.policy.description == "fixed-radius");
    REQUIRE(ex.problem.policy.radius_at(0.01) == 8.0);
    REQUIRE(ex.problem.cond.K == 3.0);
    REQUIRE(ex.problem.cond.H == 2.0);

    // without a fixed radius the profile inverse kicks in
    auto prof = resolve_config(parse_config_text(
        "[problem]\nname = inline\nx0 = 0.5\ndrift_coeffs = 0, 1, 0, -1\n"
        "diffusion_coeffs = 0.5\n[conditions]\nK = 3\nH = 2\n[run]\nlevels = 4\n"));
    const double h = prof.problem.policy.radius_at(1.0 / 1024.0);
    const double L = prof.problem.sde.lipschitz_at(h);
    REQUIRE_THAT(h * std::pow(L, 4.0) * (1.0 / 1024.0),
                 Catch::Matchers::WithinRel(1.0, 1e-8));

    REQUIRE_THROWS_WITH(
        resolve_config(parse_config_text(
            "[problem]\nname = inline\nx0 = 1\ndrift_coeffs = 0, -1\n[run]\nlevels = 4\n")),
        "inline problems require drift_coeffs and diffusion_coeffs");
    REQUIRE_THROWS_WITH(
        resolve_config(parse_config_text(
            "[problem]\nname = inline\nx0 = 1\ndrift_coeffs = 0, -1\n"
            "diffusion_coeffs = 0.5\n[run]\nlevels = 4\n")),
        "inline problems require K and H in [conditions]");
}

TEST_CASE("constants files round-trip through the conditions section") {
    const fs::path dir = fresh_dir("mtem-test-constants");
    const std::string path = write_constants_file("example2", dir.string());
    REQUIRE(fs::exists(path));

    auto j = nlohmann::json::parse(slurp(path));
    REQUIRE(j.at("schema_version") == 1);
    REQUIRE(j.at("problem") == "example2");
    REQUIRE(j.at("constants").at("p") == 6.0);
    REQUIRE(j.at("constants").at("r") == 3.0);
    REQUIRE(j.at("derived").is_array());
    REQUIRE_FALSE(j.at("derived").empty());

    // consuming the file reproduces the builtin constants
    auto ex = resolve_config(parse_config_text(
        "[problem]\nname = example2\n[conditions]\nconstants-file = " + path +
        "\n[run]\nlevels = 4..6\n"));
    REQUIRE(ex.problem.cond.K == builtin_example2().cond.K);

    // explicit keys override file values
    auto padded = resolve_config(parse_config_text(
        "[problem]\nname = example2\n[conditions]\nconstants-file = " + path +
        "\nK = 9.5\n[run]\nlevels = 4..6\n"));
    REQUIRE(padded.problem.cond.K == 9.5);

    REQUIRE_THROWS_AS(resolve_config(parse_config_text(
                          "[problem]\nname = example2\n[conditions]\n"
                          "constants-file = /nonexistent/c.json\n[run]\nlevels = 4..6\n")),
                      std::invalid_argument);
}

TEST_CASE("experiment runs emit the full artifact set deterministically") {
    auto ex = resolve_config(parse_config_text(kSmallLinear));
    const fs::path dir_a = fresh_dir("mtem-test-run-a");
    ex.out_dir = dir_a.string();
    run_experiment(ex);

    const std::string header =
        "scheme,delta,level,q,err_T_mean,err_T_se,err_sup_mean,err_sup_se,"
        "err_T_step_mean,err_T_step_se,L_h_delta,L4_delta,replicates,diverged";
    const std::string ladder = slurp(dir_a / "ladder.csv");
    REQUIRE(ladder.substr(0, ladder.find('\n')) == header);
    // header plus one row per (scheme, level)
    REQUIRE(std::count(ladder.begin(), ladder.end(), '\n') == 4);
    REQUIRE(ladder.find("mtem,") != std::string::npos);

    const std::string div = slurp(dir_a / "divergence.csv");
    REQUIRE(div.substr(0, div.find('\n')) == "scheme,delta,level,replicates,diverged");

    auto fit = nlohmann::json::parse(slurp(dir_a / "rate_fit.json"));
    REQUIRE(fit.at("schema_version") == 1);
    REQUIRE(fit.at("problem") == "linear");
    REQUIRE(fit.at("scheme") == "mtem");
    REQUIRE(fit.at("q") == 2.0);
    REQUIRE(fit.at("rows_used") == 3);
    const double slope = fit.at("slope").get<double>();
    REQUIRE(slope > 0.2);
    REQUIRE(slope < 0.8);
    REQUIRE(fs::exists(dir_a / "rate_fit_sup.json"));
    REQUIRE(fs::exists(dir_a / "rate_fit_sup_step.json"));

    auto cm = nlohmann::json::parse(slurp(dir_a / "condition_margins.json"));
    REQUIRE(cm.at("schema_version") == 1);
    REQUIRE(cm.at("monotonicity").at("margin").get<double>() <= 1.0 + 1e-9);
    REQUIRE(cm.at("khasminskii").at("margin").get<double>() <= 1.0 + 1e-9);
    REQUIRE(cm.at("diffusion_growth").at("margin").get<double>() <= 1.0 + 1e-9);
    REQUIRE(cm.at("truncated_khasminskii").size() == 3);
    for (const auto& t : cm.at("truncated_khasminskii"))
        REQUIRE(t.at("margin").get<double>() <= 1.0);
    REQUIRE(cm.at("admissibility").size() == 3);
    for (const auto& a : cm.at("admissibility")) REQUIRE(a.at("theorem_covered") == true);
    // the q = 2 measurement is out of regime and must be flagged in the record
    REQUIRE(cm.at("flags").size() == 1);

    // identical config, fresh directory: byte-identical outputs
    auto ex_b = resolve_config(parse_config_text(kSmallLinear));
    const fs::path dir_b = fresh_dir("mtem-test-run-b");
    ex_b.out_dir = dir_b.string();
    run_experiment(ex_b);
    for (const char* f : {"ladder.csv", "divergence.csv", "rate_fit.json",
                          "condition_margins.json"})
        REQUIRE(slurp(dir_a / f) == slurp(dir_b / f));

    // job count must not leak into any output byte
    auto ex_j = resolve_config(parse_config_text(kSmallLinear));
    const fs::path dir_j = fresh_dir("mtem-test-run-j");
    ex_j.out_dir = dir_j.string();
    ex_j.jobs = 4;
    run_experiment(ex_j);
    for (const char* f : {"ladder.csv", "divergence.csv", "rate_fit.json",
                          "condition_margins.json"})
        REQUIRE(slurp(dir_a / f) == slurp(dir_j / f));
}

TEST_CASE("additional schemes get suffixed rate fits") {
    auto ex = resolve_config(parse_config_text(
        "[problem]\nname = linear\n[run]\nlevels = 4..6\nreplicates = 150\n"
        "schemes = mtem, em\nq = 2\n"));
    const fs::path dir = fresh_dir("mtem-test-run-multi");
    ex.out_dir = dir.string();
    run_experiment(ex);
    REQUIRE(fs::exists(dir / "rate_fit.json"));
    REQUIRE(fs::exists(dir / "rate_fit_em.json"));
    auto em_fit = nlohmann::json::parse(slurp(dir / "rate_fit_em.json"));
    REQUIRE(em_fit.at("scheme") == "em");
    const std::string ladder = slurp(dir / "ladder.csv");
    REQUIRE(ladder.find("\nem,") != std::string::npos);
    // the truncation radius is inert here, so both schemes agree row for row
    auto mtem_fit = nlohmann::json::parse(slurp(dir / "rate_fit.json"));
    REQUIRE(mtem_fit.at("slope").get<double>() == em_fit.at("slope").get<double>());
}
