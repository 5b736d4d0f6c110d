#pragma once

// Experiment configuration and orchestration behind the CLI. Configs are flat
// "key = value" text with [section] headers; outputs are CSV/JSON files whose
// bytes depend only on (config, seed), never on the job count.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtem/analysis.hpp"
#include "mtem/builtins.hpp"
#include "mtem/integrators.hpp"

namespace mtem {

inline std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ============================================================
// Config text
// ============================================================

struct ParsedConfig {
    // keys stored as "section.key"
    std::map<std::string, std::string> kv;

    bool has(const std::string& key) const { return kv.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = kv.find(key);
        return it == kv.end() ? fallback : it->second;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline double parse_double(const std::string& s, const std::string& key) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("bad number for " + key + ": " + s);
    }
    if (pos != s.size()) throw std::invalid_argument("bad number for " + key + ": " + s);
    return v;
}

inline long parse_long(const std::string& s, const std::string& key) {
    std::size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(s, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("bad integer for " + key + ": " + s);
    }
    if (pos != s.size()) throw std::invalid_argument("bad integer for " + key + ": " + s);
    return v;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw std::invalid_argument("bad boolean for " + key + ": " + s);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(s);
    while (std::getline(ss, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

inline const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = {
        "problem.name",          "problem.a",
        "problem.b",             "problem.x0",
        "problem.epsilon",       "problem.h",
        "problem.h_scale",       "problem.drift_coeffs",
        "problem.diffusion_coeffs", "problem.radius",
        "conditions.p",          "conditions.q",
        "conditions.r",          "conditions.K",
        "conditions.H",          "conditions.Kbar",
        "conditions.constants-file",
        "run.schemes",           "run.t_end",
        "run.levels",            "run.reference",
        "run.replicates",        "run.seed",
        "run.sup",               "run.q",
        "output.dir",
    };
    return keys;
}

} // namespace detail

inline ParsedConfig parse_config_text(const std::string& text) {
    ParsedConfig cfg;
    std::string section;
    std::stringstream ss(text);
    std::string line;
    long lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": unterminated section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        const std::string key = section + "." + detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        const auto& known = detail::known_config_keys();
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw std::invalid_argument("unknown config key: " + key);
        if (cfg.kv.count(key))
            throw std::invalid_argument("duplicate config key: " + key);
        cfg.kv[key] = value;
    }
    return cfg;
}

inline ParsedConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

// ============================================================
// Resolved experiment
// ============================================================

struct ExperimentConfig {
    BuiltinProblem problem;
    std::vector<Scheme> schemes;
    double t_end = 1.0;
    std::vector<int> levels;
    bool ref_closed = false;
    int ref_level = -1;
    double q_meas = 4.0;
    long replicates = 1000;
    std::uint64_t seed = 12345;
    bool sup = false;
    std::string out_dir = "out";
    int jobs = 1;
    std::vector<std::string> regime_flags;
    // sampling effort for the condition margins recorded alongside each run
    long margin_samples = 20000;
    double margin_radius = 50.0;
};

namespace detail {

inline double poly_eval(const std::vector<double>& c, double x) {
    double v = 0.0;
    for (std::size_t i = c.size(); i-- > 0;) v = v * x + c[i];
    return v;
}

// sum_i i |c_i| R^{i-1}, an upper bound for |p'| on [-R, R]
inline double poly_lipschitz(const std::vector<double>& c, double R) {
    double v = 0.0;
    for (std::size_t i = c.size(); i-- > 1;) v = v * R + static_cast<double>(i) * std::fabs(c[i]);
    return v;
}

inline std::vector<double> parse_coeff_list(const std::string& s, const std::string& key) {
    std::vector<double> out;
    for (const auto& tok : split_list(s)) out.push_back(parse_double(tok, key));
    if (out.empty()) throw std::invalid_argument(key + " must list coefficients");
    return out;
}

inline BuiltinProblem inline_poly_problem(const ParsedConfig& cfg) {
    if (!cfg.has("problem.drift_coeffs") || !cfg.has("problem.diffusion_coeffs"))
        throw std::invalid_argument("inline problems require drift_coeffs and diffusion_coeffs");
    const auto fc = parse_coeff_list(cfg.kv.at("problem.drift_coeffs"), "drift_coeffs");
    const auto gc = parse_coeff_list(cfg.kv.at("problem.diffusion_coeffs"), "diffusion_coeffs");
    if (!cfg.has("problem.x0")) throw std::invalid_argument("inline problems require x0");

    BuiltinProblem b;
    b.sde.name = "inline";
    b.sde.d = 1;
    b.sde.m = 1;
    b.sde.x0 = {parse_double(cfg.kv.at("problem.x0"), "x0")};
    b.sde.drift = [fc](std::span<const double> x, std::span<double> out) {
        out[0] = poly_eval(fc, x[0]);
    };
    b.sde.diffusion = [gc](std::span<const double> x, std::span<double> out) {
        out[0] = poly_eval(gc, x[0]);
    };
    b.sde.lipschitz_at = [fc, gc](double R) {
        return std::max({poly_lipschitz(fc, R), poly_lipschitz(gc, R), 1.0});
    };
    if (cfg.has("problem.radius"))
        b.policy = fixed_radius_policy(parse_double(cfg.kv.at("problem.radius"), "radius"));
    else
        b.policy = build_h_from_profile(b.sde.lipschitz_at, 0.25);

    if (!cfg.has("conditions.K") || !cfg.has("conditions.H"))
        throw std::invalid_argument("inline problems require K and H in [conditions]");
    return b;
}

inline std::vector<int> parse_levels(const std::string& s) {
    std::vector<int> levels;
    const auto dots = s.find("..");
    if (dots != std::string::npos) {
        const long lo = parse_long(trim(s.substr(0, dots)), "levels");
        const long hi = parse_long(trim(s.substr(dots + 2)), "levels");
        if (lo > hi) throw std::invalid_argument("levels range reversed");
        for (long j = lo; j <= hi; ++j) levels.push_back(static_cast<int>(j));
    } else {
        for (const auto& tok : split_list(s)) levels.push_back(static_cast<int>(parse_long(tok, "levels")));
    }
    if (levels.empty()) throw std::invalid_argument("levels empty");
    for (int j : levels)
        if (j < 0 || j > kMaxFinestLevel)
            throw std::invalid_argument("levels outside [0, 26]");
    return levels;
}

} // namespace detail

inline ExperimentConfig resolve_config(const ParsedConfig& cfg) {
    ExperimentConfig ex;

    const std::string name = cfg.get("problem.name", "");
    if (name.empty()) throw std::invalid_argument("problem.name required");
    if (name == "example1") {
        ex.problem = builtin_example1(
            detail::parse_double(cfg.get("problem.a", "1.0"), "a"),
            detail::parse_double(cfg.get("problem.epsilon", "0.5"), "epsilon"),
            detail::parse_double(cfg.get("problem.x0", "2.0"), "x0"));
    } else if (name == "example2") {
        const std::string h = cfg.get("problem.h", "profile-inverse");
        Example2Radius mode;
        if (h == "profile-inverse")
            mode = Example2Radius::ProfileInverse;
        else if (h == "closed-form")
            mode = Example2Radius::ClosedForm;
        else
            throw std::invalid_argument("problem.h must be profile-inverse or closed-form");
        ex.problem = builtin_example2(
            detail::parse_double(cfg.get("problem.epsilon", "0.5"), "epsilon"), mode,
            detail::parse_double(cfg.get("problem.h_scale", "1.0"), "h_scale"),
            detail::parse_double(cfg.get("problem.x0", "1.0"), "x0"));
    } else if (name == "linear") {
        ex.problem = builtin_linear(detail::parse_double(cfg.get("problem.a", "0.5"), "a"),
                                    detail::parse_double(cfg.get("problem.b", "0.3"), "b"),
                                    detail::parse_double(cfg.get("problem.x0", "1.0"), "x0"));
    } else if (name == "inline") {
        ex.problem = detail::inline_poly_problem(cfg);
    } else {
        throw std::invalid_argument("unknown problem: " + name);
    }

    ConditionSet& cond = ex.problem.cond;
    if (cfg.has("conditions.constants-file")) {
        std::ifstream in(cfg.kv.at("conditions.constants-file"));
        if (!in)
            throw std::invalid_argument("cannot open constants file: " +
                                        cfg.kv.at("conditions.constants-file"));
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw std::invalid_argument(std::string("bad constants file: ") + e.what());
        }
        const auto& c = j.at("constants");
        if (c.contains("p")) cond.p = c.at("p").get<double>();
        if (c.contains("q")) cond.q = c.at("q").get<double>();
        if (c.contains("r")) cond.r = c.at("r").get<double>();
        if (c.contains("K")) cond.K = c.at("K").get<double>();
        if (c.contains("H")) cond.H = c.at("H").get<double>();
        if (c.contains("Kbar")) cond.Kbar = c.at("Kbar").get<double>();
    }
    if (cfg.has("conditions.p")) cond.p = detail::parse_double(cfg.kv.at("conditions.p"), "p");
    if (cfg.has("conditions.q")) cond.q = detail::parse_double(cfg.kv.at("conditions.q"), "q");
    if (cfg.has("conditions.r")) cond.r = detail::parse_double(cfg.kv.at("conditions.r"), "r");
    if (cfg.has("conditions.K")) cond.K = detail::parse_double(cfg.kv.at("conditions.K"), "K");
    if (cfg.has("conditions.H")) cond.H = detail::parse_double(cfg.kv.at("conditions.H"), "H");
    if (cfg.has("conditions.Kbar"))
        cond.Kbar = detail::parse_double(cfg.kv.at("conditions.Kbar"), "Kbar");
    cond.validate();

    for (const auto& tok : detail::split_list(cfg.get("run.schemes", "mtem")))
        ex.schemes.push_back(scheme_from_name(tok));
    if (ex.schemes.empty()) throw std::invalid_argument("run.schemes empty");

    ex.t_end = detail::parse_double(cfg.get("run.t_end", "1.0"), "t_end");
    if (!(ex.t_end > 0.0)) throw std::invalid_argument("t_end must be positive");
    if (!cfg.has("run.levels")) throw std::invalid_argument("run.levels required");
    ex.levels = detail::parse_levels(cfg.kv.at("run.levels"));
    std::sort(ex.levels.begin(), ex.levels.end());
    ex.levels.erase(std::unique(ex.levels.begin(), ex.levels.end()), ex.levels.end());

    const int coarsest = ex.levels.front();
    std::string ref = cfg.get("run.reference", "");
    if (ref.empty()) ref = ex.problem.closed_form ? "closed-form" : "fine";
    if (ref == "closed-form") {
        if (!ex.problem.closed_form)
            throw std::invalid_argument("closed-form reference unavailable for this problem");
        ex.ref_closed = true;
    } else if (ref.rfind("fine", 0) == 0) {
        ex.ref_closed = false;
        if (ref == "fine")
            ex.ref_level = coarsest + 6;
        else if (ref.rfind("fine:", 0) == 0)
            ex.ref_level = static_cast<int>(detail::parse_long(ref.substr(5), "reference"));
        else
            throw std::invalid_argument("bad reference: " + ref);
        if (ex.ref_level < 0 || ex.ref_level > kMaxFinestLevel)
            throw std::invalid_argument("reference level outside [0, 26]");
    } else {
        throw std::invalid_argument("bad reference: " + ref);
    }

    ex.replicates = detail::parse_long(cfg.get("run.replicates", "1000"), "replicates");
    if (ex.replicates < 100) throw std::runtime_error("insufficient sample");
    ex.seed = static_cast<std::uint64_t>(
        detail::parse_long(cfg.get("run.seed", "12345"), "seed"));
    ex.sup = detail::parse_bool(cfg.get("run.sup", "false"), "sup");
    ex.q_meas = detail::parse_double(cfg.get("run.q", fmt_g17(cond.q)), "q");
    if (!(ex.q_meas > 0.0)) throw std::invalid_argument("q must be positive");
    ex.out_dir = cfg.get("output.dir", "out");

    // out-of-regime measurements run anyway; they are flagged, not rejected
    if (!(2.0 < ex.q_meas && ex.q_meas < cond.p && cond.p <= 6.0))
        ex.regime_flags.push_back("measurement exponent q=" + fmt_g17(ex.q_meas) +
                                  " outside covered regime 2 < q < p <= 6");
    if (cond.r.has_value() && ex.q_meas > cond.p + 2.0 - *cond.r)
        ex.regime_flags.push_back("q > p + 2 - r: sup-variant bound not covered");
    return ex;
}

// ============================================================
// Output emission
// ============================================================

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << bytes;
}

inline nlohmann::ordered_json rate_fit_json(const ExperimentConfig& ex, Scheme scheme,
                                            const RateFit& fit) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["problem"] = ex.problem.sde.name;
    j["scheme"] = scheme_name(scheme);
    j["q"] = ex.q_meas;
    j["slope"] = fit.slope;
    j["intercept"] = fit.intercept;
    j["residual"] = fit.residual;
    j["rows_used"] = fit.rows_used;
    return j;
}

inline nlohmann::ordered_json margin_json(const MarginReport& rep) {
    nlohmann::ordered_json j;
    j["worst"] = rep.worst;
    j["bound"] = rep.bound;
    j["margin"] = rep.margin;
    j["samples"] = rep.samples;
    return j;
}

} // namespace detail

// Runs every configured scheme over the level ladder and emits
// ladder.csv, rate_fit*.json, condition_margins.json, divergence.csv.
inline void run_experiment(ExperimentConfig ex) {
    namespace fs = std::filesystem;
    fs::create_directories(ex.out_dir);

    const Reference ref = ex.ref_closed ? Reference::closed(ex.problem.closed_form)
                                        : Reference::fine(ex.ref_level);
    std::vector<ErrorLadder> ladders;
    for (Scheme s : ex.schemes)
        ladders.push_back(measure_strong_error(ex.problem.sde, ex.problem.policy, s, ex.q_meas,
                                               ex.t_end, ex.levels, ex.replicates, ref, ex.seed,
                                               ex.sup, ex.jobs));

    std::string csv =
        "scheme,delta,level,q,err_T_mean,err_T_se,err_sup_mean,err_sup_se,"
        "err_T_step_mean,err_T_step_se,L_h_delta,L4_delta,replicates,diverged\n";
    std::string div_csv = "scheme,delta,level,replicates,diverged\n";
    for (std::size_t si = 0; si < ladders.size(); ++si) {
        const auto& lad = ladders[si];
        for (const auto& row : lad.rows) {
            csv += scheme_name(lad.scheme);
            csv += ',';
            csv += fmt_g17(row.delta);
            csv += ',';
            csv += std::to_string(row.level);
            csv += ',';
            csv += fmt_g17(lad.q);
            csv += ',';
            csv += fmt_g17(row.err_T_mean);
            csv += ',';
            csv += fmt_g17(row.err_T_se);
            csv += ',';
            csv += fmt_g17(row.err_sup_mean);
            csv += ',';
            csv += fmt_g17(row.err_sup_se);
            csv += ',';
            csv += fmt_g17(row.err_T_step_mean);
            csv += ',';
            csv += fmt_g17(row.err_T_step_se);
            csv += ',';
            csv += fmt_g17(row.L_h_delta);
            csv += ',';
            csv += fmt_g17(row.l4_delta);
            csv += ',';
            csv += std::to_string(row.replicates);
            csv += ',';
            csv += std::to_string(row.diverged);
            csv += '\n';
            div_csv += scheme_name(lad.scheme);
            div_csv += ',';
            div_csv += fmt_g17(row.delta);
            div_csv += ',';
            div_csv += std::to_string(row.level);
            div_csv += ',';
            div_csv += std::to_string(row.replicates + row.diverged);
            div_csv += ',';
            div_csv += std::to_string(row.diverged);
            div_csv += '\n';
            if (row.diverged > 0 &&
                static_cast<double>(row.diverged) >
                    0.01 * static_cast<double>(row.replicates + row.diverged))
                ex.regime_flags.push_back("divergence exceeds 1% for " +
                                          std::string(scheme_name(lad.scheme)) + " at level " +
                                          std::to_string(row.level));
        }
    }
    detail::write_file(fs::path(ex.out_dir) / "ladder.csv", csv);
    detail::write_file(fs::path(ex.out_dir) / "divergence.csv", div_csv);

    if (ex.levels.size() >= 3) {
        for (std::size_t si = 0; si < ladders.size(); ++si) {
            const std::string suffix =
                si == 0 ? "" : std::string("_") + scheme_name(ex.schemes[si]);
            const auto fit = fit_rate(ladders[si], ErrorStat::TerminalContinuous);
            detail::write_file(fs::path(ex.out_dir) / ("rate_fit" + suffix + ".json"),
                               detail::rate_fit_json(ex, ex.schemes[si], fit).dump(2) + "\n");
            if (ex.sup) {
                const auto fsup = fit_rate(ladders[si], ErrorStat::SupContinuous);
                detail::write_file(
                    fs::path(ex.out_dir) / ("rate_fit_sup" + suffix + ".json"),
                    detail::rate_fit_json(ex, ex.schemes[si], fsup).dump(2) + "\n");
                const auto fstep = fit_rate(ladders[si], ErrorStat::SupStep);
                detail::write_file(
                    fs::path(ex.out_dir) / ("rate_fit_sup_step" + suffix + ".json"),
                    detail::rate_fit_json(ex, ex.schemes[si], fstep).dump(2) + "\n");
            }
        }
    }

    // condition margins at the declared constants, plus per-level truncation health
    const auto& prob = ex.problem.sde;
    const auto& cond = ex.problem.cond;
    nlohmann::ordered_json cm;
    cm["schema_version"] = 1;
    cm["problem"] = prob.name;
    cm["samples"] = ex.margin_samples;
    cm["radius"] = ex.margin_radius;
    cm["monotonicity"] = detail::margin_json(check_monotonicity_condition(
        prob, cond, ex.margin_samples, ex.margin_radius, ex.seed + 1));
    cm["khasminskii"] = detail::margin_json(
        check_khasminskii(prob, cond, ex.margin_samples, ex.margin_radius, ex.seed + 2));
    if (cond.r.has_value() && cond.Kbar.has_value())
        cm["diffusion_growth"] = detail::margin_json(check_diffusion_growth(
            prob, cond, ex.margin_samples, ex.margin_radius, ex.seed + 3));
    nlohmann::ordered_json trunc = nlohmann::ordered_json::array();
    nlohmann::ordered_json admis = nlohmann::ordered_json::array();
    for (int j : ex.levels) {
        const double delta = ex.t_end / static_cast<double>(1L << j);
        const auto tk = check_truncated_khasminskii(prob, ex.problem.policy, cond, delta,
                                                    ex.margin_samples,
                                                    ex.seed + 10 + static_cast<std::uint64_t>(j));
        nlohmann::ordered_json t = detail::margin_json(tk);
        t["delta"] = delta;
        t["level"] = j;
        trunc.push_back(t);
        const auto ad = check_step_admissible(prob, ex.problem.policy, cond, delta);
        nlohmann::ordered_json a;
        a["delta"] = ad.delta;
        a["level"] = j;
        a["radius"] = ad.radius;
        a["lipschitz"] = ad.lipschitz;
        a["l4_delta"] = ad.l4_delta;
        a["drift_origin_ok"] = ad.drift_origin_ok;
        a["lipschitz_floor_ok"] = ad.lipschitz_floor_ok;
        a["radius_floor_ok"] = ad.radius_floor_ok;
        a["theorem_covered"] = ad.theorem_covered;
        admis.push_back(a);
    }
    cm["truncated_khasminskii"] = trunc;
    cm["admissibility"] = admis;
    cm["flags"] = ex.regime_flags;
    detail::write_file(fs::path(ex.out_dir) / "condition_margins.json", cm.dump(2) + "\n");
}

// Writes <out_dir>/<name>-constants.json with the declared and grid-derived
// constants so downstream runs can consume them via conditions.constants-file.
inline std::string write_constants_file(const std::string& problem_name,
                                        const std::string& out_dir) {
    const BuiltinProblem b = builtin_by_name(problem_name);
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["problem"] = b.sde.name;
    nlohmann::ordered_json c;
    c["p"] = b.cond.p;
    c["q"] = b.cond.q;
    if (b.cond.r.has_value()) c["r"] = *b.cond.r;
    c["K"] = b.cond.K;
    c["H"] = b.cond.H;
    if (b.cond.Kbar.has_value()) c["Kbar"] = *b.cond.Kbar;
    j["constants"] = c;
    nlohmann::ordered_json derived = nlohmann::ordered_json::array();
    for (const auto& d : b.derived) {
        nlohmann::ordered_json e;
        e["name"] = d.name;
        e["value"] = d.value;
        e["detail"] = d.detail;
        derived.push_back(e);
    }
    j["derived"] = derived;
    std::filesystem::create_directories(out_dir);
    const auto path = std::filesystem::path(out_dir) / (b.sde.name + "-constants.json");
    detail::write_file(path, j.dump(2) + "\n");
    return path.string();
}

} // namespace mtem
