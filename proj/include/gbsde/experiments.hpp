#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gbsde/catalog.hpp"
#include "gbsde/common.hpp"
#include "gbsde/errors.hpp"
#include "gbsde/lattice.hpp"
#include "gbsde/pde.hpp"
#include "gbsde/report.hpp"
#include "gbsde/tree.hpp"

namespace gbsde {

struct TreeRunConfig {
    int n_steps = 10;
    int sigma_levels = 2;
    std::uint64_t node_budget = 8'000'000;

    TreeConfig resolve(const GParams& params) const {
        return TreeConfig{n_steps, detail::sigma_ladder(params, sigma_levels), node_budget};
    }
};

struct PdeRunConfig {
    int n_space = 401;
    double target_cfl = 0.45;
};

/// Driver configuration: a single JSON document; unknown keys are errors.
struct ExperimentConfig {
    std::string problem = "sqrt_z";
    std::vector<int> n_ladder = {2, 4, 8, 16};
    std::uint64_t seed = 20240901;
    int threads = 0;
    int sample_budget = 1000;
    std::string out_dir = "out";
    SolverConfig solver{};
    TreeRunConfig tree{};
    PdeRunConfig pde{};
    std::map<std::string, double> tolerances;

    double tol(const std::string& key, double fallback) const {
        auto it = tolerances.find(key);
        return it == tolerances.end() ? fallback : it->second;
    }

    SolverConfig solver_with_threads() const {
        SolverConfig s = solver;
        s.threads = threads;
        return s;
    }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void read_if(const nlohmann::json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

} // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    ExperimentConfig cfg;
    detail::reject_unknown_keys(j,
                                {"problem", "n_ladder", "seed", "threads", "sample_budget", "out",
                                 "solver", "search", "tree", "pde", "tolerances"},
                                "config root");
    detail::read_if(j, "problem", cfg.problem);
    detail::read_if(j, "n_ladder", cfg.n_ladder);
    detail::read_if(j, "seed", cfg.seed);
    detail::read_if(j, "threads", cfg.threads);
    detail::read_if(j, "sample_budget", cfg.sample_budget);
    detail::read_if(j, "out", cfg.out_dir);
    if (j.contains("solver")) {
        const auto& s = j.at("solver");
        detail::reject_unknown_keys(s,
                                    {"n_time", "n_space", "domain_halfwidth_sigmas",
                                     "sigma_levels", "fixed_point", "max_boundary_influence"},
                                    "solver");
        detail::read_if(s, "n_time", cfg.solver.n_time);
        detail::read_if(s, "n_space", cfg.solver.n_space);
        detail::read_if(s, "domain_halfwidth_sigmas", cfg.solver.domain_halfwidth_sigmas);
        detail::read_if(s, "sigma_levels", cfg.solver.sigma_levels);
        detail::read_if(s, "max_boundary_influence", cfg.solver.max_boundary_influence);
        if (s.contains("fixed_point")) {
            const auto& fp = s.at("fixed_point");
            detail::reject_unknown_keys(fp, {"tol", "max_iter"}, "solver.fixed_point");
            FixedPointOpts opts;
            detail::read_if(fp, "tol", opts.tol);
            detail::read_if(fp, "max_iter", opts.max_iter);
            cfg.solver.fixed_point = opts;
        }
    }
    if (j.contains("search")) {
        const auto& s = j.at("search");
        detail::reject_unknown_keys(s, {"radius_factor", "grid_points", "refine_iters"}, "search");
        detail::read_if(s, "radius_factor", cfg.solver.search.radius_factor);
        detail::read_if(s, "grid_points", cfg.solver.search.grid_points);
        detail::read_if(s, "refine_iters", cfg.solver.search.refine_iters);
    }
    if (j.contains("tree")) {
        const auto& t = j.at("tree");
        detail::reject_unknown_keys(t, {"n_steps", "sigma_levels", "node_budget"}, "tree");
        detail::read_if(t, "n_steps", cfg.tree.n_steps);
        detail::read_if(t, "sigma_levels", cfg.tree.sigma_levels);
        detail::read_if(t, "node_budget", cfg.tree.node_budget);
    }
    if (j.contains("pde")) {
        const auto& p = j.at("pde");
        detail::reject_unknown_keys(p, {"n_space", "target_cfl"}, "pde");
        detail::read_if(p, "n_space", cfg.pde.n_space);
        detail::read_if(p, "target_cfl", cfg.pde.target_cfl);
    }
    if (j.contains("tolerances")) {
        for (auto it = j.at("tolerances").begin(); it != j.at("tolerances").end(); ++it)
            cfg.tolerances[it.key()] = it.value().get<double>();
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config JSON: " + std::string(e.what()));
    }
    return parse_experiment_config(j);
}

namespace detail {

inline nlohmann::json environment_echo(const ExperimentConfig& cfg) {
    nlohmann::json env;
    env["problem"] = cfg.problem;
    env["seed"] = cfg.seed;
    env["threads"] = cfg.threads;
    env["sample_budget"] = cfg.sample_budget;
    env["n_ladder"] = cfg.n_ladder;
    env["solver"] = {{"n_time", cfg.solver.n_time},
                     {"n_space", cfg.solver.n_space},
                     {"domain_halfwidth_sigmas", cfg.solver.domain_halfwidth_sigmas},
                     {"sigma_levels", cfg.solver.sigma_levels},
                     {"coupling", cfg.solver.fixed_point ? "fixed_point" : "explicit"}};
    env["search"] = {{"radius_factor", cfg.solver.search.radius_factor},
                     {"grid_points", cfg.solver.search.grid_points},
                     {"refine_iters", cfg.solver.search.refine_iters}};
    env["tree"] = {{"n_steps", cfg.tree.n_steps},
                   {"sigma_levels", cfg.tree.sigma_levels},
                   {"node_budget", cfg.tree.node_budget}};
    env["pde"] = {{"n_space", cfg.pde.n_space}, {"target_cfl", cfg.pde.target_cfl}};
    return env;
}

inline const CatalogEntry& entry_for(const ExperimentConfig& cfg) {
    return find_problem(cfg.problem);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Drivers, one per subcommand
// ---------------------------------------------------------------------------

/// Closed-form sublinear expectations of B_T^2, -B_T^2 and B_T on the
/// problem's volatility interval, by both oracles.
inline RunReport run_expect(const ExperimentConfig& cfg) {
    const auto& entry = detail::entry_for(cfg);
    const GParams params = entry.spec.params;
    const double T = entry.spec.horizon;

    RunReport rep;
    rep.subcommand = "expect";
    rep.environment = detail::environment_echo(cfg);

    TreeConfig tree = cfg.tree.resolve(params);
    tree.n_steps = std::min(tree.n_steps, 6);
    const double hi = params.sigma_high * params.sigma_high * T;
    const double lo = params.sigma_low * params.sigma_low * T;

    auto square = [](double x) { return x * x; };
    auto neg_square = [](double x) { return -x * x; };
    auto ident = [](double x) { return x; };

    const double tol_tree = cfg.tol("expect.tree", 1e-12);
    rep.rows.push_back(make_check(
        "expect.tree.square", "variance-upper", std::nullopt,
        std::abs(sublinear_expect_terminal(square, tree, params, T) - hi), tol_tree));
    rep.rows.push_back(make_check(
        "expect.tree.neg_square", "variance-lower", std::nullopt,
        std::abs(sublinear_expect_terminal(neg_square, tree, params, T) + lo), tol_tree));
    rep.rows.push_back(make_check(
        "expect.tree.linear", "odd-symmetry", std::nullopt,
        std::abs(sublinear_expect_terminal(ident, tree, params, T)), tol_tree));

    const SolverConfig solver = cfg.solver_with_threads();
    const double tol_rel = cfg.tol("expect.lattice_rel", 0.02);
    rep.rows.push_back(make_check("expect.lattice.square", "variance-upper", std::nullopt,
                                  std::abs(g_expect(square, params, solver, T).value - hi),
                                  tol_rel * hi));
    rep.rows.push_back(make_check("expect.lattice.neg_square", "variance-lower", std::nullopt,
                                  std::abs(g_expect(neg_square, params, solver, T).value + lo),
                                  tol_rel * lo));
    rep.rows.push_back(make_check("expect.lattice.linear", "odd-symmetry", std::nullopt,
                                  std::abs(g_expect(ident, params, solver, T).value),
                                  cfg.tol("expect.lattice_linear", 1e-9)));
    return rep;
}

/// Raw solve diagnostics: terminal exactness, compensator sign, boundary
/// influence and sensitivity to refining the volatility ladder.
inline RunReport run_solve(const ExperimentConfig& cfg) {
    const auto& entry = detail::entry_for(cfg);
    RunReport rep;
    rep.subcommand = "solve";
    rep.environment = detail::environment_echo(cfg);

    const SolverConfig solver = cfg.solver_with_threads();
    const LatticeSolution sol = solve(entry.spec, Mode::raw(), solver);

    double term_err = 0.0;
    for (int j = 0; j < sol.n_space(); ++j)
        term_err = std::max(term_err, std::abs(sol.Y(sol.n_time(), j) -
                                               entry.spec.terminal(sol.xs[static_cast<std::size_t>(j)])));
    rep.rows.push_back(make_check("solve.terminal_exact", "terminal-data", std::nullopt, term_err,
                                  0.0));

    double k_max = -1e300;
    for (double k : sol.k_residual) k_max = std::max(k_max, k);
    rep.rows.push_back(
        make_check("solve.k_residual_sign", "compensator-direction", std::nullopt, k_max, 0.0));

    rep.rows.push_back(make_check("solve.boundary_influence", "domain-resolution", std::nullopt,
                                  sol.boundary_influence, solver.max_boundary_influence));

    SolverConfig fine = solver;
    fine.sigma_levels = 9;
    const LatticeSolution sol9 = solve(entry.spec, Mode::raw(), fine);
    rep.rows.push_back(make_check("solve.sigma_ladder_sensitivity", "volatility-ladder",
                                  std::nullopt, std::abs(sol9.root() - sol.root()),
                                  cfg.tol("solve.sigma_refine", 5e-3)));

    nlohmann::json extra;
    extra["root"] = sol.root();
    extra["root_sigma9"] = sol9.root();
    rep.environment["results"] = extra;
    return rep;
}

/// Envelope property suite over the index ladder.
inline RunReport run_props(const ExperimentConfig& cfg) {
    const auto& entry = detail::entry_for(cfg);
    RunReport rep;
    rep.subcommand = "props";
    rep.environment = detail::environment_echo(cfg);
    rep.environment["l_effective"] = std::max(entry.spec.gen.modulus.L, 1.0);

    validate_ladder(cfg.n_ladder, entry.spec.gen);
    for (int n : cfg.n_ladder) {
        const PropertyReport pr =
            verify_lemma_envelope(entry.spec.gen, cfg.solver.search, {n}, cfg.sample_budget,
                                  cfg.seed, entry.spec.horizon);
        if (!pr.precondition_ok) {
            std::string what;
            for (const auto& f : pr.precondition_failures) what += f + "; ";
            CheckRow row = make_check("props.precondition", "modulus-preconditions", n, 1.0, 0.0);
            rep.rows.push_back(row);
            rep.environment["precondition_failures"] = what;
            return rep; // suite aborts
        }
        for (const auto& c : pr.checks) {
            const std::string base_id = c.id.substr(0, c.id.find('['));
            rep.rows.push_back(
                make_check("props." + base_id, "envelope." + base_id, n, c.worst_violation, 0.0));
        }
    }
    return rep;
}

/// Monotone squeeze between the envelope solutions along the ladder.
inline RunReport run_sandwich(const ExperimentConfig& cfg) {
    const auto& entry = detail::entry_for(cfg);
    RunReport rep;
    rep.subcommand = "sandwich";
    rep.environment = detail::environment_echo(cfg);

    const SolverConfig solver = cfg.solver_with_threads();
    const SandwichReport sr = sandwich_run(entry.spec, cfg.n_ladder, solver);
    for (const auto& e : sr.entries) {
        rep.rows.push_back(make_check("sandwich.cross", "ordering-lower-upper", e.n,
                                      e.cross_violation, e.cross_slack));
    }
    for (const auto& p : sr.pairs) {
        rep.rows.push_back(make_check(
            "sandwich.lower_chain[" + std::to_string(p.n_small) + "<" + std::to_string(p.n_large) +
                "]",
            "ordering-lower-chain", p.n_large, p.lower_chain_violation, p.slack));
        rep.rows.push_back(make_check(
            "sandwich.upper_chain[" + std::to_string(p.n_small) + "<" + std::to_string(p.n_large) +
                "]",
            "ordering-upper-chain", p.n_large, p.upper_chain_violation, p.slack));
    }
    rep.rows.push_back(make_check("sandwich.uniform_bound", "uniform-sup-bound", std::nullopt,
                                  sr.uniform_bound_violation, 0.0));
    rep.environment["sup_bound"] = sr.sup_bound;
    return rep;
}

/// Envelope-distance study normalized by the index bound.
inline RunReport run_gap(const ExperimentConfig& cfg) {
    const auto& entry = detail::entry_for(cfg);
    RunReport rep;
    rep.subcommand = "gap";
    rep.environment = detail::environment_echo(cfg);

    const SolverConfig solver = cfg.solver_with_threads();
    const double cap = cfg.tol("gap.growth_cap", 1.2);
    const GapReport gr = gap_study(entry.spec, cfg.n_ladder, solver, cap);
    for (std::size_t i = 0; i < gr.entries.size(); ++i) {
        const auto& e = gr.entries[i];
        const double bound =
            i == 0 ? e.ratio : cap * gr.entries[i - 1].ratio; // no growth along the ladder
        rep.rows.push_back(make_check("gap.ratio", "gap-ratio-bounded", e.n, e.ratio, bound));
    }
    rep.rows.push_back(make_check("gap.decrease", "gap-shrinks", std::nullopt,
                                  gr.entries.back().gap, gr.entries.front().gap));
    nlohmann::json detail = nlohmann::json::array();
    for (const auto& e : gr.entries)
        detail.push_back({{"n", e.n}, {"gap", e.gap}, {"bound", e.bound}, {"ratio", e.ratio}});
    rep.environment["gap_table"] = detail;
    return rep;
}

namespace detail {

inline ProblemSpec shifted_problem(const ProblemSpec& base, double df, double dg, double dxi) {
    ProblemSpec p = base;
    auto f = base.gen.f;
    auto g = base.gen.g;
    auto xi = base.terminal;
    auto f0 = base.gen.f0;
    auto g0 = base.gen.g0;
    p.gen.f = [f, df](double t, double y, double z) { return f(t, y, z) + df; };
    p.gen.g = [g, dg](double t, double y, double z) { return g(t, y, z) + dg; };
    p.gen.f0 = [f0, df](double t) { return f0(t) + df; };
    p.gen.g0 = [g0, dg](double t) { return g0(t) + dg; };
    p.terminal = [xi, dxi](double x) { return xi(x) + dxi; };
    return p;
}

inline double tree_order_violation(const TreeSolution& a, const TreeSolution& b) {
    double worst = -1e300;
    for (std::size_t i = 0; i < a.y.size(); ++i) worst = std::max(worst, a.y[i] - b.y[i]);
    return worst;
}

} // namespace detail

/// Ordered-data comparison on both oracles: the catalog pair plus seeded
/// random nonnegative shifts of the base problem.
inline RunReport run_compare(const ExperimentConfig& cfg, int random_pairs = 100) {
    const auto& entry = detail::entry_for(cfg);
    if (!entry.companion)
        throw ConfigError("problem '" + entry.name + "' has no ordered companion");

    RunReport rep;
    rep.subcommand = "compare";
    rep.environment = detail::environment_echo(cfg);

    const double tol_tree = cfg.tol("compare.tree", 1e-10);
    const double tol_lat = cfg.tol("compare.lattice", 1e-9);

    {
        const TreeConfig tree = cfg.tree.resolve(entry.spec.params);
        const TreeSolution lo = solve_tree(entry.spec, tree);
        const TreeSolution hi = solve_tree(*entry.companion, tree);
        rep.rows.push_back(make_check("compare.tree.pair", "comparison-principle", std::nullopt,
                                      detail::tree_order_violation(lo, hi), tol_tree));
    }
    {
        const SolverConfig solver = cfg.solver_with_threads();
        const LatticeSolution lo = solve(entry.spec, Mode::raw(), solver);
        const LatticeSolution hi = solve(*entry.companion, Mode::raw(), solver);
        rep.rows.push_back(make_check("compare.lattice.pair", "comparison-principle", std::nullopt,
                                      detail::max_nodewise_excess(lo, hi), tol_lat));
    }

    // Randomized ordered pairs at small scale: breadth over resolution.
    SampleRng rng(cfg.seed ^ 0xc0117a7e5ull);
    TreeConfig tree_small = cfg.tree.resolve(entry.spec.params);
    tree_small.n_steps = std::min(tree_small.n_steps, 6);
    SolverConfig lat_small = cfg.solver_with_threads();
    lat_small.n_time = std::min(lat_small.n_time, 60);
    lat_small.n_space = std::min(lat_small.n_space, 241);

    double worst_tree = -1e300, worst_lat = -1e300;
    for (int k = 0; k < random_pairs; ++k) {
        const double df = rng.uniform(0.0, 0.3);
        const double dg = rng.uniform(0.0, 0.3);
        const double dxi = rng.uniform(0.0, 0.3);
        const ProblemSpec& base = entry.spec;
        const ProblemSpec upper = detail::shifted_problem(base, df, dg, dxi);
        const TreeSolution tlo = solve_tree(base, tree_small);
        const TreeSolution thi = solve_tree(upper, tree_small);
        worst_tree = std::max(worst_tree, detail::tree_order_violation(tlo, thi));
        const LatticeSolution llo = solve(base, Mode::raw(), lat_small);
        const LatticeSolution lhi = solve(upper, Mode::raw(), lat_small);
        worst_lat = std::max(worst_lat, detail::max_nodewise_excess(llo, lhi));
    }
    rep.rows.push_back(make_check("compare.tree.random", "comparison-principle", std::nullopt,
                                  worst_tree, tol_tree));
    rep.rows.push_back(make_check("compare.lattice.random", "comparison-principle", std::nullopt,
                                  worst_lat, tol_lat));
    rep.environment["random_pairs"] = random_pairs;
    return rep;
}

/// Dual-route linear solve: backward induction against the weighted
/// functional, plus the closed-form values of the three parameterizations.
inline RunReport run_linear_rep(const ExperimentConfig& cfg) {
    const auto& entry = detail::entry_for(cfg);
    if (entry.linear_cases.empty())
        throw ConfigError("problem '" + entry.name + "' carries no linear parameterizations");

    RunReport rep;
    rep.subcommand = "linear-rep";
    rep.environment = detail::environment_echo(cfg);

    TreeConfig tree = cfg.tree.resolve(entry.spec.params);
    tree.n_steps = std::min(tree.n_steps, 8);
    const double T = entry.spec.horizon;
    const GParams params = entry.spec.params;
    const double tol = cfg.tol("linear_rep", 1e-9);

    for (const auto& lc : entry.linear_cases) {
        const ProblemSpec problem = make_linear_problem(lc, params, T);
        const LinearRepResult r = linear_representation(problem, lc.lin, tree);
        rep.rows.push_back(make_check("linear_rep.agreement[" + lc.name + "]",
                                      "weighted-representation", tree.n_steps,
                                      std::abs(r.y_dp - r.y_gamma), tol));

        // Discrete closed forms for the shipped parameterizations.
        const double dt = T / static_cast<double>(tree.n_steps);
        const double s2 = params.sigma_high * params.sigma_high;
        double closed = std::numeric_limits<double>::quiet_NaN();
        if (lc.name == "state-drift")
            closed = std::pow(1.0 + dt, tree.n_steps) * s2 * T;
        else if (lc.name == "variance-drift")
            closed = std::pow(1.0 + s2 * dt, tree.n_steps);
        else if (lc.name == "plain-expectation")
            closed = s2 * T;
        if (std::isfinite(closed))
            rep.rows.push_back(make_check("linear_rep.closed_form[" + lc.name + "]",
                                          "discrete-compounding", tree.n_steps,
                                          std::abs(r.y_dp - closed), 1e-12 * (1.0 + std::abs(closed))));
    }
    return rep;
}

/// Lattice-versus-finite-difference agreement at default resolutions.
inline RunReport run_cross_check(const ExperimentConfig& cfg) {
    RunReport rep;
    rep.subcommand = "cross-check";
    rep.environment = detail::environment_echo(cfg);
    const double tol_rel = cfg.tol("cross_check_rel", 0.01);

    auto one = [&](const std::string& label, const ProblemSpec& spec, Mode mode) {
        const SolverConfig solver = cfg.solver_with_threads();
        const double W = solver.domain_halfwidth_sigmas * spec.params.sigma_high *
                         std::sqrt(spec.horizon);
        const PdeGrid grid = PdeGrid::make_auto_time(cfg.pde.n_space, W, spec.horizon,
                                                     spec.params, cfg.pde.target_cfl,
                                                     solver.n_time);
        const DiscrepancyReport dr = cross_check(spec, solver, grid, mode);
        rep.rows.push_back(make_check("cross_check." + label + "." + mode.label(),
                                      "feynman-kac-consistency",
                                      mode.kind == Mode::Kind::Raw ? std::optional<int>{}
                                                                   : std::optional<int>{mode.n},
                                      dr.rel_diff, tol_rel));
    };

    if (cfg.problem == "all") {
        for (const auto& e : builtin_catalog()) one(e.name, e.spec, Mode::raw());
        one("sqrt_z", find_problem("sqrt_z").spec, Mode::upper(8));
    } else {
        const auto& entry = detail::entry_for(cfg);
        one(entry.name, entry.spec, Mode::raw());
        if (!cfg.n_ladder.empty()) one(entry.name, entry.spec, Mode::upper(cfg.n_ladder.back()));
    }
    return rep;
}

/// Pathwise domination of the quadratic-variation integral.
inline RunReport run_qv_bound(const ExperimentConfig& cfg) {
    const auto& entry = detail::entry_for(cfg);
    RunReport rep;
    rep.subcommand = "qv-bound";
    rep.environment = detail::environment_echo(cfg);
    const GParams params = entry.spec.params;
    const double T = entry.spec.horizon;
    TreeConfig tree = cfg.tree.resolve(params);
    tree.n_steps = std::min(tree.n_steps, 10);

    auto flat = [](double) { return 1.0; };
    auto ramp = [](double t) { return t; };
    {
        const QvBoundReport r = check_qv_bound(flat, tree, params, T);
        rep.rows.push_back(make_check("qv.flat", "qv-domination", std::nullopt, -r.worst_margin,
                                      0.0));
    }
    {
        const QvBoundReport r = check_qv_bound(ramp, tree, params, T);
        rep.rows.push_back(make_check("qv.ramp", "qv-domination", std::nullopt, -r.worst_margin,
                                      0.0));
    }
    {
        // Degenerate interval: every increment saturates, equality holds.
        const GParams sat{params.sigma_high, params.sigma_high};
        TreeConfig tsat = tree;
        tsat.sigma_set = {params.sigma_high};
        const QvBoundReport r = check_qv_bound(flat, tsat, sat, T);
        rep.rows.push_back(make_check("qv.saturated_equality", "qv-domination-tight", std::nullopt,
                                      std::abs(r.worst_margin), cfg.tol("qv.equality", 1e-12)));
    }
    return rep;
}

struct NormsEntry {
    int n = 0;
    double sup_y2_lower = 0.0, sup_y2_upper = 0.0;
    double int_z2_lower = 0.0, int_z2_upper = 0.0;
    double k_t2_lower = 0.0, k_t2_upper = 0.0;
};

namespace detail {

inline double norm_sup_y2(const TreeSolution& sol) {
    return adversarial_path_value(
        sol, 0.0,
        [&](double acc, std::uint64_t id, int) { return std::max(acc, sol.y[id] * sol.y[id]); },
        [&](double acc, std::uint64_t leaf) {
            return std::max(acc, sol.y[leaf] * sol.y[leaf]);
        });
}

inline double norm_int_z2(const TreeSolution& sol) {
    const double dt = sol.shape.dt;
    return adversarial_path_value(
        sol, 0.0,
        [&](double acc, std::uint64_t id, int) { return acc + sol.z[id] * sol.z[id] * dt; },
        [](double acc, std::uint64_t) { return acc; });
}

inline double norm_k_t2(const TreeSolution& sol) {
    const int m = sol.shape.m;
    return adversarial_path_value(
        sol, 0.0,
        [&](double acc, std::uint64_t id, int s) {
            return acc + sol.dk[id * static_cast<std::uint64_t>(m) + static_cast<std::uint64_t>(s)];
        },
        [](double acc, std::uint64_t) { return acc * acc; });
}

/// Sandwich envelope of |Y|^2 over both first-rung solutions.
inline double norm_envelope(const TreeSolution& lo, const TreeSolution& up) {
    return adversarial_path_value(
        lo, 0.0,
        [&](double acc, std::uint64_t id, int) {
            return std::max(acc, std::max(lo.y[id] * lo.y[id], up.y[id] * up.y[id]));
        },
        [&](double acc, std::uint64_t leaf) {
            return std::max(acc, std::max(lo.y[leaf] * lo.y[leaf], up.y[leaf] * up.y[leaf]));
        });
}

} // namespace detail

/// Uniform-boundedness study of the envelope solutions' norms along the
/// ladder: the sup norm must stay inside the first-rung squeeze envelope,
/// and the gradient/compensator norms must settle (no growth in n).
inline RunReport run_norms(const ExperimentConfig& cfg) {
    const auto& entry = detail::entry_for(cfg);
    RunReport rep;
    rep.subcommand = "norms";
    rep.environment = detail::environment_echo(cfg);
    validate_ladder(cfg.n_ladder, entry.spec.gen);

    TreeConfig tree = cfg.tree.resolve(entry.spec.params);
    tree.n_steps = std::min(tree.n_steps, 7);

    std::vector<NormsEntry> table;
    std::vector<TreeSolution> lows, ups;
    for (int n : cfg.n_ladder) {
        lows.push_back(solve_tree(entry.spec, tree, Mode::lower(n), cfg.solver.search));
        ups.push_back(solve_tree(entry.spec, tree, Mode::upper(n), cfg.solver.search));
        NormsEntry e;
        e.n = n;
        e.sup_y2_lower = detail::norm_sup_y2(lows.back());
        e.sup_y2_upper = detail::norm_sup_y2(ups.back());
        e.int_z2_lower = detail::norm_int_z2(lows.back());
        e.int_z2_upper = detail::norm_int_z2(ups.back());
        e.k_t2_lower = detail::norm_k_t2(lows.back());
        e.k_t2_upper = detail::norm_k_t2(ups.back());
        table.push_back(e);
    }

    const double env = detail::norm_envelope(lows.front(), ups.front());
    const double slack = cfg.tol("norms.envelope_slack", 1e-9);
    for (const auto& e : table) {
        rep.rows.push_back(
            make_check("norms.sup_y2.lower", "uniform-sup-bound", e.n, e.sup_y2_lower, env + slack));
        rep.rows.push_back(
            make_check("norms.sup_y2.upper", "uniform-sup-bound", e.n, e.sup_y2_upper, env + slack));
    }

    // Settling rule for the gradient and compensator norms: later rungs stay
    // within a factor of the final rung.
    const double spread = cfg.tol("norms.spread", 0.5);
    auto settle_rows = [&](const char* id, auto select) {
        const double last = select(table.back());
        for (std::size_t i = 1; i < table.size(); ++i)
            rep.rows.push_back(make_check(id, "norm-settles", table[i].n,
                                          std::abs(select(table[i]) - last),
                                          spread * std::abs(last) + slack));
    };
    settle_rows("norms.int_z2.lower", [](const NormsEntry& e) { return e.int_z2_lower; });
    settle_rows("norms.int_z2.upper", [](const NormsEntry& e) { return e.int_z2_upper; });
    settle_rows("norms.k_t2.lower", [](const NormsEntry& e) { return e.k_t2_lower; });
    settle_rows("norms.k_t2.upper", [](const NormsEntry& e) { return e.k_t2_upper; });

    nlohmann::json tj = nlohmann::json::array();
    for (const auto& e : table)
        tj.push_back({{"n", e.n},
                      {"sup_y2", {e.sup_y2_lower, e.sup_y2_upper}},
                      {"int_z2", {e.int_z2_lower, e.int_z2_upper}},
                      {"k_t2", {e.k_t2_lower, e.k_t2_upper}}});
    rep.environment["norms_table"] = tj;
    return rep;
}

} // namespace gbsde
