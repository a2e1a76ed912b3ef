#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gbsde/approx.hpp"
#include "gbsde/common.hpp"
#include "gbsde/errors.hpp"
#include "gbsde/lattice.hpp"
#include "gbsde/model.hpp"

namespace gbsde {

/// Non-recombining scenario tree: at every node an adversary picks a
/// volatility from sigma_set, then the increment is +/- sigma sqrt(dt) with
/// equal weight. Branching factor is 2 * |sigma_set|.
struct TreeConfig {
    int n_steps = 10;
    std::vector<double> sigma_set; // filled from GParams when empty
    std::uint64_t node_budget = 8'000'000;

    static constexpr int kMaxSteps = 14;
};

namespace detail {

inline std::vector<double> resolve_sigma_set(const TreeConfig& cfg, const GParams& p) {
    std::vector<double> s = cfg.sigma_set.empty() ? sigma_ladder(p, 2) : cfg.sigma_set;
    if (s.empty()) throw ConfigError("sigma_set must not be empty");
    for (double v : s)
        if (v < p.sigma_low - 1e-15 || v > p.sigma_high + 1e-15)
            throw ConfigError("sigma_set entry outside the volatility interval");
    if (std::abs(s.front() - p.sigma_low) > 1e-15 || std::abs(s.back() - p.sigma_high) > 1e-15)
        throw ConfigError("sigma_set must include both interval endpoints");
    return s;
}

inline std::uint64_t ipow(std::uint64_t b, int e) {
    std::uint64_t r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

} // namespace detail

/// Level-indexed tree layout shared by the solvers: node (depth d, rank r)
/// with children (d+1, r * branching + 2*s + sign), sign 0 = up, 1 = down.
struct TreeShape {
    int n_steps = 0;
    int m = 0; // sigma count
    double dt = 0.0;
    std::vector<double> sigmas;
    std::vector<double> steps;    // sigma * sqrt(dt)
    std::vector<double> qv_steps; // sigma^2 * dt
    std::vector<std::uint64_t> level_size;

    int branching() const { return 2 * m; }

    std::uint64_t total_nodes() const {
        std::uint64_t tot = 0;
        for (auto n : level_size) tot += n;
        return tot;
    }

    static TreeShape make(const TreeConfig& cfg, const GParams& params, double horizon) {
        if (cfg.n_steps < 1 || cfg.n_steps > TreeConfig::kMaxSteps)
            throw BudgetExceeded("n_steps must be in [1, " +
                                 std::to_string(TreeConfig::kMaxSteps) + "]");
        if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
        TreeShape shape;
        shape.n_steps = cfg.n_steps;
        shape.sigmas = detail::resolve_sigma_set(cfg, params);
        shape.m = static_cast<int>(shape.sigmas.size());
        shape.dt = horizon / static_cast<double>(cfg.n_steps);
        const double sdt = std::sqrt(shape.dt);
        for (double s : shape.sigmas) {
            shape.steps.push_back(s * sdt);
            shape.qv_steps.push_back(s * s * shape.dt);
        }
        std::uint64_t total = 0;
        for (int d = 0; d <= cfg.n_steps; ++d) {
            shape.level_size.push_back(detail::ipow(static_cast<std::uint64_t>(shape.branching()), d));
            total += shape.level_size.back();
            if (total > cfg.node_budget)
                throw BudgetExceeded("tree of " + std::to_string(total) +
                                     "+ nodes exceeds node budget " +
                                     std::to_string(cfg.node_budget));
        }
        return shape;
    }
};

/// Exact per-node solution on the scenario tree: value Y, gradient Z at the
/// optimizing volatility, and the alternative-sigma shortfalls dK (all
/// nonpositive; zero at the optimizer). Node state (B and the accumulated
/// quadratic variation) is decoded from the node rank on demand.
struct TreeSolution {
    TreeShape shape;
    double horizon = 0.0;
    std::vector<std::uint64_t> level_offset; // per depth, into the flat arrays
    std::vector<double> y;
    std::vector<double> z;
    std::vector<double> dk; // node * m + sigma index
    std::vector<std::uint8_t> sigma_star;

    std::uint64_t index(int depth, std::uint64_t rank) const {
        return level_offset[static_cast<std::size_t>(depth)] + rank;
    }

    double root() const { return y[0]; }

    /// Path state decoded from (depth, rank): B and <B> at the node.
    void decode_state(int depth, std::uint64_t rank, double* b_out, double* qv_out) const {
        double b = 0.0, qv = 0.0;
        const auto br = static_cast<std::uint64_t>(shape.branching());
        for (int k = depth - 1; k >= 0; --k) {
            const auto digit = static_cast<int>(rank % br);
            rank /= br;
            const int s = digit / 2;
            const double sign = (digit % 2 == 0) ? 1.0 : -1.0;
            b += sign * shape.steps[static_cast<std::size_t>(s)];
            qv += shape.qv_steps[static_cast<std::size_t>(s)];
        }
        if (b_out) *b_out = b;
        if (qv_out) *qv_out = qv;
    }
};

/// Path functional of the discrete (B, <B>) trajectory; spans have
/// n_steps + 1 entries, index k at time k * dt.
using PathFunctional =
    std::function<double(std::span<const double> b, std::span<const double> qv)>;

namespace detail {

struct PathBuffers {
    std::vector<double> b, qv;
    explicit PathBuffers(int n_steps)
        : b(static_cast<std::size_t>(n_steps) + 1, 0.0),
          qv(static_cast<std::size_t>(n_steps) + 1, 0.0) {}
};

inline double dfs_expect(const TreeShape& shape, const PathFunctional& functional,
                         PathBuffers& buf, int depth) {
    if (depth == shape.n_steps) {
        const double v = functional(std::span<const double>(buf.b),
                                    std::span<const double>(buf.qv));
        if (!std::isfinite(v)) throw NonFinite("path functional produced non-finite value");
        return v;
    }
    const std::size_t k = static_cast<std::size_t>(depth);
    double best = 0.0;
    for (int s = 0; s < shape.m; ++s) {
        buf.qv[k + 1] = buf.qv[k] + shape.qv_steps[static_cast<std::size_t>(s)];
        buf.b[k + 1] = buf.b[k] + shape.steps[static_cast<std::size_t>(s)];
        const double up = dfs_expect(shape, functional, buf, depth + 1);
        buf.b[k + 1] = buf.b[k] - shape.steps[static_cast<std::size_t>(s)];
        const double dn = dfs_expect(shape, functional, buf, depth + 1);
        const double mean = 0.5 * (up + dn);
        if (s == 0 || mean > best) best = mean;
    }
    return best;
}

} // namespace detail

/// Worst-case expectation of a path functional: exact backward induction of
/// the adversarial volatility game, evaluated depth-first without
/// materializing the tree.
inline double sublinear_expect(const PathFunctional& functional, const TreeConfig& cfg,
                               const GParams& params, double horizon) {
    const TreeShape shape = TreeShape::make(cfg, params, horizon);
    detail::PathBuffers buf(shape.n_steps);
    return detail::dfs_expect(shape, functional, buf, 0);
}

/// Convenience wrapper for terminal-value functionals xi = payoff(B_T).
inline double sublinear_expect_terminal(const std::function<double(double)>& payoff,
                                        const TreeConfig& cfg, const GParams& params,
                                        double horizon) {
    PathFunctional fn = [&](std::span<const double> b, std::span<const double>) {
        return payoff(b.back());
    };
    return sublinear_expect(fn, cfg, params, horizon);
}

/// Exact G-BSDE solve on the scenario tree; one-step algebra matches the
/// lattice (explicit coupling, midpoint time evaluation) with no
/// interpolation. Mode selects the raw generator or an envelope.
inline TreeSolution solve_tree(const ProblemSpec& problem, const TreeConfig& cfg,
                               Mode mode = Mode::raw(), const QSearchConfig& search = {}) {
    require_valid(problem);
    const TreeShape shape = TreeShape::make(cfg, problem.params, problem.horizon);

    TreeSolution sol;
    sol.shape = shape;
    sol.horizon = problem.horizon;
    sol.level_offset.resize(shape.level_size.size());
    std::uint64_t acc = 0;
    for (std::size_t d = 0; d < shape.level_size.size(); ++d) {
        sol.level_offset[d] = acc;
        acc += shape.level_size[d];
    }
    sol.y.assign(acc, 0.0);
    sol.z.assign(acc, 0.0);
    sol.dk.assign(acc * static_cast<std::uint64_t>(shape.m), 0.0);
    sol.sigma_star.assign(acc, 0);

    // Terminal slice: decode B per leaf incrementally via a running path.
    {
        const std::uint64_t leaves = shape.level_size.back();
        for (std::uint64_t r = 0; r < leaves; ++r) {
            double b;
            sol.decode_state(shape.n_steps, r, &b, nullptr);
            sol.y[sol.index(shape.n_steps, r)] = problem.terminal(b);
        }
    }

    const auto br = static_cast<std::uint64_t>(shape.branching());
    for (int d = shape.n_steps - 1; d >= 0; --d) {
        const double th = (static_cast<double>(d) + 0.5) * shape.dt;
        detail::SliceGen slice(problem, mode, search, th);
        const double u_t = problem.gen.coeff.u(th);
        if (!(shape.dt * u_t < 1.0))
            throw ConfigError("time step too large: dt*u(t) >= 1 at tree depth " +
                              std::to_string(d));
        const std::uint64_t width = shape.level_size[static_cast<std::size_t>(d)];
        std::vector<double> cand(static_cast<std::size_t>(shape.m));
        for (std::uint64_t r = 0; r < width; ++r) {
            const std::uint64_t id = sol.index(d, r);
            const std::uint64_t child0 = sol.index(d + 1, r * br);
            double best = 0.0, best_z = 0.0;
            int best_s = 0;
            for (int s = 0; s < shape.m; ++s) {
                const double up = sol.y[child0 + static_cast<std::uint64_t>(2 * s)];
                const double dn = sol.y[child0 + static_cast<std::uint64_t>(2 * s + 1)];
                const double m = 0.5 * (up + dn);
                const double zz = (up - dn) / (2.0 * shape.steps[static_cast<std::size_t>(s)]);
                const double v = m + shape.dt * slice.eval(Which::F, m, zz) +
                                 shape.qv_steps[static_cast<std::size_t>(s)] *
                                     slice.eval(Which::G, m, zz);
                if (!std::isfinite(v)) throw NonFinite("tree step produced non-finite value");
                cand[static_cast<std::size_t>(s)] = v;
                if (s == 0 || v > best) {
                    best = v;
                    best_z = zz;
                    best_s = s;
                }
            }
            sol.y[id] = best;
            sol.z[id] = best_z;
            sol.sigma_star[id] = static_cast<std::uint8_t>(best_s);
            for (int s = 0; s < shape.m; ++s)
                sol.dk[id * static_cast<std::uint64_t>(shape.m) + static_cast<std::uint64_t>(s)] =
                    cand[static_cast<std::size_t>(s)] - best;
        }
    }
    return sol;
}

/// Plain expectation of the discrete backward value under a fixed constant
/// volatility policy (no adversary); dominated by the adversarial root.
inline double fixed_policy_value(const ProblemSpec& problem, const TreeConfig& cfg,
                                 int sigma_index, Mode mode = Mode::raw(),
                                 const QSearchConfig& search = {}) {
    const TreeShape shape = TreeShape::make(cfg, problem.params, problem.horizon);
    if (sigma_index < 0 || sigma_index >= shape.m)
        throw ConfigError("sigma_index out of range");
    const double step = shape.steps[static_cast<std::size_t>(sigma_index)];
    const double qv = shape.qv_steps[static_cast<std::size_t>(sigma_index)];

    std::function<double(int, double)> value = [&](int depth, double b) -> double {
        if (depth == shape.n_steps) return problem.terminal(b);
        const double up = value(depth + 1, b + step);
        const double dn = value(depth + 1, b - step);
        const double m = 0.5 * (up + dn);
        const double zz = (up - dn) / (2.0 * step);
        const double th = (static_cast<double>(depth) + 0.5) * shape.dt;
        detail::SliceGen slice(problem, mode, search, th);
        return m + shape.dt * slice.eval(Which::F, m, zz) + qv * slice.eval(Which::G, m, zz);
    };
    return value(0, 0.0);
}

struct KMartingaleReport {
    double max_martingale_violation = 0.0; // |E_t[K_T] - K_t| over all nodes
    double max_positive_jump = 0.0;        // pathwise monotonicity breach
};

namespace detail {

/// Adversarial value of the remaining compensator sum below (depth, rank).
inline double dfs_future_k(const TreeSolution& sol, int depth, std::uint64_t rank) {
    const auto& shape = sol.shape;
    if (depth == shape.n_steps) return 0.0;
    const auto br = static_cast<std::uint64_t>(shape.branching());
    const std::uint64_t id = sol.index(depth, rank);
    double best = 0.0;
    for (int s = 0; s < shape.m; ++s) {
        const double dk =
            sol.dk[id * static_cast<std::uint64_t>(shape.m) + static_cast<std::uint64_t>(s)];
        const double up = dfs_future_k(sol, depth + 1, rank * br + static_cast<std::uint64_t>(2 * s));
        const double dn =
            dfs_future_k(sol, depth + 1, rank * br + static_cast<std::uint64_t>(2 * s + 1));
        const double v = dk + 0.5 * (up + dn);
        if (s == 0 || v > best) best = v;
    }
    return best;
}

} // namespace detail

/// Checks the compensator: (a) pathwise non-increasing (every dk <= 0) and
/// (b) at every node the adversarial value of the remaining compensator sum
/// is zero, i.e. conditioning loses nothing under the optimal scenario.
inline KMartingaleReport verify_k_martingale(const TreeSolution& sol) {
    KMartingaleReport rep;
    for (double d : sol.dk) rep.max_positive_jump = std::max(rep.max_positive_jump, d);
    for (int depth = 0; depth < sol.shape.n_steps; ++depth) {
        const std::uint64_t width = sol.shape.level_size[static_cast<std::size_t>(depth)];
        for (std::uint64_t r = 0; r < width; ++r)
            rep.max_martingale_violation = std::max(
                rep.max_martingale_violation, std::abs(detail::dfs_future_k(sol, depth, r)));
    }
    return rep;
}

/// Adversarial value of a path functional expressed through accumulators
/// over a solved tree: step(acc, node_id, sigma) advances the state when
/// the adversary branches with that sigma, leaf(acc, leaf_id) produces the
/// payoff. Used for the norm studies, which read the stored per-node
/// solution along every path.
template <class Acc, class Step, class Leaf>
double adversarial_path_value(const TreeSolution& sol, Acc acc0, Step&& step, Leaf&& leaf) {
    const auto& shape = sol.shape;
    const auto br = static_cast<std::uint64_t>(shape.branching());
    std::function<double(int, std::uint64_t, Acc)> walk = [&](int depth, std::uint64_t rank,
                                                              Acc acc) -> double {
        const std::uint64_t id = sol.index(depth, rank);
        if (depth == shape.n_steps) return leaf(acc, id);
        double best = 0.0;
        for (int s = 0; s < shape.m; ++s) {
            const Acc next = step(acc, id, s);
            const double up = walk(depth + 1, rank * br + static_cast<std::uint64_t>(2 * s), next);
            const double dn =
                walk(depth + 1, rank * br + static_cast<std::uint64_t>(2 * s + 1), next);
            const double v = 0.5 * (up + dn);
            if (s == 0 || v > best) best = v;
        }
        return best;
    };
    return walk(0, 0, acc0);
}

// ---------------------------------------------------------------------------
// Linear representation
// ---------------------------------------------------------------------------

/// Linear generator data: f = a(t) y + m(t), g = c(t) y + n(t), with no
/// gradient dependence.
struct LinearSpec {
    std::function<double(double)> a;
    std::function<double(double)> c;
    std::function<double(double)> m;
    std::function<double(double)> n;
};

struct LinearRepResult {
    double y_dp = 0.0;    // backward-induction route
    double y_gamma = 0.0; // weighted-functional route
};

/// Solves the linear problem twice: by backward induction, and as the
/// adversarial expectation of the multiplicatively weighted functional
/// Gamma_T xi + sum m Gamma dt + sum n Gamma d<B>, with Gamma compounded on
/// the same grid. Both routes share the discretization, so they must agree
/// to rounding. Throws NotLinear when the problem's generator does not
/// match the declared linear data on sampled points.
inline LinearRepResult linear_representation(const ProblemSpec& problem, const LinearSpec& lin,
                                             const TreeConfig& cfg,
                                             std::uint64_t seed = 0x11abcdULL) {
    // Sampled linearity test, including gradient independence.
    {
        SampleRng rng(seed);
        for (int i = 0; i < 96; ++i) {
            const double t = rng.uniform(1e-6 * problem.horizon, problem.horizon);
            const double yv = rng.uniform(-4.0, 4.0);
            const double zv = rng.uniform(-4.0, 4.0);
            const double f_lin = lin.a(t) * yv + lin.m(t);
            const double g_lin = lin.c(t) * yv + lin.n(t);
            const double scale = 1.0 + std::abs(f_lin) + std::abs(g_lin);
            if (std::abs(problem.gen.f(t, yv, zv) - f_lin) > 1e-9 * scale ||
                std::abs(problem.gen.g(t, yv, zv) - g_lin) > 1e-9 * scale)
                throw NotLinear("generator does not match the declared linear data");
        }
    }

    const TreeShape shape = TreeShape::make(cfg, problem.params, problem.horizon);
    for (int k = 0; k < shape.n_steps; ++k) {
        const double th = (static_cast<double>(k) + 0.5) * shape.dt;
        for (double qv : shape.qv_steps)
            if (!(1.0 + lin.a(th) * shape.dt + lin.c(th) * qv > 0.0))
                throw ConfigError("time step too large: weight factor not positive");
    }

    LinearRepResult res;
    res.y_dp = solve_tree(problem, cfg).root();

    const double dt = shape.dt;
    PathFunctional weighted = [&](std::span<const double> b, std::span<const double> qv) {
        double gamma = 1.0;
        double acc = 0.0;
        for (int k = 0; k < shape.n_steps; ++k) {
            const double th = (static_cast<double>(k) + 0.5) * dt;
            const double dqv = qv[static_cast<std::size_t>(k) + 1] - qv[static_cast<std::size_t>(k)];
            acc += gamma * (lin.m(th) * dt + lin.n(th) * dqv);
            gamma *= 1.0 + lin.a(th) * dt + lin.c(th) * dqv;
        }
        return gamma * problem.terminal(b.back()) + acc;
    };
    res.y_gamma = sublinear_expect(weighted, cfg, problem.params, problem.horizon);
    return res;
}

// ---------------------------------------------------------------------------
// Quadratic-variation domination
// ---------------------------------------------------------------------------

struct QvBoundReport {
    bool holds = true;
    double worst_margin = 0.0; // min over paths of sigma_high^2 * int eta dt - int eta d<B>
};

/// Pathwise check that the <B>-integral of a nonnegative step function is
/// dominated by sigma_high^2 times its time integral. Signs of the
/// increments do not matter, so only sigma sequences are enumerated.
inline QvBoundReport check_qv_bound(const std::function<double(double)>& eta,
                                    const TreeConfig& cfg, const GParams& params,
                                    double horizon) {
    const TreeShape shape = TreeShape::make(cfg, params, horizon);
    std::vector<double> eta_mid(static_cast<std::size_t>(shape.n_steps));
    for (int k = 0; k < shape.n_steps; ++k) {
        const double th = (static_cast<double>(k) + 0.5) * shape.dt;
        eta_mid[static_cast<std::size_t>(k)] = eta(th);
        if (!(eta_mid[static_cast<std::size_t>(k)] >= 0.0))
            throw InvalidSpec("eta must be nonnegative on the grid");
    }
    const double s2 = params.sigma_high * params.sigma_high;

    QvBoundReport rep;
    rep.worst_margin = 1e300;
    std::function<void(int, double, double)> walk = [&](int k, double lhs, double rhs) {
        if (k == shape.n_steps) {
            const double margin = rhs - lhs;
            rep.worst_margin = std::min(rep.worst_margin, margin);
            if (margin < 0.0) rep.holds = false;
            return;
        }
        const double e = eta_mid[static_cast<std::size_t>(k)];
        for (int s = 0; s < shape.m; ++s)
            walk(k + 1, lhs + e * shape.qv_steps[static_cast<std::size_t>(s)],
                 rhs + s2 * e * shape.dt);
    };
    walk(0, 0.0, 0.0);
    return rep;
}

} // namespace gbsde
