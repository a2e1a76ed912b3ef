#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gbsde/approx.hpp"
#include "gbsde/common.hpp"
#include "gbsde/errors.hpp"
#include "gbsde/model.hpp"

namespace gbsde {

struct FixedPointOpts {
    double tol = 1e-12;
    int max_iter = 50;
};

struct SolverConfig {
    int n_time = 200;
    int n_space = 801; // odd, so x = 0 is a node
    double domain_halfwidth_sigmas = 6.0;
    int sigma_levels = 2; // 2 = volatility interval endpoints
    enum class Interp { Linear } interpolation = Interp::Linear;
    enum class Boundary { LinearExtrapolation } boundary = Boundary::LinearExtrapolation;
    /// nullopt: explicit coupling, y-hat = m. Set for the implicit one-step
    /// fixed point (stiff u(t)).
    std::optional<FixedPointOpts> fixed_point{};
    /// Adversarial mass allowed to reach the extrapolation region before the
    /// run is rejected as under-resolved in space.
    double max_boundary_influence = 1e-3;
    int threads = 0;
    QSearchConfig search{};

    void validate() const {
        if (n_time < 1) throw ConfigError("n_time must be >= 1");
        if (n_space < 3 || n_space % 2 == 0) throw ConfigError("n_space must be odd and >= 3");
        if (sigma_levels < 2) throw ConfigError("sigma_levels must be >= 2");
        if (domain_halfwidth_sigmas <= 0) throw ConfigError("domain halfwidth must be positive");
    }
};

/// Which generator the backward step uses: the raw pair, or the index-n
/// lower/upper Lipschitz envelopes (plus the origin values, which cancel
/// against the envelope shift).
struct Mode {
    enum class Kind { Raw, Lower, Upper };
    Kind kind = Kind::Raw;
    int n = 0;

    static Mode raw() { return {}; }
    static Mode lower(int n) { return {Kind::Lower, n}; }
    static Mode upper(int n) { return {Kind::Upper, n}; }

    std::string label() const {
        switch (kind) {
            case Kind::Raw: return "raw";
            case Kind::Lower: return "lower(" + std::to_string(n) + ")";
            case Kind::Upper: return "upper(" + std::to_string(n) + ")";
        }
        return {};
    }
};

struct LatticeSolution {
    Mode mode;
    SolverConfig config;
    double horizon = 0.0;
    double dt = 0.0;
    std::vector<double> times; // n_time + 1
    std::vector<double> xs;    // n_space
    std::vector<double> y;          // (n_time + 1) x n_space
    std::vector<double> z;          // n_time x n_space
    std::vector<double> k_residual; // n_time x n_space, <= 0
    double boundary_influence = 0.0;

    int n_time() const { return static_cast<int>(times.size()) - 1; }
    int n_space() const { return static_cast<int>(xs.size()); }
    int center() const { return (n_space() - 1) / 2; }

    double Y(int i, int j) const { return y[static_cast<std::size_t>(i) * n_space() + j]; }
    double Z(int i, int j) const { return z[static_cast<std::size_t>(i) * n_space() + j]; }
    double K(int i, int j) const {
        return k_residual[static_cast<std::size_t>(i) * n_space() + j];
    }

    double root() const { return Y(0, center()); }

    double sup_abs_y() const {
        double m = 0.0;
        for (double v : y) m = std::max(m, std::abs(v));
        return m;
    }
};

namespace detail {

/// Linear interpolation on a uniform grid with linear extrapolation past
/// the ends. outside is set when q left the grid.
inline double interp_linear(const std::vector<double>& xs, const double* vals, double q,
                            bool* outside = nullptr) {
    const int n = static_cast<int>(xs.size());
    const double x0 = xs.front();
    const double h = xs[1] - x0;
    if (q <= x0) {
        if (outside && q < x0) *outside = true;
        return vals[0] + (q - x0) * (vals[1] - vals[0]) / h;
    }
    if (q >= xs.back()) {
        if (outside && q > xs.back()) *outside = true;
        return vals[n - 1] + (q - xs.back()) * (vals[n - 1] - vals[n - 2]) / h;
    }
    int j = static_cast<int>((q - x0) / h);
    j = std::min(j, n - 2);
    const double w = (q - xs[static_cast<std::size_t>(j)]) / h;
    return (1.0 - w) * vals[j] + w * vals[j + 1];
}

inline std::vector<double> sigma_ladder(const GParams& p, int levels) {
    std::vector<double> s(static_cast<std::size_t>(levels));
    for (int k = 0; k < levels; ++k)
        s[static_cast<std::size_t>(k)] =
            p.sigma_low + (p.sigma_high - p.sigma_low) * static_cast<double>(k) /
                              static_cast<double>(levels - 1);
    s.front() = p.sigma_low;
    s.back() = p.sigma_high;
    return s;
}

struct MemoKey {
    std::uint8_t which;
    std::uint64_t y_bits;
    std::uint64_t z_bits;
    bool operator==(const MemoKey& o) const {
        return which == o.which && y_bits == o.y_bits && z_bits == o.z_bits;
    }
};

struct MemoHash {
    std::size_t operator()(const MemoKey& k) const {
        std::uint64_t h = k.y_bits * 0x9e3779b97f4a7c15ull;
        h ^= k.z_bits + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        h ^= k.which + (h << 3);
        return static_cast<std::size_t>(h);
    }
};

inline std::uint64_t dbits(double v) {
    std::uint64_t b;
    static_assert(sizeof(b) == sizeof(v));
    std::memcpy(&b, &v, sizeof(b));
    return b;
}

/// Effective generator of one backward slice at fixed evaluation time. For
/// the envelope modes the per-slice cache is keyed on the exact (y, z)
/// bits; the slice index is the quantized time key, so a fresh cache per
/// slice (and per worker) implements the per-slice memo.
class SliceGen {
public:
    SliceGen(const ProblemSpec& problem, Mode mode, const QSearchConfig& search, double t)
        : gen_(problem.gen), mode_(mode), search_(search), t_(t) {
        if (mode.kind != Mode::Kind::Raw) {
            ApproxGenerator probe{problem.gen, mode.n,
                                  mode.kind == Mode::Kind::Lower ? Direction::Lower
                                                                 : Direction::Upper,
                                  search};
            probe.require_index();
            n_v_ = static_cast<double>(mode.n) * gen_.coeff.v(t);
            radius_ = probe.window_radius();
        }
    }

    double eval(Which which, double y, double z) {
        if (mode_.kind == Mode::Kind::Raw)
            return which == Which::F ? gen_.f(t_, y, z) : gen_.g(t_, y, z);
        const MemoKey key{static_cast<std::uint8_t>(which), dbits(y), dbits(z)};
        if (auto it = memo_.find(key); it != memo_.end()) return it->second;
        const auto& fn = which == Which::F ? gen_.f : gen_.g;
        auto phi_at = [&](double q) { return fn(t_, y, q); };
        const double val =
            envelope_search(phi_at, z, n_v_, radius_, search_.grid_points, search_.refine_iters,
                            mode_.kind == Mode::Kind::Lower);
        memo_.emplace(key, val);
        return val;
    }

private:
    const Generator& gen_;
    Mode mode_;
    QSearchConfig search_;
    double t_;
    double n_v_ = 0.0;
    double radius_ = 0.0;
    std::unordered_map<MemoKey, double, MemoHash> memo_;
};

} // namespace detail

/// Backward adversarial dynamic programming for the G-BSDE on a recombining
/// grid. At every node the one-step value is maximized over the volatility
/// ladder; the optimizer's gradient estimate becomes Z, and the worst
/// alternative-sigma shortfall becomes the (nonpositive) K residual.
inline LatticeSolution solve(const ProblemSpec& problem, Mode mode, const SolverConfig& cfg) {
    cfg.validate();
    require_valid(problem);

    const double T = problem.horizon;
    const int N = cfg.n_time;
    const int J = cfg.n_space;
    const double dt = T / static_cast<double>(N);
    const double sdt = std::sqrt(dt);
    const double W = cfg.domain_halfwidth_sigmas * problem.params.sigma_high * std::sqrt(T);

    LatticeSolution sol;
    sol.mode = mode;
    sol.config = cfg;
    sol.horizon = T;
    sol.dt = dt;
    sol.xs = linspace(-W, W, J);
    sol.times.resize(static_cast<std::size_t>(N) + 1);
    for (int i = 0; i <= N; ++i) sol.times[static_cast<std::size_t>(i)] = dt * i;
    sol.y.assign(static_cast<std::size_t>(N + 1) * J, 0.0);
    sol.z.assign(static_cast<std::size_t>(N) * J, 0.0);
    sol.k_residual.assign(static_cast<std::size_t>(N) * J, 0.0);

    for (int j = 0; j < J; ++j)
        sol.y[static_cast<std::size_t>(N) * J + j] = problem.terminal(sol.xs[static_cast<std::size_t>(j)]);

    const auto sigmas = detail::sigma_ladder(problem.params, cfg.sigma_levels);
    std::vector<double> influence_next(static_cast<std::size_t>(J), 0.0);
    std::vector<double> influence_cur(static_cast<std::size_t>(J), 0.0);

    for (int i = N - 1; i >= 0; --i) {
        const double th = (static_cast<double>(i) + 0.5) * dt; // singularity-safe midpoint
        const double u_t = problem.gen.coeff.u(th);
        if (!(dt * u_t < 1.0))
            throw ConfigError("time step too large: dt*u(t) >= 1 at slice " + std::to_string(i));

        const double* ynext = sol.y.data() + static_cast<std::size_t>(i + 1) * J;
        double* ycur = sol.y.data() + static_cast<std::size_t>(i) * J;
        double* zcur = sol.z.data() + static_cast<std::size_t>(i) * J;
        double* kcur = sol.k_residual.data() + static_cast<std::size_t>(i) * J;

        parallel_for(static_cast<std::size_t>(J), cfg.threads, [&](std::size_t jb, std::size_t je) {
            detail::SliceGen slice(problem, mode, cfg.search, th);
            for (std::size_t j = jb; j < je; ++j) {
                const double x = sol.xs[j];
                double best_v = 0.0, worst_v = 0.0, best_z = 0.0, best_infl = 0.0;
                for (std::size_t s = 0; s < sigmas.size(); ++s) {
                    const double sig = sigmas[s];
                    const double step = sig * sdt;
                    bool out_up = false, out_dn = false;
                    const double up = detail::interp_linear(sol.xs, ynext, x + step, &out_up);
                    const double dn = detail::interp_linear(sol.xs, ynext, x - step, &out_dn);
                    const double m = 0.5 * (up + dn);
                    const double zz = (up - dn) / (2.0 * step);
                    double yh = m;
                    double v;
                    if (cfg.fixed_point) {
                        const auto& fp = *cfg.fixed_point;
                        v = yh;
                        bool converged = false;
                        for (int it = 0; it < fp.max_iter; ++it) {
                            const double next = m + dt * slice.eval(Which::F, yh, zz) +
                                                dt * sig * sig * slice.eval(Which::G, yh, zz);
                            if (!std::isfinite(next))
                                throw NonFinite("fixed point produced non-finite value");
                            v = next;
                            if (std::abs(next - yh) <= fp.tol * (1.0 + std::abs(next))) {
                                converged = true;
                                break;
                            }
                            yh = next;
                        }
                        if (!converged)
                            throw FixedPointDiverged("one-step fixed point did not converge");
                    } else {
                        v = m + dt * slice.eval(Which::F, m, zz) +
                            dt * sig * sig * slice.eval(Which::G, m, zz);
                    }
                    const double infl_up =
                        out_up ? 1.0 : detail::interp_linear(sol.xs, influence_next.data(), x + step);
                    const double infl_dn =
                        out_dn ? 1.0 : detail::interp_linear(sol.xs, influence_next.data(), x - step);
                    const double infl = 0.5 * (infl_up + infl_dn);
                    if (s == 0) {
                        best_v = v;
                        best_z = zz;
                        worst_v = v;
                        best_infl = infl;
                    } else {
                        if (v > best_v) { // strict: ties keep the lowest sigma index
                            best_v = v;
                            best_z = zz;
                        }
                        worst_v = std::min(worst_v, v);
                        best_infl = std::max(best_infl, infl);
                    }
                }
                if (!std::isfinite(best_v)) throw NonFinite("lattice step produced non-finite value");
                ycur[j] = best_v;
                zcur[j] = best_z;
                kcur[j] = worst_v - best_v;
                influence_cur[j] = best_infl;
            }
        });
        influence_next.swap(influence_cur);
    }

    sol.boundary_influence = influence_next[static_cast<std::size_t>(sol.center())];
    if (sol.boundary_influence > cfg.max_boundary_influence)
        throw DomainTooSmall("boundary extrapolation influence " +
                             std::to_string(sol.boundary_influence) + " exceeds limit");
    return sol;
}

struct GExpectResult {
    double value = 0.0;
    std::vector<double> xs;
    std::vector<double> surface; // (n_time + 1) x n_space
    double boundary_influence = 0.0;
};

/// Plain sublinear expectation of payoff(B_T) by the same adversarial
/// recursion with zero generator.
inline GExpectResult g_expect(const std::function<double(double)>& payoff, const GParams& params,
                              const SolverConfig& cfg, double horizon) {
    cfg.validate();
    if (!params.valid()) throw InvalidSpec("invalid volatility interval");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");

    const int N = cfg.n_time;
    const int J = cfg.n_space;
    const double dt = horizon / static_cast<double>(N);
    const double sdt = std::sqrt(dt);
    const double W = cfg.domain_halfwidth_sigmas * params.sigma_high * std::sqrt(horizon);

    GExpectResult res;
    res.xs = linspace(-W, W, J);
    res.surface.assign(static_cast<std::size_t>(N + 1) * J, 0.0);
    for (int j = 0; j < J; ++j)
        res.surface[static_cast<std::size_t>(N) * J + j] = payoff(res.xs[static_cast<std::size_t>(j)]);

    const auto sigmas = detail::sigma_ladder(params, cfg.sigma_levels);
    std::vector<double> influence_next(static_cast<std::size_t>(J), 0.0);
    std::vector<double> influence_cur(static_cast<std::size_t>(J), 0.0);

    for (int i = N - 1; i >= 0; --i) {
        const double* vnext = res.surface.data() + static_cast<std::size_t>(i + 1) * J;
        double* vcur = res.surface.data() + static_cast<std::size_t>(i) * J;
        parallel_for(static_cast<std::size_t>(J), cfg.threads, [&](std::size_t jb, std::size_t je) {
            for (std::size_t j = jb; j < je; ++j) {
                const double x = res.xs[j];
                double best = 0.0, infl = 0.0;
                for (std::size_t s = 0; s < sigmas.size(); ++s) {
                    const double step = sigmas[s] * sdt;
                    bool out_up = false, out_dn = false;
                    const double up = detail::interp_linear(res.xs, vnext, x + step, &out_up);
                    const double dn = detail::interp_linear(res.xs, vnext, x - step, &out_dn);
                    const double m = 0.5 * (up + dn);
                    const double iu = out_up ? 1.0
                                             : detail::interp_linear(res.xs, influence_next.data(),
                                                                     x + step);
                    const double idn = out_dn ? 1.0
                                              : detail::interp_linear(res.xs, influence_next.data(),
                                                                      x - step);
                    if (s == 0) {
                        best = m;
                        infl = 0.5 * (iu + idn);
                    } else {
                        best = std::max(best, m);
                        infl = std::max(infl, 0.5 * (iu + idn));
                    }
                }
                if (!std::isfinite(best)) throw NonFinite("expectation step produced non-finite value");
                vcur[j] = best;
                influence_cur[j] = infl;
            }
        });
        influence_next.swap(influence_cur);
    }
    const int center = (J - 1) / 2;
    res.value = res.surface[static_cast<std::size_t>(center)];
    res.boundary_influence = influence_next[static_cast<std::size_t>(center)];
    if (res.boundary_influence > cfg.max_boundary_influence)
        throw DomainTooSmall("boundary extrapolation influence " +
                             std::to_string(res.boundary_influence) + " exceeds limit");
    return res;
}

// ---------------------------------------------------------------------------
// Ladder studies
// ---------------------------------------------------------------------------

inline void validate_ladder(const std::vector<int>& ladder, const Generator& gen) {
    if (ladder.empty()) throw InvalidLadder("empty index ladder");
    const double L = std::max(gen.modulus.L, 1.0);
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        if (static_cast<double>(ladder[i]) <= L)
            throw InvalidLadder("ladder index " + std::to_string(ladder[i]) +
                                " must exceed max(L,1) = " + std::to_string(L));
        if (i > 0 && ladder[i] <= ladder[i - 1])
            throw InvalidLadder("ladder must be strictly increasing");
    }
}

/// Lower and upper envelope solutions for every rung, on the identical grid.
struct LadderRuns {
    std::vector<int> ladder;
    std::vector<LatticeSolution> lower;
    std::vector<LatticeSolution> upper;
};

inline LadderRuns run_ladder(const ProblemSpec& problem, const std::vector<int>& ladder,
                             const SolverConfig& cfg) {
    validate_ladder(ladder, problem.gen);
    LadderRuns runs;
    runs.ladder = ladder;
    for (int n : ladder) {
        runs.lower.push_back(solve(problem, Mode::lower(n), cfg));
        runs.upper.push_back(solve(problem, Mode::upper(n), cfg));
    }
    return runs;
}

/// Slack allowance for orderings between envelope solutions at indices
/// n_a and n_b: the per-slice grid slack accumulated through the scheme,
/// amplified by the state-coupling growth factor.
inline double sandwich_slack(const ProblemSpec& problem, const SolverConfig& cfg, int n_a,
                             int n_b) {
    const double T = problem.horizon;
    const double dt = T / static_cast<double>(cfg.n_time);
    const double s2 = 1.0 + problem.params.sigma_high * problem.params.sigma_high;
    ApproxGenerator a{problem.gen, n_a, Direction::Lower, cfg.search};
    ApproxGenerator b{problem.gen, n_b, Direction::Lower, cfg.search};
    double integral = 0.0, u_integral = 0.0;
    for (int i = 0; i < cfg.n_time; ++i) {
        const double th = (static_cast<double>(i) + 0.5) * dt;
        integral += dt * s2 * (grid_slack(a, th) + grid_slack(b, th));
        u_integral += dt * problem.gen.coeff.u(th);
    }
    return 1e-10 + std::exp(s2 * u_integral) * integral;
}

struct SandwichEntry {
    int n = 0;
    double root_lower = 0.0, root_upper = 0.0;
    double sup_lower = 0.0, sup_upper = 0.0;
    double cross_violation = 0.0; // max(lower - upper) at this rung
    double cross_slack = 0.0;
};

struct SandwichPair {
    int n_small = 0, n_large = 0;
    double lower_chain_violation = 0.0; // max(lower[n] - lower[n'])
    double upper_chain_violation = 0.0; // max(upper[n'] - upper[n])
    double slack = 0.0;
};

struct SandwichReport {
    std::vector<SandwichEntry> entries;
    std::vector<SandwichPair> pairs;
    double sup_bound = 0.0;              // first-rung envelope of |Y|
    double uniform_bound_violation = 0.0; // max over rungs of sup|Y| - sup_bound
    double worst_violation_over_slack = -1e300;

    bool ok() const { return worst_violation_over_slack <= 0.0; }
};

namespace detail {

inline double max_nodewise_excess(const LatticeSolution& a, const LatticeSolution& b) {
    double worst = -1e300;
    for (std::size_t k = 0; k < a.y.size(); ++k) worst = std::max(worst, a.y[k] - b.y[k]);
    return worst;
}

} // namespace detail

inline SandwichReport sandwich_report_from_runs(const ProblemSpec& problem,
                                                const SolverConfig& cfg, const LadderRuns& runs) {
    SandwichReport rep;
    const auto& lad = runs.ladder;
    for (std::size_t i = 0; i < lad.size(); ++i) {
        SandwichEntry e;
        e.n = lad[i];
        e.root_lower = runs.lower[i].root();
        e.root_upper = runs.upper[i].root();
        e.sup_lower = runs.lower[i].sup_abs_y();
        e.sup_upper = runs.upper[i].sup_abs_y();
        e.cross_violation = detail::max_nodewise_excess(runs.lower[i], runs.upper[i]);
        e.cross_slack = sandwich_slack(problem, cfg, lad[i], lad[i]);
        rep.worst_violation_over_slack =
            std::max(rep.worst_violation_over_slack, e.cross_violation - e.cross_slack);
        rep.entries.push_back(e);
    }
    for (std::size_t i = 0; i < lad.size(); ++i) {
        for (std::size_t j = i + 1; j < lad.size(); ++j) {
            SandwichPair p;
            p.n_small = lad[i];
            p.n_large = lad[j];
            p.lower_chain_violation = detail::max_nodewise_excess(runs.lower[i], runs.lower[j]);
            p.upper_chain_violation = detail::max_nodewise_excess(runs.upper[j], runs.upper[i]);
            p.slack = sandwich_slack(problem, cfg, lad[i], lad[j]);
            rep.worst_violation_over_slack = std::max(
                rep.worst_violation_over_slack,
                std::max(p.lower_chain_violation, p.upper_chain_violation) - p.slack);
            rep.pairs.push_back(p);
        }
    }
    // Monotone families are pinched by the first rung, so its envelope bounds
    // every sup norm up to the ordering slack.
    rep.sup_bound = std::max(rep.entries.front().sup_lower, rep.entries.front().sup_upper);
    for (const auto& e : rep.entries)
        rep.uniform_bound_violation =
            std::max(rep.uniform_bound_violation,
                     std::max(e.sup_lower, e.sup_upper) - rep.sup_bound -
                         sandwich_slack(problem, cfg, rep.entries.front().n, e.n));
    return rep;
}

/// Solves the lower and upper envelope equations for every rung and checks
/// the nodewise orderings between all rungs.
inline SandwichReport sandwich_run(const ProblemSpec& problem, const std::vector<int>& ladder,
                                   const SolverConfig& cfg) {
    return sandwich_report_from_runs(problem, cfg, run_ladder(problem, ladder, cfg));
}

struct GapEntry {
    int n = 0;
    double gap = 0.0;   // max over nodes of (upper - lower)
    double bound = 0.0; // phi(2L/(n-L))
    double ratio = 0.0;
};

struct GapReport {
    std::vector<GapEntry> entries;
    double growth_factor_cap = 1.2;
    double max_growth_factor = 0.0; // max of ratio_{k+1} / ratio_k
    bool growth_flagged = false;
    bool gap_decreased = false; // last gap < first gap
};

inline GapReport gap_report_from_runs(const ProblemSpec& problem, const LadderRuns& runs,
                                      double growth_factor_cap = 1.2) {
    GapReport rep;
    rep.growth_factor_cap = growth_factor_cap;
    const double L = std::max(problem.gen.modulus.L, 1.0);
    for (std::size_t i = 0; i < runs.ladder.size(); ++i) {
        GapEntry e;
        e.n = runs.ladder[i];
        e.gap = detail::max_nodewise_excess(runs.upper[i], runs.lower[i]);
        e.bound = problem.gen.modulus.phi(2.0 * L / (static_cast<double>(e.n) - L));
        e.ratio = e.gap / e.bound;
        rep.entries.push_back(e);
    }
    for (std::size_t i = 1; i < rep.entries.size(); ++i) {
        const double g = rep.entries[i].ratio / rep.entries[i - 1].ratio;
        rep.max_growth_factor = std::max(rep.max_growth_factor, g);
    }
    rep.growth_flagged = rep.max_growth_factor > rep.growth_factor_cap;
    rep.gap_decreased = rep.entries.back().gap < rep.entries.front().gap;
    return rep;
}

/// Gap study between the upper and lower envelope solutions along the
/// ladder, normalized by the envelope distance bound.
inline GapReport gap_study(const ProblemSpec& problem, const std::vector<int>& ladder,
                           const SolverConfig& cfg, double growth_factor_cap = 1.2) {
    return gap_report_from_runs(problem, run_ladder(problem, ladder, cfg), growth_factor_cap);
}

} // namespace gbsde
