#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gbsde/common.hpp"
#include "gbsde/errors.hpp"
#include "gbsde/lattice.hpp"
#include "gbsde/model.hpp"

namespace gbsde {

/// Uniform space-time grid for the explicit scheme. Construction fails when
/// the parabolic stability ratio sigma_high^2 dt / dx^2 exceeds one half.
struct PdeGrid {
    int n_time = 0;
    int n_space = 0;
    double halfwidth = 0.0;
    double horizon = 0.0;
    double cfl_ratio = 0.0;

    double dt() const { return horizon / static_cast<double>(n_time); }
    double dx() const { return 2.0 * halfwidth / static_cast<double>(n_space - 1); }

    static PdeGrid make(int n_time, int n_space, double halfwidth, double horizon,
                        const GParams& params) {
        if (n_time < 1 || n_space < 3 || n_space % 2 == 0)
            throw ConfigError("PdeGrid: n_time >= 1 and odd n_space >= 3 required");
        if (!(halfwidth > 0.0) || !(horizon > 0.0))
            throw ConfigError("PdeGrid: halfwidth and horizon must be positive");
        PdeGrid g;
        g.n_time = n_time;
        g.n_space = n_space;
        g.halfwidth = halfwidth;
        g.horizon = horizon;
        const double dx = g.dx();
        g.cfl_ratio = params.sigma_high * params.sigma_high * g.dt() / (dx * dx);
        if (g.cfl_ratio > 0.5)
            throw CflViolation("explicit scheme unstable: sigma_high^2 dt/dx^2 = " +
                               std::to_string(g.cfl_ratio) + " > 0.5");
        return g;
    }

    /// Smallest stable time-step count at the target ratio, rounded up to a
    /// multiple (so slices can be compared against a coarser solver).
    static PdeGrid make_auto_time(int n_space, double halfwidth, double horizon,
                                  const GParams& params, double target_ratio = 0.45,
                                  int round_to_multiple_of = 1) {
        const double dx = 2.0 * halfwidth / static_cast<double>(n_space - 1);
        const double dt_max = target_ratio * dx * dx / (params.sigma_high * params.sigma_high);
        int n_time = static_cast<int>(std::ceil(horizon / dt_max));
        if (round_to_multiple_of > 1) {
            const int m = round_to_multiple_of;
            n_time = ((n_time + m - 1) / m) * m;
        }
        return make(n_time, n_space, halfwidth, horizon, params);
    }
};

struct PdeSurface {
    PdeGrid grid;
    std::vector<double> xs;
    std::vector<double> u; // (n_time + 1) x n_space, slice i at time i*dt

    double at(int i, int j) const {
        return u[static_cast<std::size_t>(i) * grid.n_space + j];
    }
    int center() const { return (grid.n_space - 1) / 2; }
    double root() const { return at(0, center()); }
};

/// Explicit monotone finite-difference solve of the fully nonlinear
/// parabolic terminal-value problem
///   du/dt + G(u_xx + 2 g(t,u,u_x)) + f(t,u,u_x) = 0,  u(T,.) = terminal,
/// with central differences and linear extrapolation ghosts. Accepts the
/// raw generator or an envelope mode; only pointwise evaluation is needed.
inline PdeSurface solve_pde(const ProblemSpec& problem, const PdeGrid& grid,
                            Mode mode = Mode::raw(), const QSearchConfig& search = {},
                            int threads = 0) {
    require_valid(problem);
    if (std::abs(grid.horizon - problem.horizon) > 1e-12 * std::max(1.0, problem.horizon))
        throw InconsistentConfigs("PDE grid horizon differs from the problem horizon");

    const int N = grid.n_time;
    const int J = grid.n_space;
    const double dt = grid.dt();
    const double dx = grid.dx();

    PdeSurface out;
    out.grid = grid;
    out.xs = linspace(-grid.halfwidth, grid.halfwidth, J);
    out.u.assign(static_cast<std::size_t>(N + 1) * J, 0.0);
    for (int j = 0; j < J; ++j)
        out.u[static_cast<std::size_t>(N) * J + j] = problem.terminal(out.xs[static_cast<std::size_t>(j)]);

    for (int i = N - 1; i >= 0; --i) {
        const double th = (static_cast<double>(i) + 0.5) * dt;
        const double* unext = out.u.data() + static_cast<std::size_t>(i + 1) * J;
        double* ucur = out.u.data() + static_cast<std::size_t>(i) * J;
        parallel_for(static_cast<std::size_t>(J), threads, [&](std::size_t jb, std::size_t je) {
            detail::SliceGen slice(problem, mode, search, th);
            for (std::size_t j = jb; j < je; ++j) {
                // linear-extrapolation ghosts: curvature vanishes at the ends
                const double um = j == 0 ? 2.0 * unext[0] - unext[1] : unext[j - 1];
                const double up = j + 1 == static_cast<std::size_t>(J)
                                      ? 2.0 * unext[j] - unext[j - 1]
                                      : unext[j + 1];
                const double d2 = (up - 2.0 * unext[j] + um) / (dx * dx);
                const double d1 = (up - um) / (2.0 * dx);
                const double a = d2 + 2.0 * slice.eval(Which::G, unext[j], d1);
                const double v =
                    unext[j] + dt * (big_g(a, problem.params) + slice.eval(Which::F, unext[j], d1));
                if (!std::isfinite(v)) throw NonFinite("pde step produced non-finite value");
                ucur[j] = v;
            }
        });
    }
    return out;
}

struct DiscrepancyReport {
    double lattice_root = 0.0;
    double pde_root = 0.0;
    double abs_diff = 0.0;
    double rel_diff = 0.0;
    /// Per shared time slice: (t, max |lattice - pde|) over the inner half
    /// of the domain.
    std::vector<std::pair<double, double>> slice_max_diff;
};

/// Cross-validation of the two solvers on one problem. The PDE time grid
/// must refine the lattice grid so slices align.
inline DiscrepancyReport cross_check(const ProblemSpec& problem, const SolverConfig& solver_cfg,
                                     const PdeGrid& grid, Mode mode = Mode::raw()) {
    if (std::abs(grid.horizon - problem.horizon) > 1e-12 * std::max(1.0, problem.horizon))
        throw InconsistentConfigs("PDE grid horizon differs from the problem horizon");
    if (grid.n_time % solver_cfg.n_time != 0)
        throw InconsistentConfigs("PDE time grid must be a refinement of the lattice grid");

    const LatticeSolution lat = solve(problem, mode, solver_cfg);
    const PdeSurface pde = solve_pde(problem, grid, mode, solver_cfg.search, solver_cfg.threads);

    DiscrepancyReport rep;
    rep.lattice_root = lat.root();
    rep.pde_root = pde.root();
    rep.abs_diff = std::abs(rep.lattice_root - rep.pde_root);
    rep.rel_diff = rep.abs_diff / std::max(std::abs(rep.lattice_root), 1e-12);

    const int refine = grid.n_time / solver_cfg.n_time;
    const double inner = 0.5 * std::min(grid.halfwidth, -lat.xs.front());
    for (int i = 0; i <= lat.n_time(); ++i) {
        const double* urow = pde.u.data() + static_cast<std::size_t>(i) * refine * grid.n_space;
        double worst = 0.0;
        for (int j = 0; j < lat.n_space(); ++j) {
            const double x = lat.xs[static_cast<std::size_t>(j)];
            if (std::abs(x) > inner) continue;
            const double uval = detail::interp_linear(pde.xs, urow, x);
            worst = std::max(worst, std::abs(lat.Y(i, j) - uval));
        }
        rep.slice_max_diff.emplace_back(lat.times[static_cast<std::size_t>(i)], worst);
    }
    return rep;
}

} // namespace gbsde
