#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gbsde/errors.hpp"
#include "gbsde/model.hpp"
#include "gbsde/tree.hpp"

namespace gbsde {

/// One linear parameterization for the representation check.
struct LinearCase {
    std::string name;
    LinearSpec lin;
    std::function<double(double)> terminal;
};

/// Named problem plus optional companions: an ordered partner for the
/// comparison runs and linear parameterizations for the representation
/// check.
struct CatalogEntry {
    std::string name;
    std::string stresses; // which structural assumption this entry exercises
    ProblemSpec spec;
    std::optional<ProblemSpec> companion; // ordered above spec when present
    std::vector<LinearCase> linear_cases;
};

namespace detail {

inline ModulusOfContinuity identity_modulus() {
    return {[](double x) { return x; }, 1.0};
}

inline ModulusOfContinuity sqrt_modulus() {
    return {[](double x) { return std::sqrt(x); }, 1.0};
}

inline std::function<double(double)> const_fn(double c) {
    return [c](double) { return c; };
}

} // namespace detail

/// Built-in problems. All use the volatility interval [0.5, 1] and horizon 1
/// so that tree coordinates embed exactly into commensurate lattice grids.
inline const std::vector<CatalogEntry>& builtin_catalog() {
    static const std::vector<CatalogEntry> entries = [] {
        std::vector<CatalogEntry> list;
        const GParams params{0.5, 1.0};

        // Degenerate uniformly-continuous case: identity modulus, so the
        // envelopes collapse onto the generator for every admissible index.
        {
            CatalogEntry e;
            e.name = "lipschitz";
            e.stresses = "identity modulus: envelopes collapse onto the generator";
            auto f = [](double, double y, double z) { return 0.25 * std::abs(z) - 0.125 * y; };
            e.spec.params = params;
            e.spec.gen.f = f;
            e.spec.gen.g = f;
            e.spec.gen.coeff = {detail::const_fn(0.25), detail::const_fn(0.5), false};
            e.spec.gen.modulus = detail::identity_modulus();
            e.spec.gen.f0 = detail::const_fn(0.0);
            e.spec.gen.g0 = detail::const_fn(0.0);
            e.spec.terminal = [](double x) { return x * x; };
            e.spec.terminal_growth_degree = 2;
            e.spec.horizon = 1.0;
            list.push_back(std::move(e));
        }

        // Genuinely non-Lipschitz gradient dependence with sqrt modulus.
        {
            CatalogEntry e;
            e.name = "sqrt_z";
            e.stresses = "sqrt modulus: non-Lipschitz gradient dependence";
            e.spec.params = params;
            e.spec.gen.f = [](double, double y, double z) {
                return 0.5 * std::sqrt(std::abs(z)) - 0.125 * y;
            };
            e.spec.gen.g = [](double, double y, double z) {
                return 0.5 * std::sqrt(std::abs(z)) + 0.125 * y;
            };
            e.spec.gen.coeff = {detail::const_fn(0.25), detail::const_fn(1.0), false};
            e.spec.gen.modulus = detail::sqrt_modulus();
            e.spec.gen.f0 = detail::const_fn(0.0);
            e.spec.gen.g0 = detail::const_fn(0.0);
            e.spec.terminal = [](double x) { return std::abs(x); };
            e.spec.terminal_growth_degree = 1;
            e.spec.horizon = 1.0;
            list.push_back(std::move(e));
        }

        // Integrable blow-up of the time-varying weights at t = 0:
        // u(t) = t^{-1/2}/2, v(t) = t^{-1/4}, so int (u + v^2) dt = 3 at T=1.
        {
            CatalogEntry e;
            e.name = "singular_uv";
            e.stresses = "integrable singular weights u, v at t = 0";
            e.spec.params = params;
            auto u = [](double t) { return 0.5 / std::sqrt(t); };
            auto v = [](double t) { return std::pow(t, -0.25); };
            e.spec.gen.f = [u, v](double t, double y, double z) {
                return 0.5 * u(t) * (1.0 - y) + 0.5 * v(t) * std::sqrt(std::abs(z));
            };
            e.spec.gen.g = [u, v](double t, double y, double z) {
                return 0.5 * u(t) * y + 0.5 * v(t) * std::sqrt(std::abs(z));
            };
            e.spec.gen.coeff = {u, v, true};
            e.spec.gen.modulus = detail::sqrt_modulus();
            e.spec.gen.f0 = [u](double t) { return 0.5 * u(t); };
            e.spec.gen.g0 = detail::const_fn(0.0);
            e.spec.terminal = [](double x) { return x * x; };
            e.spec.terminal_growth_degree = 2;
            e.spec.horizon = 1.0;
            list.push_back(std::move(e));
        }

        // Ordered data pair: companion dominates spec in terminal and both
        // generator components.
        {
            CatalogEntry e;
            e.name = "comparison_pair";
            e.stresses = "ordered terminal and generators";
            auto fb = [](double, double y, double z) {
                return 0.5 * std::sqrt(std::abs(z)) - 0.125 * y;
            };
            auto gb = [](double, double y, double z) {
                return 0.5 * std::sqrt(std::abs(z)) + 0.125 * y;
            };
            auto make_side = [&](double off) {
                ProblemSpec p;
                p.params = params;
                p.gen.f = [fb, off](double t, double y, double z) { return fb(t, y, z) + off; };
                p.gen.g = [gb, off](double t, double y, double z) { return gb(t, y, z) + off; };
                p.gen.coeff = {detail::const_fn(0.25), detail::const_fn(1.0), false};
                p.gen.modulus = detail::sqrt_modulus();
                p.gen.f0 = detail::const_fn(off);
                p.gen.g0 = detail::const_fn(off);
                p.terminal = [off](double x) { return std::abs(x) + off * 5.0 / 3.0; };
                p.terminal_growth_degree = 1;
                p.horizon = 1.0;
                return p;
            };
            e.spec = make_side(-0.15);
            e.companion = make_side(0.15);
            list.push_back(std::move(e));
        }

        // Strictly linear generator; three parameterizations for the
        // weighted-representation check.
        {
            CatalogEntry e;
            e.name = "linear_rep";
            e.stresses = "strictly linear generator, gradient-free";
            e.spec.params = params;
            e.spec.gen.f = [](double, double y, double) { return y; };
            e.spec.gen.g = [](double, double, double) { return 0.0; };
            e.spec.gen.coeff = {detail::const_fn(1.0), detail::const_fn(0.0), false};
            e.spec.gen.modulus = detail::identity_modulus();
            e.spec.gen.f0 = detail::const_fn(0.0);
            e.spec.gen.g0 = detail::const_fn(0.0);
            e.spec.terminal = [](double x) { return x * x; };
            e.spec.terminal_growth_degree = 2;
            e.spec.horizon = 1.0;

            auto zero = detail::const_fn(0.0);
            auto one = detail::const_fn(1.0);
            auto square = [](double x) { return x * x; };
            auto unit = [](double) { return 1.0; };
            e.linear_cases.push_back({"state-drift", {one, zero, zero, zero}, square});
            e.linear_cases.push_back({"variance-drift", {zero, one, zero, zero}, unit});
            e.linear_cases.push_back({"plain-expectation", {zero, zero, zero, zero}, square});
            list.push_back(std::move(e));
        }
        return list;
    }();
    return entries;
}

inline const CatalogEntry& find_problem(const std::string& name) {
    for (const auto& e : builtin_catalog())
        if (e.name == name) return e;
    throw UnknownProblem("unknown problem '" + name + "'");
}

/// Problem built from one linear parameterization (generator f = a y + m,
/// g = c y + n), sharing the catalog volatility interval.
inline ProblemSpec make_linear_problem(const LinearCase& lc, const GParams& params,
                                       double horizon) {
    ProblemSpec p;
    p.params = params;
    p.gen.f = [lin = lc.lin](double t, double y, double) { return lin.a(t) * y + lin.m(t); };
    p.gen.g = [lin = lc.lin](double t, double y, double) { return lin.c(t) * y + lin.n(t); };
    p.gen.coeff = {[lin = lc.lin](double t) { return std::abs(lin.a(t)) + std::abs(lin.c(t)); },
                   detail::const_fn(0.0), false};
    p.gen.modulus = detail::identity_modulus();
    p.gen.f0 = lc.lin.m;
    p.gen.g0 = lc.lin.n;
    p.terminal = lc.terminal;
    p.terminal_growth_degree = 2;
    p.horizon = horizon;
    return p;
}

} // namespace gbsde
