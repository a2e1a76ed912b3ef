#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gbsde/common.hpp"
#include "gbsde/errors.hpp"
#include "gbsde/model.hpp"

namespace gbsde {

enum class Direction { Lower, Upper };
enum class Which { F, G };

/// Finite realization of the search over shift points q. The window is a
/// symmetric grid centered at z whose radius covers the set where the
/// optimum can live, |z - q| < 2L/(n - L), with radius_factor headroom.
/// The probe set always contains q = z and q = 0.
struct QSearchConfig {
    double radius_factor = 2.0;
    int grid_points = 2001; // odd, so the center q = z is a probe
    /// Bracketed shrink steps around the best probe. Keeps the one-sided
    /// bias far below the documented grid slack; value 0 disables.
    int refine_iters = 40;
};

/// One Lipschitz envelope of a base generator: direction Lower is the
/// inf-convolution with penalty n v(t) |z - q|, Upper the sup-convolution.
struct ApproxGenerator {
    Generator base;
    int n = 2;
    Direction direction = Direction::Lower;
    QSearchConfig search{};

    /// Envelope index bound uses max(L, 1); the user's L field is untouched
    /// and the normalized value is echoed in reports.
    double l_effective() const { return std::max(base.modulus.L, 1.0); }

    double window_radius() const {
        const double L = l_effective();
        return search.radius_factor * 2.0 * L / (static_cast<double>(n) - L);
    }

    double grid_step() const {
        return 2.0 * window_radius() / static_cast<double>(search.grid_points - 1);
    }

    void require_index() const {
        if (static_cast<double>(n) <= l_effective())
            throw ConfigError("approximation index n must exceed max(L,1)");
        if (search.grid_points < 3 || search.grid_points % 2 == 0)
            throw ConfigError("grid_points must be odd and >= 3");
    }
};

namespace detail {

/// Grid scan of q -> phi_at(q) + sgn * n_v |z - q| over
/// {z - r + k h} U {z, 0}, followed by a bracketed 3-section shrink around
/// the best probe. Keeps the best value seen, so the result is always on
/// the sound side of the true envelope. sgn = +1 searches the minimum of
/// the penalized value, sgn = -1 the maximum of the reward-penalized value
/// (expressed as a minimum of the negated objective by the caller).
template <class PhiAt>
double envelope_search(PhiAt&& phi_at, double z, double n_v, double radius, int grid_points,
                       int refine_iters, bool lower) {
    const double h = 2.0 * radius / static_cast<double>(grid_points - 1);
    const double q0 = z - radius;
    const double flip = lower ? 1.0 : -1.0;

    auto objective = [&](double q) {
        const double val = phi_at(q) + flip * n_v * std::abs(z - q);
        if (!std::isfinite(val)) throw NonFinite("envelope probe not finite");
        return flip * val; // minimize in both directions
    };

    double best = objective(z);
    double best_q = z;
    {
        const double at0 = objective(0.0);
        if (at0 < best) { best = at0; best_q = 0.0; }
    }
    for (int k = 0; k < grid_points; ++k) {
        const double q = q0 + h * static_cast<double>(k);
        const double val = objective(q);
        if (val < best) { best = val; best_q = q; }
    }

    double lo = best_q - h, hi = best_q + h;
    for (int it = 0; it < refine_iters; ++it) {
        const double w = (hi - lo) / 3.0;
        for (double q : {lo + w, hi - w}) {
            const double val = objective(q);
            if (val < best) { best = val; best_q = q; }
        }
        lo = std::max(lo, best_q - w);
        hi = std::min(hi, best_q + w);
    }
    return flip * best;
}

} // namespace detail

/// Raw envelope value before the phi0 shift, with an explicit window radius.
/// Used by property tests that need identical probe sets across indices.
inline double envelope_on_window(const ApproxGenerator& ag, Which which, double t, double y,
                                 double z, double radius, int refine_iters) {
    ag.require_index();
    const auto& fn = which == Which::F ? ag.base.f : ag.base.g;
    const double n_v = static_cast<double>(ag.n) * ag.base.coeff.v(t);
    auto phi_at = [&](double q) { return fn(t, y, q); };
    return detail::envelope_search(phi_at, z, n_v, radius, ag.search.grid_points, refine_iters,
                                   ag.direction == Direction::Lower);
}

/// Inf-convolution envelope: inf_q { phi(t,y,q) + n v(t)|z-q| } - phi0(t).
inline double lower_approx(const ApproxGenerator& ag, Which which, double t, double y, double z) {
    if (ag.direction != Direction::Lower)
        throw ConfigError("lower_approx requires an ApproxGenerator with direction Lower");
    const double phi0 = which == Which::F ? ag.base.f0(t) : ag.base.g0(t);
    return envelope_on_window(ag, which, t, y, z, ag.window_radius(), ag.search.refine_iters) -
           phi0;
}

/// Sup-convolution envelope: sup_q { phi(t,y,q) - n v(t)|z-q| } - phi0(t).
inline double upper_approx(const ApproxGenerator& ag, Which which, double t, double y, double z) {
    if (ag.direction != Direction::Upper)
        throw ConfigError("upper_approx requires an ApproxGenerator with direction Upper");
    const double phi0 = which == Which::F ? ag.base.f0(t) : ag.base.g0(t);
    return envelope_on_window(ag, which, t, y, z, ag.window_radius(), ag.search.refine_iters) -
           phi0;
}

inline double approx_eval(const ApproxGenerator& ag, Which which, double t, double y, double z) {
    return ag.direction == Direction::Lower ? lower_approx(ag, which, t, y, z)
                                            : upper_approx(ag, which, t, y, z);
}

/// One-sided slack of the finite search against the exact envelope:
/// eps_grid(t) = n v(t) h + v(t) phi(h) with h the grid spacing. The scan
/// overestimates an infimum (and underestimates a supremum) by at most the
/// one-cell variation, so every inequality test adds this slack on exactly
/// the side the bias can break.
inline double grid_slack(const ApproxGenerator& ag, double t) {
    const double h = ag.grid_step();
    const double vt = ag.base.coeff.v(t);
    return static_cast<double>(ag.n) * vt * h + vt * ag.base.modulus.phi(h);
}

/// Envelope distance bound: v(t) phi(2L/(n-L)).
inline double gap_bound(const ApproxGenerator& ag, double t) {
    ag.require_index();
    const double L = ag.l_effective();
    return ag.base.coeff.v(t) * ag.base.modulus.phi(2.0 * L / (static_cast<double>(ag.n) - L));
}

/// Same bound from raw ingredients.
inline double gap_bound(const Generator& base, int n, double t) {
    ApproxGenerator ag{base, n, Direction::Lower, {}};
    return gap_bound(ag, t);
}

// ---------------------------------------------------------------------------
// Envelope property suite
// ---------------------------------------------------------------------------

struct PropertyCheck {
    std::string id;
    bool pass = true;
    double worst_violation = 0.0; // max over samples of (lhs - rhs - slack)
    std::string worst_witness;
};

struct PropertyReport {
    bool precondition_ok = true;
    std::vector<std::string> precondition_failures;
    double l_effective = 1.0;
    std::vector<PropertyCheck> checks;

    bool pass() const {
        return precondition_ok && std::all_of(checks.begin(), checks.end(),
                                              [](const auto& c) { return c.pass; });
    }

    void throw_if_failed() const {
        if (precondition_ok && pass()) return;
        std::ostringstream os;
        os << "envelope property suite failed:";
        for (const auto& f : precondition_failures) os << " [precondition] " << f << ";";
        for (const auto& c : checks)
            if (!c.pass) os << " " << c.id << " by " << c.worst_violation << " at "
                           << c.worst_witness << ";";
        throw PropertyViolation(os.str());
    }
};

namespace detail {

struct PropertyTracker {
    PropertyCheck check;

    explicit PropertyTracker(std::string id) { check.id = std::move(id); }

    void observe(double violation, const std::string& witness) {
        if (violation > check.worst_violation) {
            check.worst_violation = violation;
            check.worst_witness = witness;
            check.pass = violation <= 0.0;
        }
    }
};

} // namespace detail

/// Verifies the six structural properties of the Lipschitz envelopes on
/// sampled points, for every index in the ladder. Aborts (with the report
/// flagging the reason) when the declared modulus or generator fails its
/// own precondition checks, since the properties are meaningless then.
inline PropertyReport verify_lemma_envelope(const Generator& base, const QSearchConfig& search,
                                            const std::vector<int>& ladder, int sample_budget,
                                            std::uint64_t seed, double horizon) {
    if (sample_budget < 1) throw ConfigError("verify_lemma_envelope: sample_budget must be >= 1");
    if (ladder.empty()) throw InvalidLadder("empty index ladder");

    PropertyReport rep;
    rep.l_effective = std::max(base.modulus.L, 1.0);

    // Precondition: the declared modulus really is one, and the generator
    // obeys the declared joint bound.
    {
        SampleRng rng(seed ^ 0xabcdef12345ull);
        if (std::abs(base.modulus.phi(0.0)) > 0.0)
            rep.precondition_failures.push_back("phi(0)=0 violated");
        bool mono_ok = true, sub_ok = true, growth_ok = true, joint_ok = true;
        for (int i = 0; i < std::max(64, sample_budget); ++i) {
            const double a = rng.uniform(0.0, 6.0), b = rng.uniform(0.0, 6.0);
            const double lo = std::min(a, b), hi = std::max(a, b);
            if (base.modulus.phi(hi) < base.modulus.phi(lo) - 1e-14) mono_ok = false;
            if (base.modulus.phi(a + b) > base.modulus.phi(a) + base.modulus.phi(b) + 1e-12)
                sub_ok = false;
            if (base.modulus.phi(a) > base.modulus.L * (1.0 + a) + 1e-12) growth_ok = false;
            const double t = rng.uniform(1e-6 * horizon, horizon);
            const double y1 = rng.uniform(-4.0, 4.0), y2 = rng.uniform(-4.0, 4.0);
            const double z1 = rng.uniform(-4.0, 4.0), z2 = rng.uniform(-4.0, 4.0);
            const double lhs = std::abs(base.f(t, y1, z1) - base.f(t, y2, z2)) +
                               std::abs(base.g(t, y1, z1) - base.g(t, y2, z2));
            const double rhs = base.coeff.u(t) * std::abs(y1 - y2) +
                               base.coeff.v(t) * base.modulus.phi(std::abs(z1 - z2));
            if (lhs > rhs + 1e-10 * (1.0 + rhs)) joint_ok = false;
        }
        if (!mono_ok) rep.precondition_failures.push_back("phi non-decreasing violated");
        if (!sub_ok) rep.precondition_failures.push_back("phi sub-additivity violated");
        if (!growth_ok) rep.precondition_failures.push_back("phi(x) <= L(1+x) violated");
        if (!joint_ok) rep.precondition_failures.push_back("generator modulus bound violated");
        rep.precondition_ok = rep.precondition_failures.empty();
        if (!rep.precondition_ok) return rep;
    }

    for (int n : ladder) {
        ApproxGenerator lo{base, n, Direction::Lower, search};
        ApproxGenerator up{base, n, Direction::Upper, search};
        lo.require_index();

        detail::PropertyTracker growth("linear-growth[n=" + std::to_string(n) + "]");
        detail::PropertyTracker mono("monotone-in-n[n=" + std::to_string(n) + "]");
        detail::PropertyTracker lip("lipschitz[n=" + std::to_string(n) + "]");
        detail::PropertyTracker zmod("z-modulus[n=" + std::to_string(n) + "]");
        detail::PropertyTracker gap("gap-bound[n=" + std::to_string(n) + "]");
        detail::PropertyTracker conv("convergence[n=" + std::to_string(n) + "]");

        ApproxGenerator lo_next = lo;
        lo_next.n = n + 1;
        ApproxGenerator up_next = up;
        up_next.n = n + 1;

        SampleRng rng(seed + static_cast<std::uint64_t>(n) * 0x9e37ull);
        for (int s = 0; s < sample_budget; ++s) {
            const double t = rng.uniform(1e-6 * horizon, horizon);
            const double y = rng.uniform(-4.0, 4.0);
            const double z = rng.uniform(-4.0, 4.0);
            const double y2 = rng.uniform(-4.0, 4.0);
            const double z2 = rng.uniform(-4.0, 4.0);
            const double ut = base.coeff.u(t);
            const double vt = base.coeff.v(t);
            const double eps = grid_slack(lo, t);
            std::ostringstream w;
            w.precision(6);
            w << "(t=" << t << ", y=" << y << ", z=" << z << ", y'=" << y2 << ", z'=" << z2
              << ")";
            const std::string witness = w.str();

            for (Which which : {Which::F, Which::G}) {
                const auto& fn = which == Which::F ? base.f : base.g;
                const double phi0 = which == Which::F ? base.f0(t) : base.g0(t);
                const double centered = fn(t, y, z) - phi0;
                const double flo = lower_approx(lo, which, t, y, z);
                const double fup = upper_approx(up, which, t, y, z);

                // (i) linear growth sandwich; every comparison is exact
                // because the probe set contains q = z and the scan is
                // one-sided sound against the true envelope.
                const double box =
                    rep.l_effective * (ut * std::abs(y) + vt * std::abs(z) + vt);
                growth.observe(-box - flo, witness);
                growth.observe(flo - centered, witness);
                growth.observe(centered - fup, witness);
                growth.observe(fup - box, witness);

                // (ii) monotone in n, on the identical probe set (the wider
                // window of the two indices, no refinement): exact.
                const double r = lo.window_radius();
                const double a_lo = envelope_on_window(lo, which, t, y, z, r, 0);
                const double a_lo_next = envelope_on_window(lo_next, which, t, y, z, r, 0);
                const double a_up = envelope_on_window(up, which, t, y, z, r, 0);
                const double a_up_next = envelope_on_window(up_next, which, t, y, z, r, 0);
                mono.observe(a_lo - a_lo_next, witness);
                mono.observe(a_up_next - a_up, witness);

                // (iii) Lipschitz bound with index-n gradient constant.
                const double flo2 = lower_approx(lo, which, t, y2, z2);
                const double fup2 = upper_approx(up, which, t, y2, z2);
                const double lip_rhs = ut * std::abs(y - y2) +
                                       static_cast<double>(n) * vt * std::abs(z - z2);
                lip.observe(std::abs(flo - flo2) - lip_rhs - eps, witness);
                lip.observe(std::abs(fup - fup2) - lip_rhs - eps, witness);

                // (iv) inherited z-modulus at fixed y.
                const double flo_z2 = lower_approx(lo, which, t, y, z2);
                const double fup_z2 = upper_approx(up, which, t, y, z2);
                const double mod_rhs = vt * base.modulus.phi(std::abs(z - z2));
                zmod.observe(std::abs(flo - flo_z2) - mod_rhs - eps, witness);
                zmod.observe(std::abs(fup - fup_z2) - mod_rhs - eps, witness);

                // (v) two-sided envelope distance, exact on both sides.
                const double bound = gap_bound(lo, t);
                gap.observe(flo - centered, witness);
                gap.observe(centered - flo - bound, witness);
                gap.observe(centered - fup, witness);
                gap.observe(fup - centered - bound, witness);

                // (vi) convergence along (y_n, z_n) -> (y, z): quantitative
                // envelope that shrinks to zero with n.
                const double yn = y + 1.0 / (static_cast<double>(n) * n);
                const double zn = z + 1.0 / (static_cast<double>(n) * n);
                const double conv_rhs = ut * std::abs(yn - y) +
                                        static_cast<double>(n) * vt * std::abs(zn - z) + bound +
                                        eps;
                conv.observe(std::abs(lower_approx(lo, which, t, yn, zn) - centered) - conv_rhs,
                             witness);
                conv.observe(std::abs(upper_approx(up, which, t, yn, zn) - centered) - conv_rhs,
                             witness);
            }
        }
        for (auto* tr : {&growth, &mono, &lip, &zmod, &gap, &conv})
            rep.checks.push_back(tr->check);
    }
    return rep;
}

} // namespace gbsde
