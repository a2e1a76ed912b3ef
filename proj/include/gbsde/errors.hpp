#pragma once

#include <stdexcept>
#include <string>

namespace gbsde {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A numeric evaluation produced NaN or infinity.
struct NonFinite : Error {
    using Error::Error;
};

/// A problem instance violates one or more of its declared invariants.
/// The message aggregates every violated invariant.
struct InvalidSpec : Error {
    using Error::Error;
};

/// A configuration value is malformed or inconsistent with the problem.
struct ConfigError : Error {
    using Error::Error;
};

/// An approximation-index ladder is empty or not strictly increasing.
struct InvalidLadder : Error {
    using Error::Error;
};

/// A sampled property check failed; carries the worst witness in the message.
struct PropertyViolation : Error {
    using Error::Error;
};

/// Tree traversal would exceed the configured node budget.
struct BudgetExceeded : Error {
    using Error::Error;
};

/// The implicit one-step fixed point did not converge.
struct FixedPointDiverged : Error {
    using Error::Error;
};

/// Boundary extrapolation influences the root value beyond the configured
/// fraction; the spatial domain should be enlarged.
struct DomainTooSmall : Error {
    using Error::Error;
};

/// Explicit finite-difference stability bound violated.
struct CflViolation : Error {
    using Error::Error;
};

/// Two configurations that must describe the same run disagree.
struct InconsistentConfigs : Error {
    using Error::Error;
};

/// A generator claimed to be linear failed the sampled linearity test.
struct NotLinear : Error {
    using Error::Error;
};

/// A catalog lookup used a name that does not exist.
struct UnknownProblem : Error {
    using Error::Error;
};

} // namespace gbsde
