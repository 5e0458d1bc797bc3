#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace transma {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A Gram (or other) matrix failed the invertibility gate (rcond < 1e-12).
struct RankDeficientError : Error {
    using Error::Error;
};

/// Shapes of matrices/vectors do not line up.
struct DimensionMismatchError : Error {
    using Error::Error;
};

/// A referenced domain id is not present in the supplied collection.
struct UnknownIdError : Error {
    using Error::Error;
};

/// No domain with id 0 was supplied.
struct MissingTargetError : Error {
    using Error::Error;
};

/// Raw rows of a required member domain are unavailable (summaries-only mode).
struct PrivacyViolationError : Error {
    using Error::Error;
};

/// Matrix is not positive semidefinite within tolerance.
struct NotPsdError : Error {
    using Error::Error;
};

/// Variance term of the normality statistic is numerically zero.
struct SingularDenominatorError : Error {
    using Error::Error;
};

/// Experiment or run configuration violates its invariants.
struct ConfigInvalidError : Error {
    using Error::Error;
};

/// CSV cell could not be parsed; carries 1-based line and column.
struct ParseError : Error {
    ParseError(const std::string& msg, std::size_t line, std::size_t column)
        : Error(msg + " (line " + std::to_string(line) + ", column " +
                std::to_string(column) + ")"),
          line(line),
          column(column) {}
    std::size_t line;
    std::size_t column;
};

/// CSV header does not match the required `y,x1,...,xp` schema.
struct HeaderMismatchError : Error {
    using Error::Error;
};

/// Simplex QP solver hit its iteration cap; carries the best iterate found.
struct NotConvergedError : Error {
    NotConvergedError(const std::string& msg, std::vector<double> best, double gap)
        : Error(msg), best_iterate(std::move(best)), gap(gap) {}
    std::vector<double> best_iterate;
    double gap;
};

}  // namespace transma
