#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "transma/types.hpp"

namespace transma {

/// Invertibility gate for Gram-style matrices: reciprocal condition below
/// this is treated as rank deficient.
inline constexpr double kRcondFloor = 1e-12;

namespace detail {

/// Factor a symmetric PSD matrix, enforcing the rcond gate. The reciprocal
/// condition is the spectral ratio; Eigen's LDLT::rcond() norm estimate is
/// unreliable on exactly singular inputs.
inline Eigen::LDLT<Matrix> factor_gram(const Matrix& G, const std::string& what) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(G, Eigen::EigenvaluesOnly);
    const double lambda_max = eig.eigenvalues().maxCoeff();
    const double lambda_min = eig.eigenvalues().minCoeff();
    const double rcond = lambda_max > 0.0 ? std::max(lambda_min, 0.0) / lambda_max : 0.0;
    Eigen::LDLT<Matrix> ldlt(G);
    if (ldlt.info() != Eigen::Success || !(rcond >= kRcondFloor))
        throw RankDeficientError(what + ": reciprocal condition estimate " +
                                 std::to_string(rcond) + " below 1e-12");
    return ldlt;
}

inline const DomainSummary& summary_by_id(std::span<const DomainSummary> summaries, int id) {
    for (const auto& s : summaries)
        if (s.id == id) return s;
    throw UnknownIdError("no summary for domain id " + std::to_string(id));
}

}  // namespace detail

/// Mean squared residual n^{-1} ||y - X b||^2.
inline double residual_variance(const DomainData& data, const Vector& beta) {
    data.validate();
    if (beta.size() != data.p())
        throw DimensionMismatchError("beta has length " + std::to_string(beta.size()) +
                                     " but X has " + std::to_string(data.p()) + " columns");
    return (data.y - data.X * beta).squaredNorm() / static_cast<double>(data.n());
}

/// Per-domain OLS through the normal equations, returning the transferable
/// summary (n, Gram, coefficients, residual variance).
inline DomainSummary ols_fit(const DomainData& data) {
    data.validate();
    if (data.n() < data.p())
        throw RankDeficientError("domain " + std::to_string(data.id) + ": n=" +
                                 std::to_string(data.n()) + " < p=" + std::to_string(data.p()));
    DomainSummary s;
    s.id = data.id;
    s.n = data.n();
    s.gram = data.X.transpose() * data.X;
    s.gram = 0.5 * (s.gram + s.gram.transpose());  // exact symmetry
    auto ldlt = detail::factor_gram(s.gram, "domain " + std::to_string(data.id) + " Gram");
    s.beta = ldlt.solve(data.X.transpose() * data.y);
    s.sigma2 = residual_variance(data, s.beta);
    return s;
}

/// Regression-cube aggregation: pooled Gram and pooled OLS coefficients for
/// the given member ids, reconstructed from summaries alone. Equals OLS on
/// the row-stacked raw data of the members.
inline std::pair<Matrix, Vector> aggregate_cube(std::span<const DomainSummary> summaries,
                                                std::span<const int> members) {
    if (members.empty()) throw UnknownIdError("aggregate_cube: empty member set");
    const Index p = detail::summary_by_id(summaries, members[0]).p();
    Matrix gram = Matrix::Zero(p, p);
    Vector rhs = Vector::Zero(p);
    for (int id : members) {
        const DomainSummary& s = detail::summary_by_id(summaries, id);
        if (s.p() != p)
            throw DimensionMismatchError("summary " + std::to_string(id) +
                                         " has mismatched dimension");
        gram += s.gram;
        rhs += s.gram * s.beta;
    }
    auto ldlt = detail::factor_gram(gram, "aggregated Gram");
    return {std::move(gram), ldlt.solve(rhs)};
}

}  // namespace transma
