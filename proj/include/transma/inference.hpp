#pragma once

#include <map>
#include <span>

#include "transma/averaging.hpp"
#include "transma/types.hpp"

namespace transma {

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// within tolerance are clamped to zero.
inline Matrix psd_sqrt(const Matrix& S) {
    if (S.rows() != S.cols()) throw DimensionMismatchError("psd_sqrt expects a square matrix");
    if (detail::symmetry_gap(S) > 1e-10)
        throw NotPsdError("psd_sqrt expects a symmetric matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (S + S.transpose()));
    const Vector& values = eig.eigenvalues();
    const double floor = -1e-10 * std::max(values.maxCoeff(), 0.0);
    if (values.minCoeff() < floor)
        throw NotPsdError("matrix has eigenvalue " + std::to_string(values.minCoeff()));
    const Vector roots = values.cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

/// Standardized statistic of the averaged estimator together with the pieces
/// needed to audit it.
struct NormalityReport {
    double statistic = 0.0;
    Vector psi;
    int m_s_hat = 0;
    double numerator = 0.0;
    double denominator = 0.0;
    bool plugin_sigma = false;  // true when variances are estimates, not truths
};

/// T = sqrt(N) psi' (G/N)^{1/2} (beta_hat(w) - beta0)
///     / sqrt( sum_k psi' G_k G^{-1} psi sigma2_k ),
/// with G the Gram of the selected pooled domain and the sum over its members.
inline NormalityReport normality_statistic(const FitResult& fit,
                                           std::span<const CandidateDomain> candidates,
                                           std::span<const DomainSummary> per_source,
                                           const Vector& psi,
                                           const std::map<int, double>& sigma2_by_source,
                                           const Vector& beta0_true,
                                           bool plugin_sigma = false) {
    detail::check_candidate_range(candidates, fit.selected_index);
    const auto& selected = candidates[static_cast<std::size_t>(fit.selected_index)];
    const Index p = selected.beta.size();
    if (psi.size() != p || beta0_true.size() != p || fit.beta.size() != p)
        throw DimensionMismatchError("psi/beta dimensions do not match the candidates");
    if (std::abs(psi.norm() - 1.0) > 1e-10)
        throw ConfigInvalidError("psi must have unit norm");

    const double total_n = static_cast<double>(selected.total_n);
    const Matrix sigma_half = psd_sqrt(selected.gram / total_n);
    const double numerator =
        std::sqrt(total_n) * psi.dot(sigma_half * (fit.beta - beta0_true));

    auto factor = detail::factor_gram(selected.gram, "selected candidate Gram");
    const Vector solved_psi = factor.solve(psi);
    double variance = 0.0;
    for (int id : selected.members) {
        const DomainSummary& s = detail::summary_by_id(per_source, id);
        variance += detail::sigma2_for(sigma2_by_source, id) * psi.dot(s.gram * solved_psi);
    }
    if (!(variance > 0.0) || std::sqrt(variance) <= 1e-14)
        throw SingularDenominatorError("normality denominator is numerically zero");

    NormalityReport report;
    report.psi = psi;
    report.m_s_hat = fit.selected_index;
    report.numerator = numerator;
    report.denominator = std::sqrt(variance);
    report.statistic = numerator / report.denominator;
    report.plugin_sigma = plugin_sigma;
    return report;
}

}  // namespace transma
