#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <vector>

#include "transma/candidates.hpp"
#include "transma/estimation.hpp"
#include "transma/simplex_qp.hpp"
#include "transma/types.hpp"

namespace transma {

/// Tuning parameters of the individual-similarity criterion.
struct CriterionConfig {
    double v = 0.5;
    double phi = 2.0;

    void validate() const {
        if (!(v >= 0.0 && v <= 1.0))
            throw ConfigInvalidError("v must lie in [0,1], got " + std::to_string(v));
        if (!(phi > 0.0))
            throw ConfigInvalidError("phi must be positive, got " + std::to_string(phi));
    }
};

/// Common BIC-flavored default for the sufficiency penalty.
inline double default_phi(Index n0) { return std::log(static_cast<double>(n0)); }

/// Output of a weight-selection fit. `candidate_indices` names the candidate
/// set the weights refer to (all candidates for Trans-MAI, the donor set for
/// Trans-MACs, donors plus the sufficient domain for Trans-MAC).
struct FitResult {
    std::vector<int> candidate_indices;
    SimplexWeights weights;
    Vector beta;
    int selected_index = 0;  // candidate with the largest weight, lowest on ties
    double objective = 0.0;
};

namespace detail {

inline double trace_solve(const Eigen::LDLT<Matrix>& factor, const Matrix& rhs) {
    return factor.solve(rhs).trace();
}

inline Vector weighted_beta(std::span<const CandidateDomain> candidates,
                            std::span<const int> indices, const Vector& w) {
    Vector beta = Vector::Zero(candidates[static_cast<std::size_t>(indices[0])].beta.size());
    for (Index i = 0; i < w.size(); ++i)
        beta += w[i] * candidates[static_cast<std::size_t>(indices[i])].beta;
    return beta;
}

inline int argmax_lowest(const Vector& w) {
    int best = 0;
    for (Index i = 1; i < w.size(); ++i)
        if (w[i] > w[best]) best = static_cast<int>(i);
    return best;
}

inline const DomainData& raw_by_id(std::span<const DomainData> data, int id) {
    for (const auto& d : data)
        if (d.id == id) return d;
    throw PrivacyViolationError("raw rows of domain " + std::to_string(id) +
                                " are required but unavailable");
}

inline double sigma2_for(const std::map<int, double>& sigma2_by_source, int id) {
    const auto it = sigma2_by_source.find(id);
    if (it == sigma2_by_source.end())
        throw UnknownIdError("no residual variance supplied for domain " + std::to_string(id));
    return it->second;
}

/// Shared assembly of the combinatorial criteria: squared prediction loss on
/// the pooled sufficient domain plus the doubled trace penalty.
inline SimplexQP assemble_pooled_qp(std::span<const DomainData> all_data,
                                    std::span<const CandidateDomain> candidates,
                                    int m_s, std::span<const int> indices,
                                    const std::map<int, double>& sigma2_by_source) {
    const auto& pooled = candidates[static_cast<std::size_t>(m_s)];
    const Index p = pooled.beta.size();

    Index rows = 0;
    for (int id : pooled.members) rows += raw_by_id(all_data, id).n();
    Matrix x_pooled(rows, p);
    Vector y_pooled(rows);
    Matrix penalty_weight = Matrix::Zero(p, p);  // sum_j sigma2_j G^(j)
    Index offset = 0;
    for (int id : pooled.members) {
        const DomainData& d = raw_by_id(all_data, id);
        d.validate();
        if (d.p() != p)
            throw DimensionMismatchError("domain " + std::to_string(id) +
                                         " has mismatched covariate dimension");
        x_pooled.middleRows(offset, d.n()) = d.X;
        y_pooled.segment(offset, d.n()) = d.y;
        penalty_weight += sigma2_for(sigma2_by_source, id) * (d.X.transpose() * d.X);
        offset += d.n();
    }

    const Index k = static_cast<Index>(indices.size());
    Matrix predictions(rows, k);
    Vector penalty(k);
    for (Index i = 0; i < k; ++i) {
        const auto& cand = candidates[static_cast<std::size_t>(indices[i])];
        predictions.col(i) = x_pooled * cand.beta;
        auto factor = factor_gram(cand.gram, "candidate " + std::to_string(cand.index) + " Gram");
        penalty[i] = trace_solve(factor, penalty_weight);
    }

    SimplexQP qp;
    qp.A = predictions.transpose() * predictions;
    qp.A = 0.5 * (qp.A + qp.A.transpose());
    qp.b = -2.0 * (predictions.transpose() * y_pooled) + 2.0 * penalty;
    qp.c = y_pooled.squaredNorm();
    return qp;
}

inline std::vector<int> donor_suffix(std::span<const CandidateDomain> candidates, int m_s) {
    std::vector<int> donors;
    for (int m = m_s + 1; m < static_cast<int>(candidates.size()); ++m) donors.push_back(m);
    return donors;
}

inline void check_candidate_range(std::span<const CandidateDomain> candidates, int m) {
    if (m < 0 || m >= static_cast<int>(candidates.size()))
        throw ConfigInvalidError("candidate index " + std::to_string(m) + " out of range");
}

}  // namespace detail

/// Individual-similarity criterion as a simplex QP. With H the matrix of
/// candidate predictions on the target design, this encodes
///   (1-v)||y - Hw||^2 + v sum_m w_m ||y - H_m||^2
///   + phi sigma2 sum_m w_m tr(G_m^{-1} G_0)
/// in canonical form A = (1-v)H'H, b_m = -2 H_m'y + v||H_m||^2 + phi sigma2 t_m,
/// c = ||y||^2; the two forms agree on the simplex.
inline SimplexQP trans_mai_qp(const DomainData& target,
                              std::span<const CandidateDomain> candidates,
                              double sigma2_target, const CriterionConfig& cfg) {
    cfg.validate();
    target.validate();
    if (target.id != 0) throw MissingTargetError("trans_mai_qp expects the target domain (id 0)");
    if (candidates.empty()) throw ConfigInvalidError("no candidate domains supplied");
    if (!(sigma2_target >= 0.0))
        throw ConfigInvalidError("negative target residual variance");

    const Index p = target.p();
    const Index k = static_cast<Index>(candidates.size());
    const Matrix gram_target = target.X.transpose() * target.X;

    Matrix predictions(target.n(), k);
    Vector trace_terms(k);
    for (Index m = 0; m < k; ++m) {
        const auto& cand = candidates[static_cast<std::size_t>(m)];
        if (cand.beta.size() != p)
            throw DimensionMismatchError("candidate " + std::to_string(cand.index) +
                                         " has mismatched coefficient length");
        predictions.col(m) = target.X * cand.beta;
        auto factor =
            detail::factor_gram(cand.gram, "candidate " + std::to_string(cand.index) + " Gram");
        trace_terms[m] = detail::trace_solve(factor, gram_target);
    }

    SimplexQP qp;
    qp.A = (1.0 - cfg.v) * (predictions.transpose() * predictions);
    qp.A = 0.5 * (qp.A + qp.A.transpose());
    qp.b = -2.0 * (predictions.transpose() * target.y) +
           cfg.v * predictions.colwise().squaredNorm().transpose() +
           cfg.phi * sigma2_target * trace_terms;
    qp.c = target.y.squaredNorm();
    return qp;
}

/// Strict combinatorial criterion over the donor set (sufficient domain
/// excluded from the combination). Requires raw rows for every member of the
/// pooled sufficient domain.
inline SimplexQP trans_macs_qp(std::span<const DomainData> all_data,
                               std::span<const CandidateDomain> candidates, int m_s,
                               std::span<const int> donor_set,
                               const std::map<int, double>& sigma2_by_source) {
    detail::check_candidate_range(candidates, m_s);
    if (donor_set.empty())
        throw ConfigInvalidError("Trans-MACs requires a nonempty donor set");
    std::vector<int> indices(donor_set.begin(), donor_set.end());
    std::sort(indices.begin(), indices.end());
    for (int m : indices) {
        detail::check_candidate_range(candidates, m);
        if (m == m_s)
            throw ConfigInvalidError("donor set must not contain the sufficient domain");
    }
    return detail::assemble_pooled_qp(all_data, candidates, m_s, indices, sigma2_by_source);
}

/// Relaxed combinatorial criterion over donors plus the sufficient domain.
inline SimplexQP trans_mac_qp(std::span<const DomainData> all_data,
                              std::span<const CandidateDomain> candidates, int m_s,
                              std::span<const int> donor_set,
                              const std::map<int, double>& sigma2_by_source) {
    detail::check_candidate_range(candidates, m_s);
    std::vector<int> indices(donor_set.begin(), donor_set.end());
    indices.push_back(m_s);
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    for (int m : indices) detail::check_candidate_range(candidates, m);
    return detail::assemble_pooled_qp(all_data, candidates, m_s, indices, sigma2_by_source);
}

namespace detail {

inline FitResult finish_fit(std::span<const CandidateDomain> candidates,
                            std::vector<int> indices, const SimplexQP& qp,
                            const SolveOptions& opts) {
    FitResult fit;
    fit.weights = solve_simplex_qp(qp, opts);
    fit.beta = weighted_beta(candidates, indices, fit.weights.values);
    fit.selected_index = indices[static_cast<std::size_t>(argmax_lowest(fit.weights.values))];
    fit.objective = qp.value(fit.weights.values);
    fit.candidate_indices = std::move(indices);
    return fit;
}

}  // namespace detail

/// Trans-MAI: assemble the individual-similarity criterion over all
/// candidates and minimize it over the simplex.
inline FitResult fit_trans_mai(const DomainData& target,
                               std::span<const CandidateDomain> candidates,
                               const CriterionConfig& cfg, const SolveOptions& opts = {}) {
    if (candidates.empty()) throw ConfigInvalidError("no candidate domains supplied");
    const double sigma2_target = residual_variance(target, candidates[0].beta);
    const SimplexQP qp = trans_mai_qp(target, candidates, sigma2_target, cfg);
    std::vector<int> indices(candidates.size());
    std::iota(indices.begin(), indices.end(), 0);
    return detail::finish_fit(candidates, std::move(indices), qp, opts);
}

/// Trans-MACs: donors are the candidates ranked strictly after the sufficient
/// domain in the nested order.
inline FitResult fit_trans_macs(std::span<const DomainData> all_data,
                                std::span<const CandidateDomain> candidates, int m_s,
                                const std::map<int, double>& sigma2_by_source,
                                const SolveOptions& opts = {}) {
    const std::vector<int> donors = detail::donor_suffix(candidates, m_s);
    const SimplexQP qp = trans_macs_qp(all_data, candidates, m_s, donors, sigma2_by_source);
    return detail::finish_fit(candidates, donors, qp, opts);
}

/// Trans-MAC: donors plus the sufficient domain itself.
inline FitResult fit_trans_mac(std::span<const DomainData> all_data,
                               std::span<const CandidateDomain> candidates, int m_s,
                               const std::map<int, double>& sigma2_by_source,
                               const SolveOptions& opts = {}) {
    const std::vector<int> donors = detail::donor_suffix(candidates, m_s);
    const SimplexQP qp = trans_mac_qp(all_data, candidates, m_s, donors, sigma2_by_source);
    std::vector<int> indices = donors;
    indices.insert(indices.begin(), m_s);
    return detail::finish_fit(candidates, std::move(indices), qp, opts);
}

}  // namespace transma
