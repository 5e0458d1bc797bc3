#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "transma/types.hpp"

namespace transma {

/// Nonnegative weights summing to 1.
struct SimplexWeights {
    Vector values;

    int argmax() const {
        int best = 0;
        for (Index i = 1; i < values.size(); ++i)
            if (values[i] > values[best]) best = static_cast<int>(i);
        return best;
    }
};

/// Canonical form w'Aw + b'w + c shared by all three weight criteria.
struct SimplexQP {
    Matrix A;
    Vector b;
    double c = 0.0;

    Index size() const { return b.size(); }
    double value(const Vector& w) const { return w.dot(A * w) + b.dot(w) + c; }
    Vector gradient(const Vector& w) const { return 2.0 * (A * w) + b; }
};

/// Euclidean projection onto the probability simplex, sort-based O(k log k).
inline Vector project_to_simplex(const Vector& v) {
    const Index k = v.size();
    std::vector<double> u(v.data(), v.data() + k);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double cumsum = 0.0;
    double tau = 0.0;
    for (Index j = 0; j < k; ++j) {
        cumsum += u[static_cast<std::size_t>(j)];
        const double candidate = (cumsum - 1.0) / static_cast<double>(j + 1);
        if (u[static_cast<std::size_t>(j)] - candidate > 0.0) tau = candidate;
    }
    return (v.array() - tau).cwiseMax(0.0);
}

/// Linearized optimality gap over the simplex: f(w) - min_m f(w) + <grad, e_m - w>.
/// Bounds f(w) - f(w*) from above for convex f.
inline double frank_wolfe_gap(const SimplexQP& qp, const Vector& w) {
    const Vector g = qp.gradient(w);
    return g.dot(w) - g.minCoeff();
}

struct SolveOptions {
    int max_iterations = 100000;
    double gap_tol_rel = 1e-10;  // stop when gap <= gap_tol_rel * (1 + |f|)
};

namespace detail {

/// Equality-constrained solve on a support set: min x'A_SS x + b_S'x s.t. sum x = 1.
/// Returns false when the KKT system is singular.
inline bool solve_on_support(const SimplexQP& qp, const std::vector<int>& support,
                             Vector& x_out, double& lambda_out) {
    const int s = static_cast<int>(support.size());
    Matrix kkt = Matrix::Zero(s + 1, s + 1);
    Vector rhs = Vector::Zero(s + 1);
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) kkt(i, j) = 2.0 * qp.A(support[i], support[j]);
        kkt(i, s) = -1.0;
        kkt(s, i) = 1.0;
        rhs[i] = -qp.b[support[i]];
    }
    rhs[s] = 1.0;
    Eigen::FullPivLU<Matrix> lu(kkt);
    if (!lu.isInvertible()) return false;
    const Vector sol = lu.solve(rhs);
    x_out = sol.head(s);
    lambda_out = sol[s];
    return true;
}

/// Primal active-set refinement starting from the support of w. Returns the
/// refined point, or w unchanged when refinement does not help.
inline Vector active_set_polish(const SimplexQP& qp, const Vector& w) {
    const Index k = qp.size();
    std::vector<int> support;
    for (Index i = 0; i < k; ++i)
        if (w[i] > 1e-12) support.push_back(static_cast<int>(i));
    if (support.empty()) support.push_back(0);

    Vector best = w;
    double best_value = qp.value(w);
    const int max_pivots = 4 * static_cast<int>(k) + 8;
    for (int pivot = 0; pivot < max_pivots; ++pivot) {
        Vector x;
        double lambda = 0.0;
        if (!solve_on_support(qp, support, x, lambda)) {
            if (support.size() <= 1) break;
            // singular on this face: retreat to the single best vertex of it
            const Vector g = qp.gradient(best);
            int keep = support[0];
            for (int idx : support)
                if (g[idx] < g[keep]) keep = idx;
            support = {keep};
            continue;
        }
        int most_negative = -1;
        for (int i = 0; i < static_cast<int>(support.size()); ++i)
            if (x[i] < -1e-12 &&
                (most_negative < 0 || x[i] < x[most_negative]))
                most_negative = i;
        if (most_negative >= 0) {
            if (support.size() <= 1) break;
            support.erase(support.begin() + most_negative);
            continue;
        }
        Vector candidate = Vector::Zero(k);
        for (int i = 0; i < static_cast<int>(support.size()); ++i)
            candidate[support[i]] = std::max(x[i], 0.0);
        candidate /= candidate.sum();
        const double cand_value = qp.value(candidate);
        if (cand_value <= best_value + 1e-14 * (1.0 + std::abs(best_value))) {
            best = candidate;
            best_value = cand_value;
        }
        // dual feasibility: off-support gradient must not undercut lambda
        const Vector g = qp.gradient(candidate);
        int entering = -1;
        double worst = -1e-12 * (1.0 + qp.b.cwiseAbs().maxCoeff());
        for (Index j = 0; j < k; ++j) {
            if (std::find(support.begin(), support.end(), static_cast<int>(j)) !=
                support.end())
                continue;
            if (g[j] - lambda < worst) {
                worst = g[j] - lambda;
                entering = static_cast<int>(j);
            }
        }
        if (entering < 0) break;
        support.push_back(entering);
        std::sort(support.begin(), support.end());
    }
    return best;
}

}  // namespace detail

/// Global minimizer of a convex SimplexQP over the probability simplex.
/// Accelerated projected gradient with monotone restarts, plus active-set
/// refinement on the support; the Frank-Wolfe gap certifies optimality.
inline SimplexWeights solve_simplex_qp(const SimplexQP& qp_in, const SolveOptions& opts = {}) {
    const Index k = qp_in.size();
    if (k <= 0 || qp_in.A.rows() != k || qp_in.A.cols() != k)
        throw DimensionMismatchError("simplex QP has inconsistent shapes");
    if (detail::symmetry_gap(qp_in.A) > 1e-10)
        throw DimensionMismatchError("simplex QP matrix is not symmetric");

    SimplexQP qp = qp_in;
    qp.A = 0.5 * (qp_in.A + qp_in.A.transpose());

    Eigen::SelfAdjointEigenSolver<Matrix> eig(qp.A, Eigen::EigenvaluesOnly);
    const double eig_max = eig.eigenvalues().maxCoeff();
    const double eig_min = eig.eigenvalues().minCoeff();
    if (eig_min < -1e-8 * std::max(eig_max, 1.0))
        throw NotPsdError("simplex QP matrix has eigenvalue " + std::to_string(eig_min));

    const double lipschitz = std::max(2.0 * eig_max, 1e-8);
    const auto gap_tol = [&](double value) {
        return opts.gap_tol_rel * (1.0 + std::abs(value));
    };
    const auto finish = [&](Vector w) {
        for (Index i = 0; i < k; ++i)
            if (w[i] < 0.0) w[i] = 0.0;  // clamp projection dust at the faces
        w /= w.sum();
        return SimplexWeights{std::move(w)};
    };

    Vector w = Vector::Constant(k, 1.0 / static_cast<double>(k));
    if (k == 1) return finish(w);

    Vector momentum = w;
    double t = 1.0;
    double f_w = qp.value(w);
    Vector best = w;
    double best_gap = frank_wolfe_gap(qp, w);
    if (best_gap <= gap_tol(f_w)) return finish(w);

    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        Vector next = project_to_simplex(momentum - qp.gradient(momentum) / lipschitz);
        double f_next = qp.value(next);
        if (f_next > f_w) {  // restart momentum when the step is non-monotone
            momentum = w;
            t = 1.0;
            next = project_to_simplex(momentum - qp.gradient(momentum) / lipschitz);
            f_next = qp.value(next);
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        momentum = next + ((t - 1.0) / t_next) * (next - w);
        t = t_next;
        w = next;
        f_w = f_next;

        double gap = frank_wolfe_gap(qp, w);
        if (gap < best_gap) {
            best_gap = gap;
            best = w;
        }
        if (gap <= gap_tol(f_w)) return finish(w);

        if ((iter + 1) % 25 == 0 || gap <= 1e3 * gap_tol(f_w)) {
            Vector polished = detail::active_set_polish(qp, w);
            const double polished_gap = frank_wolfe_gap(qp, polished);
            if (polished_gap <= gap_tol(qp.value(polished))) return finish(polished);
            if (qp.value(polished) < f_w) {
                w = polished;
                f_w = qp.value(polished);
                momentum = w;
                t = 1.0;
            }
            if (polished_gap < best_gap) {
                best_gap = polished_gap;
                best = polished;
            }
        }
    }
    throw NotConvergedError(
        "simplex QP solver hit the iteration cap with gap " + std::to_string(best_gap),
        std::vector<double>(best.data(), best.data() + k), best_gap);
}

}  // namespace transma
