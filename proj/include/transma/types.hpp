#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "transma/errors.hpp"

namespace transma {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Raw observations for one study. Domain id 0 is the target.
struct DomainData {
    int id = 0;
    Matrix X;  // n x p covariates
    Vector y;  // n responses

    Index n() const { return X.rows(); }
    Index p() const { return X.cols(); }

    void validate() const {
        if (X.rows() != y.size())
            throw DimensionMismatchError("domain " + std::to_string(id) +
                                         ": X has " + std::to_string(X.rows()) +
                                         " rows but y has " + std::to_string(y.size()));
        if (X.rows() < 1)
            throw DimensionMismatchError("domain " + std::to_string(id) + ": empty sample");
        if (!X.allFinite() || !y.allFinite())
            throw DimensionMismatchError("domain " + std::to_string(id) +
                                         ": non-finite entries");
    }
};

/// Privacy-safe per-domain summary: what a source actually transmits.
struct DomainSummary {
    int id = 0;
    Index n = 0;
    Matrix gram;    // X'X, p x p
    Vector beta;    // per-domain OLS coefficients
    double sigma2 = 0.0;  // residual variance, divisor n

    Index p() const { return gram.rows(); }
};

/// Nested pooled domain: the target plus the m closest sources.
struct CandidateDomain {
    int index = 0;                 // position in the nested sequence, 0..M
    std::vector<int> members;      // domain ids in order of inclusion; members[0] == 0
    Index total_n = 0;             // sum of member sample counts
    Matrix gram;                   // aggregated Gram, sum of member Grams
    Vector beta;                   // pooled OLS coefficients via the regression cube
};

namespace detail {

/// Relative symmetry gap, 0 for exactly symmetric matrices.
inline double symmetry_gap(const Matrix& A) {
    const double scale = A.cwiseAbs().maxCoeff();
    if (scale == 0.0) return 0.0;
    return (A - A.transpose()).cwiseAbs().maxCoeff() / scale;
}

}  // namespace detail

}  // namespace transma
