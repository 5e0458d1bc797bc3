#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>

#include "transma/candidates.hpp"
#include "transma/rng.hpp"

using namespace transma;
using Catch::Approx;

namespace {

DomainSummary summary_with_beta(int id, const Vector& beta) {
    DomainSummary s;
    s.id = id;
    s.n = 10;
    s.gram = Matrix::Identity(beta.size(), beta.size());
    s.beta = beta;
    s.sigma2 = 1.0;
    return s;
}

std::vector<DomainData> random_domains(int count, Index n, Index p, std::uint64_t seed) {
    std::vector<DomainData> out;
    rng::StreamKey key(seed);
    for (int m = 0; m < count; ++m) {
        DomainData d;
        d.id = m;
        d.X = rng::Stream(key.child(2 * m)).normal_matrix(n, p);
        d.y = rng::Stream(key.child(2 * m + 1)).normal_vector(n);
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace

TEST_CASE("contrast_norms sorts ascending with ties to the lower id") {
    Vector base(2);
    base << 1.0, 0.0;
    std::vector<DomainSummary> summaries;
    summaries.push_back(summary_with_beta(0, base));
    summaries.push_back(summary_with_beta(1, base + 0.1 * Vector::Unit(2, 1)));
    summaries.push_back(summary_with_beta(2, base + 0.3 * Vector::Unit(2, 1)));
    summaries.push_back(summary_with_beta(3, base + 0.2 * Vector::Unit(2, 1)));

    const ContrastTable table = contrast_norms(summaries);
    CHECK(table.norms[0] == 0.0);
    CHECK(table.norms[1] == Approx(0.1));
    CHECK(table.rank == std::vector<int>{0, 1, 3, 2});

    // identical coefficients tie and keep id order
    summaries[2] = summary_with_beta(2, summaries[1].beta);
    const ContrastTable tied = contrast_norms(summaries);
    CHECK(tied.rank == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("contrast_norms needs the target") {
    std::vector<DomainSummary> summaries = {summary_with_beta(1, Vector::Ones(2))};
    CHECK_THROWS_AS(contrast_norms(summaries), Error);
}

TEST_CASE("contrast_norms matches the per-coordinate oracle") {
    rng::StreamKey key(55);
    std::vector<DomainSummary> summaries;
    for (int id = 0; id < 5; ++id)
        summaries.push_back(summary_with_beta(id, rng::Stream(key.child(id)).normal_vector(6)));
    const ContrastTable table = contrast_norms(summaries);
    for (int id = 1; id < 5; ++id) {
        double ss = 0.0;
        for (Index j = 0; j < 6; ++j) {
            const double diff = summaries[static_cast<std::size_t>(id)].beta[j] -
                                summaries[0].beta[j];
            ss += diff * diff;
        }
        CHECK(table.norms[id] == Approx(std::sqrt(ss)).epsilon(1e-12));
    }
}

TEST_CASE("build_candidates nests members by rank prefix") {
    Vector base(2);
    base << 1.0, 0.0;
    std::vector<DomainSummary> summaries;
    summaries.push_back(summary_with_beta(0, base));
    summaries.push_back(summary_with_beta(1, base + 0.1 * Vector::Unit(2, 1)));
    summaries.push_back(summary_with_beta(2, base + 0.3 * Vector::Unit(2, 1)));
    summaries.push_back(summary_with_beta(3, base + 0.2 * Vector::Unit(2, 1)));

    const auto candidates = build_candidates(summaries, contrast_norms(summaries));
    REQUIRE(candidates.size() == 4);
    CHECK(candidates[0].members == std::vector<int>{0});
    CHECK(candidates[1].members == std::vector<int>{0, 1});
    CHECK(candidates[2].members == std::vector<int>{0, 1, 3});
    CHECK(candidates[3].members == std::vector<int>{0, 1, 3, 2});
    for (std::size_t m = 1; m < candidates.size(); ++m) {
        CHECK(candidates[m].members.size() == m + 1);
        // strict nesting: previous members form a prefix
        CHECK(std::equal(candidates[m - 1].members.begin(), candidates[m - 1].members.end(),
                         candidates[m].members.begin()));
        CHECK(candidates[m].members.front() == 0);
    }
}

TEST_CASE("identical domains produce identical candidate coefficients") {
    auto domains = random_domains(1, 25, 3, 99);
    std::vector<DomainSummary> summaries;
    for (int m = 0; m < 4; ++m) {
        DomainData d = domains[0];
        d.id = m;
        summaries.push_back(ols_fit(d));
    }
    const auto candidates = build_candidates(summaries, contrast_norms(summaries));
    for (const auto& cand : candidates)
        CHECK((cand.beta - summaries[0].beta).norm() <=
              1e-10 * (1.0 + summaries[0].beta.norm()));
}

TEST_CASE("candidate coefficients match stacked pooled OLS") {
    auto domains = random_domains(4, 30, 3, 123);
    // give sources their own signal so contrasts are distinct
    for (auto& d : domains) d.y += d.X * Vector::Constant(3, 0.2 * d.id);
    std::vector<DomainSummary> summaries;
    for (const auto& d : domains) summaries.push_back(ols_fit(d));
    const auto candidates = build_candidates(summaries, contrast_norms(summaries));

    for (const auto& cand : candidates) {
        Index rows = 0;
        for (int id : cand.members) rows += domains[static_cast<std::size_t>(id)].n();
        Matrix sx(rows, 3);
        Vector sy(rows);
        Index at = 0;
        for (int id : cand.members) {
            const auto& d = domains[static_cast<std::size_t>(id)];
            sx.middleRows(at, d.n()) = d.X;
            sy.segment(at, d.n()) = d.y;
            at += d.n();
        }
        const Vector oracle = sx.colPivHouseholderQr().solve(sy);
        CHECK((cand.beta - oracle).norm() <= 1e-8 * (1.0 + oracle.norm()));
        CHECK(cand.total_n == rows);
    }
}

TEST_CASE("permuting source ids relabels candidates without changing them") {
    auto domains = random_domains(4, 30, 3, 321);
    for (auto& d : domains) d.y += d.X * Vector::Constant(3, 0.15 * d.id);
    std::vector<DomainSummary> summaries;
    for (const auto& d : domains) summaries.push_back(ols_fit(d));
    const auto candidates = build_candidates(summaries, contrast_norms(summaries));

    // swap the ids of sources 1 and 3
    const std::array<int, 4> relabel = {0, 3, 2, 1};
    std::vector<DomainSummary> permuted = summaries;
    for (auto& s : permuted) s.id = relabel[static_cast<std::size_t>(s.id)];
    const auto candidates2 = build_candidates(permuted, contrast_norms(permuted));

    REQUIRE(candidates.size() == candidates2.size());
    for (std::size_t m = 0; m < candidates.size(); ++m) {
        CHECK((candidates[m].beta - candidates2[m].beta).norm() <= 1e-12);
        std::vector<int> expected;
        for (int id : candidates[m].members)
            expected.push_back(relabel[static_cast<std::size_t>(id)]);
        CHECK(candidates2[m].members == expected);
    }
}
