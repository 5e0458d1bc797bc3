#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "transma/estimation.hpp"
#include "transma/types.hpp"

namespace transma {

/// Estimated contrast magnitudes ||beta_m - beta_0|| and their ascending
/// ranking. Entry 0 is defined as exactly 0 so the target always ranks first.
struct ContrastTable {
    Vector norms;            // indexed by domain id
    std::vector<int> rank;   // permutation of 0..M, ascending norms, ties by id
};

inline ContrastTable contrast_norms(std::span<const DomainSummary> summaries) {
    const int count = static_cast<int>(summaries.size());
    std::vector<const DomainSummary*> by_id(count, nullptr);
    for (const auto& s : summaries) {
        if (s.id < 0 || s.id >= count || by_id[s.id] != nullptr)
            throw UnknownIdError("domain ids must form a distinct 0..M range, got id " +
                                 std::to_string(s.id));
        by_id[s.id] = &s;
    }
    if (count == 0 || by_id[0] == nullptr)
        throw MissingTargetError("no summary with target id 0");

    const Vector& beta0 = by_id[0]->beta;
    ContrastTable table;
    table.norms = Vector::Zero(count);
    for (int id = 1; id < count; ++id) {
        if (by_id[id]->beta.size() != beta0.size())
            throw DimensionMismatchError("summary " + std::to_string(id) +
                                         " has mismatched coefficient length");
        table.norms[id] = (by_id[id]->beta - beta0).norm();
    }
    table.rank.resize(count);
    std::iota(table.rank.begin(), table.rank.end(), 0);
    std::stable_sort(table.rank.begin(), table.rank.end(), [&](int a, int b) {
        return table.norms[a] < table.norms[b] || (table.norms[a] == table.norms[b] && a < b);
    });
    return table;
}

/// Nested candidate domains: candidate m pools the m+1 lowest-contrast
/// domains, so candidate 0 is the target alone and candidate M pools all.
inline std::vector<CandidateDomain> build_candidates(std::span<const DomainSummary> summaries,
                                                     const ContrastTable& table) {
    const int count = static_cast<int>(table.rank.size());
    std::vector<CandidateDomain> candidates;
    candidates.reserve(count);
    std::vector<int> members;
    members.reserve(count);
    for (int m = 0; m < count; ++m) {
        members.push_back(table.rank[m]);
        CandidateDomain cand;
        cand.index = m;
        cand.members = members;
        cand.total_n = 0;
        for (int id : members) cand.total_n += detail::summary_by_id(summaries, id).n;
        try {
            auto [gram, beta] = aggregate_cube(summaries, members);
            cand.gram = std::move(gram);
            cand.beta = std::move(beta);
        } catch (const RankDeficientError& e) {
            throw RankDeficientError("candidate " + std::to_string(m) + ": " + e.what());
        }
        candidates.push_back(std::move(cand));
    }
    return candidates;
}

}  // namespace transma
