#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "transma/averaging.hpp"
#include "transma/candidates.hpp"
#include "transma/estimation.hpp"
#include "transma/inference.hpp"
#include "transma/rng.hpp"

namespace transma::simlab {

enum class ExperimentKind { Exp1, Exp2, Exp3, Exp4, Exp5, WeightConv, Normality };
enum class DeltaMode { Sparse, Dense };
enum class CovMode { Identity, ToeplitzBand, Ar05 };
enum class NoiseSchedule { Constant, LinearRamp, Geometric };

/// Full description of one simulation design point.
struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::Exp1;
    int source_count = 10;       // M
    int dimension = 20;          // p
    int target_n = 100;          // n0
    int source_n = 200;          // per-source sample count
    int informative_count = 4;   // |A|
    double contrast = 0.0;       // h
    DeltaMode delta_mode = DeltaMode::Dense;
    int sparse_support = 3;      // nonzero contrast coordinates in Sparse mode
    double sigma_target = 1.0;
    double sigma_sources = 1.0;  // base scale for the Constant schedule
    NoiseSchedule source_noise = NoiseSchedule::Constant;
    CovMode cov_target = CovMode::Identity;
    CovMode cov_sources = CovMode::Identity;
    int replications = 100;      // B
    std::uint64_t seed = 20260801ull;
    double v = 0.5;
    double phi = 0.0;            // <= 0 resolves to log(n0)
    int test_n = 1000;

    bool combinatorial_family() const {
        return experiment == ExperimentKind::Exp2 || experiment == ExperimentKind::Exp3 ||
               experiment == ExperimentKind::Exp4 || experiment == ExperimentKind::WeightConv;
    }

    double resolved_phi() const { return phi > 0.0 ? phi : default_phi(target_n); }

    double source_noise_sd(int m) const {
        switch (source_noise) {
            case NoiseSchedule::Constant: return sigma_sources;
            case NoiseSchedule::LinearRamp: return 0.2 * m;
            case NoiseSchedule::Geometric: return std::pow(1.2, m - 3);
        }
        return sigma_sources;
    }

    void validate() const {
        if (source_count < 1 || dimension < 1 || target_n < 1 || source_n < 1 ||
            replications < 1 || test_n < 1)
            throw ConfigInvalidError("counts must be positive");
        if (!(contrast >= 0.0)) throw ConfigInvalidError("h must be nonnegative");
        if (informative_count < 0 || informative_count > source_count)
            throw ConfigInvalidError("A_size must lie in 0..M");
        if (delta_mode == DeltaMode::Sparse &&
            (sparse_support < 1 || sparse_support > dimension))
            throw ConfigInvalidError("v_delta must lie in 1..p");
        if (!(sigma_target >= 0.0) || !(sigma_sources >= 0.0))
            throw ConfigInvalidError("noise scales must be nonnegative");
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigInvalidError("v must lie in [0,1]");
        if (combinatorial_family() && informative_count >= source_count)
            throw ConfigInvalidError("combinatorial designs need A_size < M");
    }
};

/// Reference defaults for each named design; callers override the swept fields.
inline ExperimentConfig default_config(ExperimentKind kind) {
    ExperimentConfig cfg;
    cfg.experiment = kind;
    switch (kind) {
        case ExperimentKind::Exp1:
            break;
        case ExperimentKind::Exp2:
            cfg.sigma_target = cfg.sigma_sources = 0.5;
            cfg.informative_count = 3;
            break;
        case ExperimentKind::Exp3:
            cfg.informative_count = 3;
            cfg.cov_sources = CovMode::ToeplitzBand;
            break;
        case ExperimentKind::Exp4:
            cfg.informative_count = 3;
            cfg.cov_target = CovMode::Ar05;
            cfg.cov_sources = CovMode::ToeplitzBand;
            cfg.source_noise = NoiseSchedule::LinearRamp;
            break;
        case ExperimentKind::Exp5:
            cfg.dimension = 50;
            cfg.target_n = 150;
            cfg.source_n = 100;
            cfg.informative_count = 4;
            cfg.contrast = 0.12;
            break;
        case ExperimentKind::WeightConv:
            cfg.dimension = 10;
            cfg.informative_count = 3;
            cfg.target_n = 100;
            cfg.source_n = 100;
            cfg.sigma_target = cfg.sigma_sources = 0.5;
            break;
        case ExperimentKind::Normality:
            cfg.informative_count = 2;
            cfg.target_n = 200;
            cfg.source_n = 200;
            break;
    }
    return cfg;
}

/// Covariance for domain m. ToeplitzBand has first row
/// (1, 1/(m+1) repeated 2m-1 times, 0...), truncated at column p-1 when the
/// band does not fit; Ar05 is 0.5^{|i-j|}.
inline Matrix gen_covariance(CovMode mode, int m, int p) {
    Matrix omega = Matrix::Identity(p, p);
    switch (mode) {
        case CovMode::Identity:
            break;
        case CovMode::ToeplitzBand: {
            const int band = std::min(2 * m - 1, p - 1);
            const double value = 1.0 / static_cast<double>(m + 1);
            for (int i = 0; i < p; ++i)
                for (int j = std::max(0, i - band); j <= std::min(p - 1, i + band); ++j)
                    if (i != j) omega(i, j) = value;
            break;
        }
        case CovMode::Ar05:
            for (int i = 0; i < p; ++i)
                for (int j = 0; j < p; ++j) omega(i, j) = std::pow(0.5, std::abs(i - j));
            break;
    }
    return omega;
}

/// One realized multi-source dataset plus the truths behind it.
struct GeneratedExperiment {
    std::vector<DomainData> domains;  // ids 0..M in order
    Vector beta0;
    std::vector<Vector> betas;        // true coefficients per domain id
    std::vector<double> noise_sd;     // true noise standard deviation per domain id
    Matrix test_covariates;           // test_n x p fresh draws from the target law
};

namespace stream_purpose {
inline constexpr std::uint64_t kCovariates = 1;
inline constexpr std::uint64_t kNoise = 2;
inline constexpr std::uint64_t kBeta0 = 3;
inline constexpr std::uint64_t kBetaSource = 4;
inline constexpr std::uint64_t kDeltaSupport = 5;
inline constexpr std::uint64_t kDeltaValue = 6;
inline constexpr std::uint64_t kTest = 7;
inline constexpr std::uint64_t kSplit = 8;
}  // namespace stream_purpose

namespace detail {

inline Matrix covariance_factor(CovMode mode, int m, int p) {
    if (mode == CovMode::Identity) return Matrix::Identity(p, p);
    Eigen::LLT<Matrix> llt(gen_covariance(mode, m, p));
    if (llt.info() != Eigen::Success)
        throw ConfigInvalidError("covariance for domain " + std::to_string(m) +
                                 " is not positive definite");
    return llt.matrixL();
}

inline Matrix draw_design(rng::Stream stream, Index n, const Matrix& chol_lower) {
    const Index p = chol_lower.rows();
    Matrix z = stream.normal_matrix(n, p);
    return z * chol_lower.transpose();
}

/// Contrast vector for one informative source.
inline Vector draw_delta(const ExperimentConfig& cfg, rng::StreamKey rep_key, int m) {
    const int p = cfg.dimension;
    Vector delta = Vector::Zero(p);
    if (cfg.delta_mode == DeltaMode::Sparse) {
        rng::Stream pick(rep_key.child(stream_purpose::kDeltaSupport).child(m));
        std::vector<int> pool(p);
        std::iota(pool.begin(), pool.end(), 0);
        rng::Stream value(rep_key.child(stream_purpose::kDeltaValue).child(m));
        for (int i = 0; i < cfg.sparse_support; ++i) {
            const int j = i + static_cast<int>(pick.below(static_cast<std::uint64_t>(p - i)));
            std::swap(pool[i], pool[j]);
            delta[pool[i]] = cfg.contrast * value.normal();
        }
    } else {
        rng::Stream value(rep_key.child(stream_purpose::kDeltaValue).child(m));
        Vector z = value.normal_vector(p);
        const double norm = z.norm();
        if (cfg.contrast > 0.0 && norm > 0.0) delta = (cfg.contrast / norm) * z;
    }
    return delta;
}

}  // namespace detail

/// Deterministic data generator: identical (config, replicate) pairs produce
/// identical datasets regardless of thread schedule.
inline GeneratedExperiment gen_experiment(const ExperimentConfig& cfg,
                                          std::uint64_t replicate) {
    cfg.validate();
    const int M = cfg.source_count;
    const int p = cfg.dimension;
    const int a_size = cfg.informative_count;
    const rng::StreamKey rep_key = rng::StreamKey(cfg.seed).child(replicate);

    GeneratedExperiment out;
    out.domains.resize(M + 1);
    out.betas.assign(M + 1, Vector());
    out.noise_sd.assign(M + 1, 0.0);

    const Matrix target_factor = detail::covariance_factor(cfg.cov_target, 0, p);
    for (int m = 0; m <= M; ++m) {
        out.domains[m].id = m;
        const Index n = (m == 0) ? cfg.target_n : cfg.source_n;
        const Matrix factor =
            (m == 0) ? target_factor : detail::covariance_factor(cfg.cov_sources, m, p);
        out.domains[m].X = detail::draw_design(
            rng::Stream(rep_key.child(stream_purpose::kCovariates).child(m)), n, factor);
        out.noise_sd[m] = (m == 0) ? cfg.sigma_target : cfg.source_noise_sd(m);
    }

    if (!cfg.combinatorial_family()) {
        // individual-similarity designs: target coefficients N(2,4),
        // non-informative sources N(-1,4)
        rng::Stream beta_stream(rep_key.child(stream_purpose::kBeta0));
        out.beta0 = Vector::Constant(p, 2.0) + 2.0 * beta_stream.normal_vector(p);
        for (int m = a_size + 1; m <= M; ++m) {
            rng::Stream s(rep_key.child(stream_purpose::kBetaSource).child(m));
            out.betas[m] = Vector::Constant(p, -1.0) + 2.0 * s.normal_vector(p);
        }
    } else {
        // combinatorial designs: non-informative sources N(2,16); the target
        // solves the fixed-point equation of the strict combinatorial
        // similarity, using the realized Gram matrices of the id-order
        // candidate prefixes
        for (int m = a_size + 1; m <= M; ++m) {
            rng::Stream s(rep_key.child(stream_purpose::kBetaSource).child(m));
            out.betas[m] = Vector::Constant(p, 2.0) + 4.0 * s.normal_vector(p);
        }
        const double rho = 1.0 / static_cast<double>(M - a_size);
        std::vector<Matrix> grams(M + 1);
        for (int m = 0; m <= M; ++m)
            grams[m] = out.domains[m].X.transpose() * out.domains[m].X;
        Matrix prefix = Matrix::Zero(p, p);
        for (int m = 0; m <= a_size; ++m) prefix += grams[m];

        Matrix lhs = Matrix::Identity(p, p);
        Vector rhs = Vector::Zero(p);
        Matrix running = prefix;
        Vector running_rhs = Vector::Zero(p);
        for (int m = a_size + 1; m <= M; ++m) {
            running += grams[m];
            running_rhs += grams[m] * out.betas[m];
            auto factor = transma::detail::factor_gram(
                running, "prefix Gram for candidate " + std::to_string(m));
            lhs -= rho * factor.solve(prefix);
            rhs += rho * factor.solve(running_rhs);
        }
        Eigen::FullPivLU<Matrix> lu(lhs);
        if (!lu.isInvertible())
            throw RankDeficientError("combinatorial fixed-point system is singular");
        out.beta0 = lu.solve(rhs);
    }

    out.betas[0] = out.beta0;
    for (int m = 1; m <= a_size; ++m)
        out.betas[m] = out.beta0 + detail::draw_delta(cfg, rep_key, m);

    for (int m = 0; m <= M; ++m) {
        rng::Stream noise(rep_key.child(stream_purpose::kNoise).child(m));
        out.domains[m].y = out.domains[m].X * out.betas[m] +
                           out.noise_sd[m] * noise.normal_vector(out.domains[m].n());
    }

    out.test_covariates = detail::draw_design(
        rng::Stream(rep_key.child(stream_purpose::kTest)), cfg.test_n, target_factor);
    return out;
}

/// Relative residual of the combinatorial fixed-point equation the generated
/// target coefficients must satisfy.
inline double combinatorial_fixed_point_residual(const GeneratedExperiment& g,
                                                 const ExperimentConfig& cfg) {
    const int M = cfg.source_count;
    const int a_size = cfg.informative_count;
    const int p = cfg.dimension;
    const double rho = 1.0 / static_cast<double>(M - a_size);

    Matrix prefix = Matrix::Zero(p, p);
    for (int m = 0; m <= a_size; ++m)
        prefix += g.domains[m].X.transpose() * g.domains[m].X;
    Matrix lhs = Matrix::Identity(p, p);
    Vector rhs = Vector::Zero(p);
    Matrix running = prefix;
    Vector running_rhs = Vector::Zero(p);
    for (int m = a_size + 1; m <= M; ++m) {
        running += g.domains[m].X.transpose() * g.domains[m].X;
        running_rhs += (g.domains[m].X.transpose() * g.domains[m].X) * g.betas[m];
        Eigen::LDLT<Matrix> factor(running);
        lhs -= rho * factor.solve(prefix);
        rhs += rho * factor.solve(running_rhs);
    }
    return (lhs * g.beta0 - rhs).norm() / std::max(1.0, g.beta0.norm());
}

/// OLS on the target domain alone.
inline Vector baseline_ols_tar(std::span<const DomainData> domains) {
    for (const auto& d : domains)
        if (d.id == 0) return ols_fit(d).beta;
    throw MissingTargetError("no domain with id 0");
}

/// OLS on all domains stacked; equals the regression cube over all ids.
inline Vector baseline_ols_pool(std::span<const DomainData> domains) {
    if (domains.empty()) throw MissingTargetError("no domains supplied");
    const Index p = domains[0].p();
    Matrix gram = Matrix::Zero(p, p);
    Vector rhs = Vector::Zero(p);
    for (const auto& d : domains) {
        d.validate();
        gram += d.X.transpose() * d.X;
        rhs += d.X.transpose() * d.y;
    }
    auto factor = transma::detail::factor_gram(gram, "pooled Gram");
    return factor.solve(rhs);
}

enum class Method { OlsTar, OlsPool, TransMai, TransMacs, TransMac };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::OlsTar: return "ols-tar";
        case Method::OlsPool: return "ols-pool";
        case Method::TransMai: return "trans-mai";
        case Method::TransMacs: return "trans-macs";
        case Method::TransMac: return "trans-mac";
    }
    return "?";
}

inline std::optional<Method> method_from_name(const std::string& name) {
    for (Method m : {Method::OlsTar, Method::OlsPool, Method::TransMai, Method::TransMacs,
                     Method::TransMac})
        if (name == method_name(m)) return m;
    return std::nullopt;
}

struct MethodMetrics {
    bool ok = false;
    std::string error;
    double mse = 0.0;
    double mspe = 0.0;
    std::optional<Vector> weights;  // length M+1, zeros off the candidate set
    std::optional<int> m_s_hat;
};

struct ReplicationMetrics {
    std::uint64_t replicate = 0;
    std::vector<MethodMetrics> per_method;  // aligned with the requested method list
};

struct MethodSummary {
    Method method = Method::OlsTar;
    int completed = 0;
    double mean_mse = 0.0, mse_lo = 0.0, mse_hi = 0.0;
    double mean_mspe = 0.0, mspe_lo = 0.0, mspe_hi = 0.0;
};

struct ReplicationSet {
    std::vector<Method> methods;
    std::vector<ReplicationMetrics> rows;   // ordered by replicate index
    std::vector<MethodSummary> summary;
    int failed = 0;  // replications where at least one method failed
};

namespace detail {

/// Empirical quantile with linear interpolation between order statistics.
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

template <typename Fn>
inline void parallel_for(int count, int threads, Fn&& fn) {
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::atomic<bool> aborted{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= count || aborted.load()) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                aborted.store(true);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline Vector embed_weights(const FitResult& fit, int candidate_count) {
    Vector full = Vector::Zero(candidate_count);
    for (std::size_t i = 0; i < fit.candidate_indices.size(); ++i)
        full[fit.candidate_indices[i]] = fit.weights.values[static_cast<Index>(i)];
    return full;
}

}  // namespace detail

/// Squared coefficient error and noise-free prediction error on fresh draws.
inline std::pair<double, double> estimator_metrics(const Vector& beta_hat,
                                                   const Vector& beta0,
                                                   const Matrix& test_covariates) {
    const double mse = (beta_hat - beta0).squaredNorm();
    const double mspe = (test_covariates * (beta_hat - beta0)).squaredNorm() /
                        static_cast<double>(test_covariates.rows());
    return {mse, mspe};
}

/// Run all requested methods on one generated replication.
inline ReplicationMetrics run_one(const ExperimentConfig& cfg, std::span<const Method> methods,
                                  std::uint64_t replicate) {
    ReplicationMetrics row;
    row.replicate = replicate;
    row.per_method.resize(methods.size());

    GeneratedExperiment g = gen_experiment(cfg, replicate);
    std::vector<DomainSummary> summaries;
    summaries.reserve(g.domains.size());
    std::vector<CandidateDomain> candidates;
    std::optional<FitResult> mai_fit;
    std::map<int, double> sigma2_plugin;
    const CriterionConfig criterion{cfg.v, cfg.resolved_phi()};

    auto ensure_candidates = [&]() {
        if (!candidates.empty()) return;
        for (const auto& d : g.domains) summaries.push_back(ols_fit(d));
        candidates = build_candidates(summaries, contrast_norms(summaries));
        for (const auto& s : summaries) sigma2_plugin[s.id] = s.sigma2;
    };
    auto ensure_mai = [&]() {
        ensure_candidates();
        if (!mai_fit) mai_fit = fit_trans_mai(g.domains[0], candidates, criterion);
    };

    for (std::size_t i = 0; i < methods.size(); ++i) {
        MethodMetrics& mm = row.per_method[i];
        try {
            Vector beta_hat;
            switch (methods[i]) {
                case Method::OlsTar:
                    beta_hat = baseline_ols_tar(g.domains);
                    break;
                case Method::OlsPool:
                    beta_hat = baseline_ols_pool(g.domains);
                    break;
                case Method::TransMai: {
                    ensure_mai();
                    beta_hat = mai_fit->beta;
                    mm.weights = detail::embed_weights(*mai_fit,
                                                       static_cast<int>(candidates.size()));
                    mm.m_s_hat = mai_fit->selected_index;
                    break;
                }
                case Method::TransMacs:
                case Method::TransMac: {
                    ensure_mai();
                    const int m_s = mai_fit->selected_index;
                    FitResult fit =
                        (methods[i] == Method::TransMacs)
                            ? fit_trans_macs(g.domains, candidates, m_s, sigma2_plugin)
                            : fit_trans_mac(g.domains, candidates, m_s, sigma2_plugin);
                    beta_hat = fit.beta;
                    mm.weights =
                        detail::embed_weights(fit, static_cast<int>(candidates.size()));
                    mm.m_s_hat = fit.selected_index;
                    break;
                }
            }
            std::tie(mm.mse, mm.mspe) = estimator_metrics(beta_hat, g.beta0, g.test_covariates);
            mm.ok = true;
        } catch (const Error& e) {
            mm.ok = false;
            mm.error = e.what();
        }
    }
    return row;
}

/// Replication engine: deterministic per-replicate streams, concurrent
/// execution, index-ordered reduction.
inline ReplicationSet run_replications(const ExperimentConfig& cfg,
                                       std::span<const Method> methods, int threads = 1) {
    cfg.validate();
    if (methods.empty()) throw ConfigInvalidError("method list is empty");
    ReplicationSet set;
    set.methods.assign(methods.begin(), methods.end());
    set.rows.resize(cfg.replications);
    detail::parallel_for(cfg.replications, threads, [&](int r) {
        set.rows[static_cast<std::size_t>(r)] =
            run_one(cfg, methods, static_cast<std::uint64_t>(r));
    });

    for (const auto& row : set.rows) {
        bool any_failed = false;
        for (const auto& mm : row.per_method) any_failed = any_failed || !mm.ok;
        if (any_failed) ++set.failed;
    }
    for (std::size_t i = 0; i < set.methods.size(); ++i) {
        MethodSummary s;
        s.method = set.methods[i];
        std::vector<double> mses, mspes;
        for (const auto& row : set.rows) {
            if (!row.per_method[i].ok) continue;
            mses.push_back(row.per_method[i].mse);
            mspes.push_back(row.per_method[i].mspe);
        }
        s.completed = static_cast<int>(mses.size());
        if (s.completed > 0) {
            s.mean_mse = std::accumulate(mses.begin(), mses.end(), 0.0) / s.completed;
            s.mean_mspe = std::accumulate(mspes.begin(), mspes.end(), 0.0) / s.completed;
            s.mse_lo = detail::percentile(mses, 0.025);
            s.mse_hi = detail::percentile(mses, 0.975);
            s.mspe_lo = detail::percentile(mspes, 0.025);
            s.mspe_hi = detail::percentile(mspes, 0.975);
        }
        set.summary.push_back(s);
    }
    return set;
}

/// Weight mass on candidates that pool at least one constructed
/// non-informative source (ids above |A|).
inline double noninformative_weight_sum(const FitResult& fit,
                                        std::span<const CandidateDomain> candidates,
                                        int informative_count) {
    double sum = 0.0;
    for (std::size_t i = 0; i < fit.candidate_indices.size(); ++i) {
        const auto& cand = candidates[static_cast<std::size_t>(fit.candidate_indices[i])];
        for (int id : cand.members) {
            if (id > informative_count) {
                sum += fit.weights.values[static_cast<Index>(i)];
                break;
            }
        }
    }
    return sum;
}

struct WeightConvPoint {
    double v = 0.0;
    int n0 = 0;
    double mean_weight_sum = 0.0;
    int completed = 0;
};

struct PowerFit {
    double c = 0.0, a = 0.0;            // log-log least squares
    double c_refined = 0.0, a_refined = 0.0;  // Gauss-Newton on the original scale
};

/// Least-squares fit of c*n^{-a}: ordinary least squares in log-log space,
/// then up to 100 damped Gauss-Newton steps on the original objective.
/// A series that is zero everywhere decays faster than any power; it is
/// reported as c = 0, a = +infinity.
inline PowerFit fit_power_law(std::span<const double> n_values,
                              std::span<const double> y_values) {
    if (n_values.size() != y_values.size() || n_values.size() < 2)
        throw ConfigInvalidError("power-law fit needs at least two points");
    const std::size_t k = n_values.size();
    constexpr double floor = 1e-12;
    bool any_positive = false;
    for (std::size_t i = 0; i < k; ++i) any_positive = any_positive || y_values[i] > floor;
    if (!any_positive) {
        PowerFit degenerate;
        degenerate.c = degenerate.c_refined = 0.0;
        degenerate.a = degenerate.a_refined = std::numeric_limits<double>::infinity();
        return degenerate;
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double x = std::log(n_values[i]);
        const double y = std::log(std::max(y_values[i], floor));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double denom = k * sxx - sx * sx;
    const double slope = (k * sxy - sx * sy) / denom;
    const double intercept = (sy - slope * sx) / k;

    PowerFit fit;
    fit.a = -slope;
    fit.c = std::exp(intercept);

    auto sse = [&](double c, double a) {
        double total = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double r = y_values[i] - c * std::pow(n_values[i], -a);
            total += r * r;
        }
        return total;
    };
    double c = fit.c, a = fit.a;
    double lambda = 1e-10;
    double current = sse(c, a);
    for (int iter = 0; iter < 100; ++iter) {
        Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
        Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
        for (std::size_t i = 0; i < k; ++i) {
            const double base = std::pow(n_values[i], -a);
            const double r = y_values[i] - c * base;
            const Eigen::Vector2d grad(-base, c * std::log(n_values[i]) * base);
            jtj += grad * grad.transpose();
            jtr += grad * r;
        }
        const Eigen::Vector2d step =
            (jtj + lambda * Eigen::Matrix2d::Identity()).ldlt().solve(-jtr);
        const double c_next = c + step[0];
        const double a_next = a + step[1];
        const double next = sse(c_next, a_next);
        if (next < current) {
            c = c_next;
            a = a_next;
            current = next;
            lambda = std::max(lambda * 0.5, 1e-12);
            if (step.norm() < 1e-14 * (1.0 + std::abs(c) + std::abs(a))) break;
        } else {
            lambda *= 10.0;
            if (lambda > 1e8) break;
        }
    }
    fit.c_refined = c;
    fit.a_refined = a;
    return fit;
}

struct WeightConvResult {
    std::vector<WeightConvPoint> points;               // (v, n0) grid in order
    std::vector<std::pair<double, PowerFit>> fits;     // one per v
};

/// Mean non-informative weight mass over the (v, n0) grid, with fitted decay
/// curves c_v * n^{-a_v}. Source sample sizes track n0 across the grid.
inline WeightConvResult weight_convergence_study(const ExperimentConfig& base,
                                                 std::span<const double> v_grid,
                                                 std::span<const int> n0_grid,
                                                 int threads = 1) {
    if (v_grid.empty() || n0_grid.empty())
        throw ConfigInvalidError("weight convergence study needs nonempty grids");
    WeightConvResult result;
    for (double v : v_grid) {
        std::vector<double> ns, ys;
        for (int n0 : n0_grid) {
            ExperimentConfig cfg = base;
            cfg.v = v;
            cfg.target_n = n0;
            cfg.source_n = n0;
            cfg.validate();
            const CriterionConfig criterion{cfg.v, cfg.resolved_phi()};

            std::vector<double> sums(cfg.replications,
                                     std::numeric_limits<double>::quiet_NaN());
            detail::parallel_for(cfg.replications, threads, [&](int r) {
                try {
                    GeneratedExperiment g =
                        gen_experiment(cfg, static_cast<std::uint64_t>(r));
                    std::vector<DomainSummary> summaries;
                    for (const auto& d : g.domains) summaries.push_back(ols_fit(d));
                    auto candidates =
                        build_candidates(summaries, contrast_norms(summaries));
                    FitResult fit = fit_trans_mai(g.domains[0], candidates, criterion);
                    sums[static_cast<std::size_t>(r)] =
                        noninformative_weight_sum(fit, candidates, cfg.informative_count);
                } catch (const Error&) {
                    // failed replication: recorded as NaN and excluded below
                }
            });
            WeightConvPoint point;
            point.v = v;
            point.n0 = n0;
            for (double s : sums) {
                if (std::isnan(s)) continue;
                point.mean_weight_sum += s;
                ++point.completed;
            }
            if (point.completed > 0) point.mean_weight_sum /= point.completed;
            result.points.push_back(point);
            ns.push_back(static_cast<double>(n0));
            ys.push_back(point.mean_weight_sum);
        }
        result.fits.emplace_back(v, fit_power_law(ns, ys));
    }
    return result;
}

struct NormalityStudyResult {
    std::vector<double> statistics;        // completed replicates, index order
    std::vector<std::uint64_t> replicates;  // original replicate index per statistic
    double mean = 0.0;
    double stddev = 0.0;
    std::array<int, 40> histogram{};  // equal bins on [-4, 4]
    int below_range = 0;
    int above_range = 0;
    int completed = 0;
    int failed = 0;
};

/// Replicates the standardized-statistic experiment: Trans-MAI fit plus the
/// normality statistic with psi = p^{-1/2} 1 and the true noise variances.
inline NormalityStudyResult normality_study(const ExperimentConfig& cfg, int threads = 1) {
    cfg.validate();
    const CriterionConfig criterion{cfg.v, cfg.resolved_phi()};
    const Vector psi =
        Vector::Constant(cfg.dimension, 1.0 / std::sqrt(static_cast<double>(cfg.dimension)));

    std::vector<double> stats(cfg.replications, std::numeric_limits<double>::quiet_NaN());
    detail::parallel_for(cfg.replications, threads, [&](int r) {
        try {
            GeneratedExperiment g = gen_experiment(cfg, static_cast<std::uint64_t>(r));
            std::vector<DomainSummary> summaries;
            for (const auto& d : g.domains) summaries.push_back(ols_fit(d));
            auto candidates = build_candidates(summaries, contrast_norms(summaries));
            FitResult fit = fit_trans_mai(g.domains[0], candidates, criterion);
            std::map<int, double> sigma2_true;
            for (int m = 0; m <= cfg.source_count; ++m)
                sigma2_true[m] = g.noise_sd[m] * g.noise_sd[m];
            NormalityReport report = normality_statistic(fit, candidates, summaries, psi,
                                                         sigma2_true, g.beta0, false);
            stats[static_cast<std::size_t>(r)] = report.statistic;
        } catch (const Error&) {
            // recorded as NaN; counted as failed below
        }
    });

    NormalityStudyResult result;
    for (std::size_t r = 0; r < stats.size(); ++r) {
        const double t = stats[r];
        if (std::isnan(t)) {
            ++result.failed;
            continue;
        }
        result.statistics.push_back(t);
        result.replicates.push_back(static_cast<std::uint64_t>(r));
        if (t < -4.0) {
            ++result.below_range;
        } else if (t >= 4.0) {
            ++result.above_range;
        } else {
            const int bin = static_cast<int>((t + 4.0) / 0.2);
            ++result.histogram[static_cast<std::size_t>(std::min(bin, 39))];
        }
    }
    result.completed = static_cast<int>(result.statistics.size());
    if (result.completed > 0) {
        result.mean = std::accumulate(result.statistics.begin(), result.statistics.end(), 0.0) /
                      result.completed;
        double ss = 0.0;
        for (double t : result.statistics) ss += (t - result.mean) * (t - result.mean);
        result.stddev =
            result.completed > 1 ? std::sqrt(ss / (result.completed - 1)) : 0.0;
    }
    return result;
}

/// Per-replication scaled prediction error: each row minus its best method.
inline std::vector<std::vector<double>> scaled_mspe(
    const std::vector<std::vector<double>>& mspe_rows) {
    std::vector<std::vector<double>> scaled = mspe_rows;
    for (auto& row : scaled) {
        if (row.empty()) continue;
        const double best = *std::min_element(row.begin(), row.end());
        for (double& value : row) value -= best;
    }
    return scaled;
}

}  // namespace transma::simlab
