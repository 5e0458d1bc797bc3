// Command-line front end: experiment simulation, real-data fitting with the
// 70/30 protocol, weight-convergence and normality studies, and scaled-MSPE
// post-processing. See README.md for config schemas.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "transma/csv.hpp"
#include "transma/simlab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace transma;

namespace {

struct RunManifest {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::string methods_arg = "ols-tar,ols-pool,trans-mai,trans-macs,trans-mac";
    std::string format = "csv";
    int threads = 0;
    bool summaries_only = false;
    std::string input_path;  // scaledmspe only

    std::vector<simlab::Method> methods() const {
        std::vector<simlab::Method> out;
        std::string token;
        std::stringstream ss(methods_arg);
        while (std::getline(ss, token, ',')) {
            if (token.empty()) continue;
            const auto m = simlab::method_from_name(token);
            if (!m) throw ConfigInvalidError("unknown method '" + token + "'");
            out.push_back(*m);
        }
        if (out.empty()) throw ConfigInvalidError("method list is empty");
        return out;
    }

    int resolved_threads() const {
        if (threads > 0) return threads;
        if (const char* env = std::getenv("TRANSMA_THREADS")) {
            const int n = std::atoi(env);
            if (n > 0) return n;
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw > 0 ? static_cast<int>(hw) : 1;
    }

    fs::path out_file(const std::string& name) const { return fs::path(out_dir) / name; }

    void prepare_out_dir() const {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) throw ConfigInvalidError("cannot create output directory '" + out_dir + "'");
    }

    void forbid_raw_methods(const std::vector<simlab::Method>& ms) const {
        if (!summaries_only) return;
        for (auto m : ms)
            if (m == simlab::Method::TransMacs || m == simlab::Method::TransMac)
                throw PrivacyViolationError(
                    std::string(simlab::method_name(m)) +
                    " requires raw rows of the pooled sufficient domain, but "
                    "--summaries-only is set");
    }
};

json load_config(const std::string& path) {
    if (path.empty()) throw ConfigInvalidError("--config is required for this command");
    std::ifstream in(path);
    if (!in) throw ConfigInvalidError("cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigInvalidError("config '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigInvalidError("config must be a JSON object");
    return j;
}

/// Tracks consumed keys so unknown keys can be rejected.
class ConfigReader {
  public:
    explicit ConfigReader(const json& j) : j_(j) {}

    template <typename T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        consumed_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigInvalidError(std::string("config key '") + key + "' has the wrong type");
        }
    }

    /// Scalar-or-array keys used for sweep axes.
    template <typename T>
    void get_axis(const char* key, std::vector<T>& out) {
        if (!j_.contains(key)) return;
        consumed_.insert(key);
        const json& value = j_.at(key);
        try {
            if (value.is_array())
                out = value.get<std::vector<T>>();
            else
                out = {value.get<T>()};
        } catch (const json::exception&) {
            throw ConfigInvalidError(std::string("config key '") + key +
                                     "' must be a number or an array of numbers");
        }
        if (out.empty())
            throw ConfigInvalidError(std::string("config key '") + key + "' must be nonempty");
    }

    void get_enum(const char* key, const std::vector<std::pair<std::string, int>>& table,
                  int& out) {
        if (!j_.contains(key)) return;
        consumed_.insert(key);
        const std::string value = j_.at(key).is_string() ? j_.at(key).get<std::string>() : "";
        for (const auto& [name, code] : table) {
            if (value == name) {
                out = code;
                return;
            }
        }
        throw ConfigInvalidError(std::string("config key '") + key + "' has invalid value '" +
                                 value + "'");
    }

    void reject_unknown() const {
        for (const auto& item : j_.items())
            if (!consumed_.count(item.key()))
                throw ConfigInvalidError("unknown config key '" + item.key() + "'");
    }

    const json& raw() const { return j_; }

  private:
    const json& j_;
    std::set<std::string> consumed_;
};

struct SimulateAxes {
    std::vector<double> h = {0.0};
    std::vector<int> a_size;
    std::vector<int> n0;
    std::vector<double> v;  // weightconv only
};

simlab::ExperimentConfig parse_experiment_config(const json& j, SimulateAxes& axes) {
    ConfigReader reader(j);
    int kind_code = static_cast<int>(simlab::ExperimentKind::Exp1);
    reader.get_enum("experiment",
                    {{"exp1", 0}, {"exp2", 1}, {"exp3", 2}, {"exp4", 3}, {"exp5", 4},
                     {"weightconv", 5}, {"normality", 6}},
                    kind_code);
    simlab::ExperimentConfig cfg =
        simlab::default_config(static_cast<simlab::ExperimentKind>(kind_code));

    reader.get("M", cfg.source_count);
    reader.get("p", cfg.dimension);
    reader.get("n_m", cfg.source_n);
    reader.get("B", cfg.replications);
    reader.get("seed", cfg.seed);
    reader.get("phi", cfg.phi);
    reader.get("n_test", cfg.test_n);
    reader.get("v_delta", cfg.sparse_support);
    reader.get("sigma_target", cfg.sigma_target);

    int delta_code = cfg.delta_mode == simlab::DeltaMode::Sparse ? 0 : 1;
    reader.get_enum("delta_mode", {{"sparse", 0}, {"dense", 1}}, delta_code);
    cfg.delta_mode = delta_code == 0 ? simlab::DeltaMode::Sparse : simlab::DeltaMode::Dense;

    const std::vector<std::pair<std::string, int>> cov_table = {
        {"identity", 0}, {"toeplitz", 1}, {"ar05", 2}};
    int cov_target = static_cast<int>(cfg.cov_target);
    int cov_sources = static_cast<int>(cfg.cov_sources);
    reader.get_enum("cov_target", cov_table, cov_target);
    reader.get_enum("cov_sources", cov_table, cov_sources);
    cfg.cov_target = static_cast<simlab::CovMode>(cov_target);
    cfg.cov_sources = static_cast<simlab::CovMode>(cov_sources);

    // sigma_sources: a number fixes the constant schedule, "linear" and
    // "geometric" select the ramps 0.2*m and 1.2^{m-3}
    if (j.contains("sigma_sources") && j.at("sigma_sources").is_string()) {
        int schedule = 0;
        reader.get_enum("sigma_sources", {{"linear", 1}, {"geometric", 2}}, schedule);
        cfg.source_noise = static_cast<simlab::NoiseSchedule>(schedule);
    } else {
        reader.get("sigma_sources", cfg.sigma_sources);
        if (j.contains("sigma_sources")) cfg.source_noise = simlab::NoiseSchedule::Constant;
    }

    axes.h = {cfg.contrast};
    axes.a_size = {cfg.informative_count};
    axes.n0 = {cfg.target_n};
    axes.v = {cfg.v};
    reader.get_axis("h", axes.h);
    reader.get_axis("A_size", axes.a_size);
    reader.get_axis("n0", axes.n0);
    reader.get_axis("v", axes.v);
    cfg.contrast = axes.h.front();
    cfg.informative_count = axes.a_size.front();
    cfg.target_n = axes.n0.front();
    cfg.v = axes.v.front();

    reader.reject_unknown();
    return cfg;
}

std::string experiment_label(simlab::ExperimentKind kind) {
    switch (kind) {
        case simlab::ExperimentKind::Exp1: return "exp1";
        case simlab::ExperimentKind::Exp2: return "exp2";
        case simlab::ExperimentKind::Exp3: return "exp3";
        case simlab::ExperimentKind::Exp4: return "exp4";
        case simlab::ExperimentKind::Exp5: return "exp5";
        case simlab::ExperimentKind::WeightConv: return "weightconv";
        case simlab::ExperimentKind::Normality: return "normality";
    }
    return "?";
}

std::string fmt(double v) { return io::format_double(v); }

int run_simulate(const RunManifest& manifest) {
    SimulateAxes axes;
    simlab::ExperimentConfig base = parse_experiment_config(load_config(manifest.config_path), axes);
    if (axes.v.size() > 1)
        throw ConfigInvalidError("simulate runs a single v; use weightconv for v sweeps");
    if (manifest.seed) base.seed = *manifest.seed;
    const auto methods = manifest.methods();
    manifest.forbid_raw_methods(methods);
    manifest.prepare_out_dir();
    const int threads = manifest.resolved_threads();
    const std::string label = experiment_label(base.experiment);

    struct PointResult {
        double h;
        int a_size;
        int n0;
        simlab::ReplicationSet set;
    };
    std::vector<PointResult> points;
    for (double h : axes.h) {
        for (int a_size : axes.a_size) {
            for (int n0 : axes.n0) {
                simlab::ExperimentConfig cfg = base;
                cfg.contrast = h;
                cfg.informative_count = a_size;
                cfg.target_n = n0;
                points.push_back({h, a_size, n0, simlab::run_replications(cfg, methods, threads)});
            }
        }
    }

    const bool as_json = manifest.format == "json";
    int total_failed = 0;
    if (as_json) {
        json out = json::array();
        for (const auto& pt : points) {
            for (const auto& s : pt.set.summary) {
                out.push_back({{"experiment", label},
                               {"h", pt.h},
                               {"A_size", pt.a_size},
                               {"n0", pt.n0},
                               {"method", simlab::method_name(s.method)},
                               {"mean_mse", s.mean_mse},
                               {"mse_lo", s.mse_lo},
                               {"mse_hi", s.mse_hi},
                               {"mean_mspe", s.mean_mspe},
                               {"mspe_lo", s.mspe_lo},
                               {"mspe_hi", s.mspe_hi},
                               {"completed", s.completed}});
            }
            total_failed += pt.set.failed;
        }
        std::ofstream f(manifest.out_file("summary.json"), std::ios::binary);
        f << out.dump(2) << "\n";
    } else {
        io::CsvWriter summary(manifest.out_file("summary.csv").string(),
                              {"experiment", "h", "A_size", "n0", "method", "mean_mse",
                               "mse_lo", "mse_hi", "mean_mspe", "mspe_lo", "mspe_hi"});
        for (const auto& pt : points) {
            for (const auto& s : pt.set.summary)
                summary.write_row({label, fmt(pt.h), std::to_string(pt.a_size),
                                   std::to_string(pt.n0), simlab::method_name(s.method),
                                   fmt(s.mean_mse), fmt(s.mse_lo), fmt(s.mse_hi),
                                   fmt(s.mean_mspe), fmt(s.mspe_lo), fmt(s.mspe_hi)});
            total_failed += pt.set.failed;
        }
    }

    // per-replicate weights for the averaging methods, blocks in config-point order
    const int weight_len = base.source_count + 1;
    std::vector<std::string> weight_cols = {"replicate", "method"};
    for (int m = 0; m < weight_len; ++m) weight_cols.push_back("w_" + std::to_string(m));
    weight_cols.push_back("m_s_hat");
    bool any_weights = false;
    for (const auto& pt : points)
        for (const auto& row : pt.set.rows)
            for (const auto& mm : row.per_method) any_weights = any_weights || mm.weights.has_value();
    if (any_weights && as_json) {
        json out = json::array();
        for (const auto& pt : points) {
            for (const auto& row : pt.set.rows) {
                for (std::size_t i = 0; i < row.per_method.size(); ++i) {
                    const auto& mm = row.per_method[i];
                    if (!mm.ok || !mm.weights) continue;
                    std::vector<double> w(mm.weights->data(), mm.weights->data() + weight_len);
                    out.push_back({{"replicate", row.replicate},
                                   {"method", simlab::method_name(pt.set.methods[i])},
                                   {"weights", w},
                                   {"m_s_hat", *mm.m_s_hat}});
                }
            }
        }
        std::ofstream f(manifest.out_file("weights.json"), std::ios::binary);
        f << out.dump(2) << "\n";
    } else if (any_weights) {
        io::CsvWriter weights(manifest.out_file("weights.csv").string(), weight_cols);
        for (const auto& pt : points) {
            for (const auto& row : pt.set.rows) {
                for (std::size_t i = 0; i < row.per_method.size(); ++i) {
                    const auto& mm = row.per_method[i];
                    if (!mm.ok || !mm.weights) continue;
                    std::vector<std::string> cells = {std::to_string(row.replicate),
                                                      simlab::method_name(pt.set.methods[i])};
                    for (int m = 0; m < weight_len; ++m) cells.push_back(fmt((*mm.weights)[m]));
                    cells.push_back(std::to_string(*mm.m_s_hat));
                    weights.write_row(cells);
                }
            }
        }
    }

    if (total_failed > 0) {
        io::CsvWriter failures(manifest.out_file("failures.csv").string(),
                               {"experiment", "h", "A_size", "n0", "method", "failed"});
        for (const auto& pt : points) {
            for (std::size_t i = 0; i < pt.set.methods.size(); ++i) {
                int failed = 0;
                for (const auto& row : pt.set.rows)
                    if (!row.per_method[i].ok) ++failed;
                if (failed > 0)
                    failures.write_row({label, fmt(pt.h), std::to_string(pt.a_size),
                                        std::to_string(pt.n0),
                                        simlab::method_name(pt.set.methods[i]),
                                        std::to_string(failed)});
            }
        }
        std::cerr << "warning: " << total_failed << " replication(s) had failures; see "
                  << manifest.out_file("failures.csv").string() << "\n";
    }
    return 0;
}

int run_weightconv(const RunManifest& manifest) {
    SimulateAxes axes;
    simlab::ExperimentConfig base = parse_experiment_config(load_config(manifest.config_path), axes);
    if (manifest.seed) base.seed = *manifest.seed;
    if (axes.h.size() > 1 || axes.a_size.size() > 1)
        throw ConfigInvalidError("weightconv sweeps only v and n0");
    manifest.prepare_out_dir();

    simlab::WeightConvResult result = simlab::weight_convergence_study(
        base, axes.v, axes.n0, manifest.resolved_threads());

    if (manifest.format == "json") {
        json out;
        out["points"] = json::array();
        for (const auto& pt : result.points)
            out["points"].push_back({{"v", pt.v},
                                     {"n0", pt.n0},
                                     {"mean_noninformative_weight", pt.mean_weight_sum},
                                     {"completed", pt.completed}});
        out["fits"] = json::array();
        for (const auto& [v, fit] : result.fits)
            out["fits"].push_back({{"v", v},
                                   {"c", fit.c},
                                   {"a", fit.a},
                                   {"c_refined", fit.c_refined},
                                   {"a_refined", fit.a_refined}});
        std::ofstream f(manifest.out_file("weightconv.json"), std::ios::binary);
        f << out.dump(2) << "\n";
        return 0;
    }
    io::CsvWriter points(manifest.out_file("weightconv.csv").string(),
                         {"v", "n0", "mean_noninformative_weight", "completed"});
    for (const auto& pt : result.points)
        points.write_row({fmt(pt.v), std::to_string(pt.n0), fmt(pt.mean_weight_sum),
                          std::to_string(pt.completed)});
    io::CsvWriter fits(manifest.out_file("weightconv_fit.csv").string(),
                       {"v", "c", "a", "c_refined", "a_refined"});
    for (const auto& [v, fit] : result.fits)
        fits.write_row({fmt(v), fmt(fit.c), fmt(fit.a), fmt(fit.c_refined),
                        fmt(fit.a_refined)});
    return 0;
}

int run_normality(const RunManifest& manifest) {
    SimulateAxes axes;
    simlab::ExperimentConfig cfg = parse_experiment_config(load_config(manifest.config_path), axes);
    if (axes.v.size() > 1 || axes.h.size() > 1 || axes.a_size.size() > 1 || axes.n0.size() > 1)
        throw ConfigInvalidError("normality takes a single design point, not sweep arrays");
    if (manifest.seed) cfg.seed = *manifest.seed;
    manifest.prepare_out_dir();

    simlab::NormalityStudyResult result =
        simlab::normality_study(cfg, manifest.resolved_threads());

    if (manifest.format == "json") {
        json out;
        out["mean"] = result.mean;
        out["stddev"] = result.stddev;
        out["completed"] = result.completed;
        out["failed"] = result.failed;
        out["histogram"] = result.histogram;
        out["replicates"] = result.replicates;
        out["statistics"] = result.statistics;
        std::ofstream f(manifest.out_file("normality.json"), std::ios::binary);
        f << out.dump(2) << "\n";
        return 0;
    }
    io::CsvWriter stats(manifest.out_file("normality.csv").string(), {"replicate", "T"});
    for (std::size_t i = 0; i < result.statistics.size(); ++i)
        stats.write_row({std::to_string(result.replicates[i]), fmt(result.statistics[i])});
    io::CsvWriter summary(manifest.out_file("normality_summary.csv").string(),
                          {"mean", "stddev", "completed", "failed", "below_range",
                           "above_range"});
    summary.write_row({fmt(result.mean), fmt(result.stddev), std::to_string(result.completed),
                       std::to_string(result.failed), std::to_string(result.below_range),
                       std::to_string(result.above_range)});
    io::CsvWriter hist(manifest.out_file("normality_hist.csv").string(),
                       {"bin_lo", "bin_hi", "count"});
    for (int b = 0; b < 40; ++b)
        hist.write_row({fmt(-4.0 + 0.2 * b), fmt(-4.0 + 0.2 * (b + 1)),
                        std::to_string(result.histogram[static_cast<std::size_t>(b)])});
    return 0;
}

struct FitConfig {
    std::string target;
    std::vector<std::string> sources;
    int repeats = 500;
    double train_fraction = 0.7;
    bool standardize = false;
    double v = 0.5;
    double phi = 0.0;  // <= 0: log of the training sample count
    std::uint64_t seed = 20260801ull;
};

FitConfig parse_fit_config(const json& j) {
    ConfigReader reader(j);
    FitConfig cfg;
    reader.get("target", cfg.target);
    reader.get("sources", cfg.sources);
    reader.get("repeats", cfg.repeats);
    reader.get("train_fraction", cfg.train_fraction);
    reader.get("standardize", cfg.standardize);
    reader.get("v", cfg.v);
    reader.get("phi", cfg.phi);
    reader.get("seed", cfg.seed);
    reader.reject_unknown();
    if (cfg.target.empty()) throw ConfigInvalidError("fit config requires 'target'");
    if (cfg.sources.empty()) throw ConfigInvalidError("fit config requires 'sources'");
    if (cfg.repeats < 1) throw ConfigInvalidError("repeats must be positive");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
        throw ConfigInvalidError("train_fraction must lie in (0,1)");
    return cfg;
}

int run_fit(const RunManifest& manifest) {
    const FitConfig cfg = parse_fit_config(load_config(manifest.config_path));
    const auto methods = manifest.methods();
    manifest.forbid_raw_methods(methods);
    manifest.prepare_out_dir();

    const std::uint64_t seed = manifest.seed.value_or(cfg.seed);
    DomainData target = io::ingest_csv(cfg.target, 0);
    std::vector<DomainData> sources;
    for (std::size_t m = 0; m < cfg.sources.size(); ++m) {
        sources.push_back(io::ingest_csv(cfg.sources[m], static_cast<int>(m) + 1));
        if (sources.back().p() != target.p())
            throw DimensionMismatchError("source '" + cfg.sources[m] +
                                         "' has a different covariate dimension");
    }

    const Index n0 = target.n();
    const auto n_train = static_cast<Index>(cfg.train_fraction * static_cast<double>(n0));
    if (n_train < 1 || n_train >= n0)
        throw ConfigInvalidError("train/test split leaves an empty part");

    std::vector<std::vector<double>> mspe(
        static_cast<std::size_t>(cfg.repeats),
        std::vector<double>(methods.size(), std::numeric_limits<double>::quiet_NaN()));
    std::vector<int> failures_per_method(methods.size(), 0);
    std::mutex failure_mutex;

    simlab::detail::parallel_for(cfg.repeats, manifest.resolved_threads(), [&](int b) {
        rng::Stream split(rng::StreamKey(seed)
                              .child(static_cast<std::uint64_t>(b))
                              .child(simlab::stream_purpose::kSplit));
        std::vector<Index> perm(static_cast<std::size_t>(n0));
        std::iota(perm.begin(), perm.end(), 0);
        for (Index i = 0; i < n0 - 1; ++i) {
            const auto j = i + static_cast<Index>(split.below(static_cast<std::uint64_t>(n0 - i)));
            std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
        }

        DomainData train{0, Matrix(n_train, target.p()), Vector(n_train)};
        Matrix x_test(n0 - n_train, target.p());
        Vector y_test(n0 - n_train);
        for (Index i = 0; i < n_train; ++i) {
            train.X.row(i) = target.X.row(perm[static_cast<std::size_t>(i)]);
            train.y[i] = target.y[perm[static_cast<std::size_t>(i)]];
        }
        for (Index i = n_train; i < n0; ++i) {
            x_test.row(i - n_train) = target.X.row(perm[static_cast<std::size_t>(i)]);
            y_test[i - n_train] = target.y[perm[static_cast<std::size_t>(i)]];
        }

        std::vector<DomainData> domains;
        domains.push_back(std::move(train));
        for (const auto& s : sources) domains.push_back(s);

        if (cfg.standardize) {
            // z-score with the training-target statistics, applied everywhere
            const Vector mean = domains[0].X.colwise().mean();
            Vector scale(target.p());
            for (Index j = 0; j < target.p(); ++j) {
                const double var =
                    (domains[0].X.col(j).array() - mean[j]).square().sum() /
                    static_cast<double>(n_train);
                scale[j] = var > 0.0 ? std::sqrt(var) : 1.0;
            }
            for (auto& d : domains)
                d.X = (d.X.rowwise() - mean.transpose()).array().rowwise() /
                      scale.transpose().array();
            x_test = (x_test.rowwise() - mean.transpose()).array().rowwise() /
                     scale.transpose().array();
        }

        try {
            std::vector<DomainSummary> summaries;
            for (const auto& d : domains) summaries.push_back(ols_fit(d));
            auto candidates = build_candidates(summaries, contrast_norms(summaries));
            std::map<int, double> sigma2_plugin;
            for (const auto& s : summaries) sigma2_plugin[s.id] = s.sigma2;
            const double phi = cfg.phi > 0.0 ? cfg.phi : default_phi(n_train);
            const CriterionConfig criterion{cfg.v, phi};
            std::optional<FitResult> mai;

            for (std::size_t i = 0; i < methods.size(); ++i) {
                try {
                    Vector beta_hat;
                    switch (methods[i]) {
                        case simlab::Method::OlsTar:
                            beta_hat = summaries[0].beta;
                            break;
                        case simlab::Method::OlsPool:
                            beta_hat = simlab::baseline_ols_pool(domains);
                            break;
                        case simlab::Method::TransMai:
                            if (!mai) mai = fit_trans_mai(domains[0], candidates, criterion);
                            beta_hat = mai->beta;
                            break;
                        case simlab::Method::TransMacs:
                        case simlab::Method::TransMac: {
                            if (!mai) mai = fit_trans_mai(domains[0], candidates, criterion);
                            FitResult fit =
                                methods[i] == simlab::Method::TransMacs
                                    ? fit_trans_macs(domains, candidates, mai->selected_index,
                                                     sigma2_plugin)
                                    : fit_trans_mac(domains, candidates, mai->selected_index,
                                                    sigma2_plugin);
                            beta_hat = fit.beta;
                            break;
                        }
                    }
                    mspe[static_cast<std::size_t>(b)][i] =
                        (y_test - x_test * beta_hat).squaredNorm() /
                        static_cast<double>(y_test.size());
                } catch (const Error&) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    ++failures_per_method[i];
                }
            }
        } catch (const Error&) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            for (auto& f : failures_per_method) ++f;
        }
    });

    const auto scaled = simlab::scaled_mspe(mspe);
    const bool as_json = manifest.format == "json";
    if (as_json) {
        json out;
        out["methods"] = json::array();
        for (auto m : methods) out["methods"].push_back(simlab::method_name(m));
        out["mspe"] = mspe;
        out["scaled_mspe"] = scaled;
        std::ofstream f(manifest.out_file("fit.json"), std::ios::binary);
        f << out.dump(2) << "\n";
        return 0;
    }

    io::CsvWriter raw(manifest.out_file("mspe.csv").string(), {"replicate", "method", "mspe"});
    io::CsvWriter scaled_out(manifest.out_file("scaled_mspe.csv").string(),
                             {"replicate", "method", "scaled_mspe"});
    for (int b = 0; b < cfg.repeats; ++b) {
        for (std::size_t i = 0; i < methods.size(); ++i) {
            const double value = mspe[static_cast<std::size_t>(b)][i];
            if (std::isnan(value)) continue;
            raw.write_row({std::to_string(b), simlab::method_name(methods[i]), fmt(value)});
            scaled_out.write_row({std::to_string(b), simlab::method_name(methods[i]),
                                  fmt(scaled[static_cast<std::size_t>(b)][i])});
        }
    }
    io::CsvWriter summary(manifest.out_file("fit_summary.csv").string(),
                          {"method", "completed", "mean_mspe", "mean_scaled_mspe",
                           "median_scaled_mspe", "scaled_lo", "scaled_hi"});
    for (std::size_t i = 0; i < methods.size(); ++i) {
        std::vector<double> raw_values, scaled_values;
        for (int b = 0; b < cfg.repeats; ++b) {
            const double value = mspe[static_cast<std::size_t>(b)][i];
            if (std::isnan(value)) continue;
            raw_values.push_back(value);
            scaled_values.push_back(scaled[static_cast<std::size_t>(b)][i]);
        }
        const auto mean = [](const std::vector<double>& xs) {
            return xs.empty() ? 0.0
                              : std::accumulate(xs.begin(), xs.end(), 0.0) /
                                    static_cast<double>(xs.size());
        };
        summary.write_row({simlab::method_name(methods[i]),
                           std::to_string(raw_values.size()), fmt(mean(raw_values)),
                           fmt(mean(scaled_values)),
                           fmt(simlab::detail::percentile(scaled_values, 0.5)),
                           fmt(simlab::detail::percentile(scaled_values, 0.025)),
                           fmt(simlab::detail::percentile(scaled_values, 0.975))});
    }
    return 0;
}

int run_scaledmspe(const RunManifest& manifest) {
    if (manifest.input_path.empty())
        throw ConfigInvalidError("scaledmspe requires --input pointing at an mspe.csv table");
    std::ifstream in(manifest.input_path);
    if (!in) throw ConfigInvalidError("cannot open '" + manifest.input_path + "'");
    manifest.prepare_out_dir();

    std::string line;
    if (!std::getline(in, line) || io::detail::split_line(line) !=
                                       std::vector<std::string>{"replicate", "method", "mspe"})
        throw HeaderMismatchError("expected header 'replicate,method,mspe'");

    struct Row {
        std::string replicate;
        std::string method;
        double mspe;
    };
    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto cells = io::detail::split_line(line);
        if (cells.size() != 3) throw ParseError("expected 3 cells", line_no, cells.size());
        rows.push_back({cells[0], cells[1], io::detail::parse_cell(cells[2], line_no, 3)});
    }

    std::map<std::string, double> best;
    for (const auto& r : rows) {
        auto [it, inserted] = best.emplace(r.replicate, r.mspe);
        if (!inserted) it->second = std::min(it->second, r.mspe);
    }
    io::CsvWriter out(manifest.out_file("scaled_mspe.csv").string(),
                      {"replicate", "method", "scaled_mspe"});
    for (const auto& r : rows)
        out.write_row({r.replicate, r.method, fmt(r.mspe - best.at(r.replicate))});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-source transfer learning for linear regression via model averaging"};
    app.require_subcommand(1);

    RunManifest manifest;
    const auto add_common = [&](CLI::App* cmd, bool with_methods) {
        cmd->add_option("--config", manifest.config_path, "JSON config file");
        cmd->add_option("--out", manifest.out_dir, "output directory");
        cmd->add_option("--seed", manifest.seed, "seed override");
        if (with_methods)
            cmd->add_option("--methods", manifest.methods_arg,
                            "comma-separated subset of ols-tar,ols-pool,trans-mai,trans-macs,trans-mac");
        cmd->add_option("--format", manifest.format, "csv or json")
            ->check(CLI::IsMember({"csv", "json"}));
        cmd->add_option("--threads", manifest.threads,
                        "worker threads (default: TRANSMA_THREADS or hardware)");
        cmd->add_flag("--summaries-only", manifest.summaries_only,
                      "forbid methods that need raw rows beyond the target");
    };

    CLI::App* simulate = app.add_subcommand("simulate", "run a simulation experiment sweep");
    add_common(simulate, true);
    CLI::App* fit = app.add_subcommand("fit", "fit CSV domains with repeated 70/30 splits");
    add_common(fit, true);
    CLI::App* weightconv =
        app.add_subcommand("weightconv", "weight-convergence study over (v, n0)");
    add_common(weightconv, false);
    CLI::App* normality = app.add_subcommand("normality", "normality study of the statistic");
    add_common(normality, false);
    CLI::App* scaledmspe =
        app.add_subcommand("scaledmspe", "scale an mspe.csv table by the per-replicate best");
    add_common(scaledmspe, false);
    scaledmspe->add_option("--input", manifest.input_path, "mspe.csv produced by fit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (simulate->parsed()) return run_simulate(manifest);
        if (fit->parsed()) return run_fit(manifest);
        if (weightconv->parsed()) return run_weightconv(manifest);
        if (normality->parsed()) return run_normality(manifest);
        if (scaledmspe->parsed()) return run_scaledmspe(manifest);
        return 2;
    } catch (const ConfigInvalidError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const HeaderMismatchError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UnknownIdError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingTargetError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionMismatchError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
