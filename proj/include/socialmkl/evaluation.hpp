#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "socialmkl/baselines.hpp"
#include "socialmkl/dataset.hpp"
#include "socialmkl/kernels.hpp"
#include "socialmkl/nlmkl.hpp"
#include "socialmkl/svr.hpp"

namespace socialmkl {

enum class MethodKind {
    NeighborInfluence,       ///< NI
    MultiLevelInfluence,     ///< MNI, normalisation from BaselineConfig
    MultiLevelNormalized,    ///< MNI-NORM, always normalised
    KernelCf,                ///< CF-S_*
    PearsonBiasCf,           ///< UCF-S_*Pearson
    SingleKernelSvr,         ///< K_*
    Combined,                ///< NLMKL
};

struct MethodSpec {
    std::string name;
    MethodKind kind = MethodKind::NeighborInfluence;
    std::vector<KernelLabel> kernels;  ///< similarity kernels (summed) or the SVR kernel
    bool average = false;              ///< CF-S_AVG: mean of the seven non-constant kernels
};

/// Every accepted method name in report order.
const std::vector<std::string>& registered_methods();
std::optional<MethodSpec> parse_method(const std::string& name);

/// Inner-split grid search run inside each training fold.
struct TuningConfig {
    bool enabled = true;
    double holdout_fraction = 0.2;
    std::vector<double> alpha_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<double> sigma_scales = {0.5, 1.0, 2.0};
    std::vector<double> c_grid = {0.1, 1.0, 10.0};
    std::vector<double> epsilon_grid = {0.1, 0.5};
    std::vector<double> mni_alpha_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::size_t mni_max_level = 6;
    std::size_t max_items = 0;  ///< 0: tune on every item

    void validate() const;
};

struct EvaluationConfig {
    std::vector<std::string> methods;
    std::size_t folds = 10;
    std::size_t repetitions = 10;
    std::uint64_t seed = 1;
    KernelConfig kernel;
    SvrConfig svr;
    MklConfig mkl;
    BaselineConfig baseline;
    TuningConfig tuning;
    std::size_t min_train = 2;    ///< fewer training raters: fallback
    bool clamp = true;            ///< score the clamped predictions
    bool strict_leakage = false;  ///< hide all test-user ratings from every method
    bool shared_eta = false;      ///< one eta per fold across items
    bool pooled_rmse = true;      ///< false: mean of per-fold RMSEs
    std::size_t threads = 1;
    std::optional<std::filesystem::path> kernel_cache;  ///< reuse graph/profile kernels from disk

    void validate() const;
};

struct Residual {
    std::uint32_t user = 0;
    std::uint32_t item = 0;
    std::uint32_t fold = 0;
    double prediction = 0.0;  ///< clamped to the rating scale
    double raw = 0.0;         ///< before clamping
    double actual = 0.0;
    bool from_fallback = false;
};

struct MethodResult {
    std::string name;
    std::vector<double> rmse_per_rep;            ///< scored as configured (clamped or not)
    std::vector<double> rmse_clamped_per_rep;
    std::vector<double> rmse_unclamped_per_rep;
    std::size_t pairs = 0;
    std::size_t predicted = 0;  ///< pairs predicted without fallback
    double seconds = 0.0;
    std::vector<std::vector<Residual>> residuals;  ///< per repetition

    double rmse_mean() const;
    double rmse_std() const;  ///< sample standard deviation (0 for one repetition)
    double coverage() const;
};

struct BinRow {
    FriendBin bin = FriendBin::Zero;
    std::size_t users = 0;
    std::size_t pairs = 0;
    std::map<std::string, double> rmse;  ///< per method; absent when the bin is empty
};

struct EvaluationReport {
    nlohmann::json config;
    std::vector<MethodResult> methods;
    std::array<double, kKernelCount> eta_average{};
    std::size_t eta_fits = 0;  ///< NLMKL fits behind eta_average
    std::vector<BinRow> bins;  ///< Zero first, then the five reported bins
    std::size_t repetitions_done = 0;

    const MethodResult* find(const std::string& name) const;
};

/// sqrt(mean((p - a)^2)) over the pairs.
double rmse(std::span<const double> predictions, std::span<const double> actuals);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    std::size_t df = 0;
};

/// Paired two-sided t test. Zero variance of the differences gives t = 0,
/// p = 1 when they are all zero and t = +-inf, p = 0 otherwise.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// RMSE per friend-count bin (pooled over repetitions) for every method,
/// from the clamped or the raw predictions.
std::vector<BinRow> friend_bin_table(const std::vector<MethodResult>& methods,
                                     const SocialGraph& graph, bool clamped = true);

using ProgressCallback = std::function<void(const EvaluationReport&)>;

/// Repeated k-fold cross-validation over users. Unknown method names raise
/// ParameterError before any work. `on_repetition` sees the report after
/// each finished repetition.
EvaluationReport run_cross_validation(const Dataset& dataset, const EvaluationConfig& config,
                                      const ProgressCallback& on_repetition = {});

nlohmann::json report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const nlohmann::json& j);

/// report.json, table3.csv, table4.csv, fig4.csv.
void export_report(const EvaluationReport& report, const std::filesystem::path& out_dir);

/// Table 3 style lines sorted by mean RMSE.
std::string format_summary(const EvaluationReport& report);

/// Runs fn(0..n-1) on up to `threads` workers; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace socialmkl
