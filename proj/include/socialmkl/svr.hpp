#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace socialmkl {

struct SvrConfig {
    double C = 1.0;             ///< box bound on each dual variable
    double epsilon = 0.5;       ///< half-width of the insensitive tube
    double tolerance = 1e-6;    ///< stop when the maximal KKT violation drops below this
    std::size_t max_passes = 2000;  ///< one pass = 2N working-set iterations
    std::size_t stall_passes = 5;   ///< give up after this many passes without progress
    bool clamp = true;          ///< clamp predictions to the rating scale
    bool check_psd = true;      ///< eigenvalue check of the Gram matrix before training

    void validate() const;
};

/// Trained epsilon-SVR in dual form.
struct SvrModel {
    std::vector<double> alpha_plus;   ///< a_n^+, complementary to alpha_minus
    std::vector<double> alpha_minus;  ///< a_n^-
    std::vector<double> beta;         ///< a_n^+ - a_n^-
    double bias = 0.0;
    std::vector<std::size_t> support;  ///< positions with beta != 0
    SvrConfig config;
    bool converged = false;
    std::size_t iterations = 0;
    double kkt_violation = 0.0;

    std::size_t size() const noexcept { return beta.size(); }
};

/// Pairwise coordinate ascent (SMO with second-order working-set selection)
/// on the epsilon-SVR dual over a precomputed Gram matrix.
///
/// `warm_start`, when it has the right size, seeds the dual variables; it must
/// be feasible for `config.C`.
SvrModel train_svr(const Eigen::MatrixXd& gram, std::span<const double> y, const SvrConfig& config,
                   const SvrModel* warm_start = nullptr);

/// sum_n beta_n k_row[n] + b, clamped to [1, 10] when `clamp`.
double predict_svr(const SvrModel& model, std::span<const double> k_row, bool clamp);
inline double predict_svr(const SvrModel& model, std::span<const double> k_row) {
    return predict_svr(model, k_row, model.config.clamp);
}

/// F = beta^T y - eps * sum(a+ + a-) - 1/2 beta^T K beta at the stored duals.
double dual_objective(const SvrModel& model, const Eigen::MatrixXd& gram, std::span<const double> y,
                      double epsilon);

/// {"train_user_ids", "beta", "bias", "config", "converged", ...}
nlohmann::json svr_model_to_json(const SvrModel& model,
                                 const std::vector<std::string>& train_user_ids);

}  // namespace socialmkl
