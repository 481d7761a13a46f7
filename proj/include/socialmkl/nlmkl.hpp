#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "socialmkl/kernels.hpp"
#include "socialmkl/svr.hpp"

namespace socialmkl {

struct MklConfig {
    std::vector<double> eta0;    ///< ball centre; empty means 1/sqrt(P+1) everywhere
    double lambda = 1.0;         ///< ball radius
    double gamma = 0.1;          ///< step size of the first outer iteration
    double step_growth = 2.0;    ///< next step = growth * last accepted step when no halving was needed (1: fixed gamma)
    std::size_t max_iters = 20;  ///< T
    double tolerance = 1e-5;
    int degree = 2;              ///< 1 (weighted sum) or 2 (squared weighted sum)
    std::size_t max_halvings = 10;
    bool backtracking = true;    ///< reject steps that increase F

    void validate(std::size_t n_kernels) const;
    /// eta0, or the uniform unit-norm default.
    std::vector<double> center(std::size_t n_kernels) const;
};

struct MklState {
    std::vector<double> eta;
    std::vector<double> objective_trace;         ///< F at the iterate, starting with eta0
    std::vector<std::vector<double>> eta_trace;  ///< eta per trace entry
    bool converged = false;
    std::size_t iterations = 0;                  ///< accepted outer steps
};

/// d = 1: sum_m eta_m K_m. d = 2: (sum_m eta_m K_m) squared entrywise, which
/// equals sum_{m,h} eta_m eta_h K_m o K_h. Blocks may be rectangular.
Eigen::MatrixXd combine_kernels(std::span<const Eigen::MatrixXd> kernels,
                                std::span<const double> eta, int degree = 2);

/// dF/deta_k at the duals (beta = a+ - a-):
///   d = 2: -beta^T (S o K_k) beta with S = sum_h eta_h K_h
///   d = 1: -1/2 beta^T K_k beta
double mkl_gradient(std::span<const double> alpha_plus, std::span<const double> alpha_minus,
                    std::span<const Eigen::MatrixXd> kernels, std::span<const double> eta,
                    std::size_t k, int degree = 2);

/// All components at once.
std::vector<double> mkl_gradient(std::span<const double> beta,
                                 std::span<const Eigen::MatrixXd> kernels,
                                 std::span<const double> eta, int degree = 2);

/// Euclidean projection onto {v >= 0, ||v - eta0|| <= lambda} (eta0 >= 0).
std::vector<double> project_onto_M(std::span<const double> eta, std::span<const double> eta0,
                                   double lambda);

/// One per-item training problem: base kernels over its training users and
/// the targets.
struct MklTask {
    std::vector<Eigen::MatrixXd> kernels;  ///< ONES first
    std::vector<double> y;
};

struct MklFit {
    MklState state;
    std::vector<SvrModel> models;  ///< one per task, trained at the final eta
};

/// Min-max loop over one or more tasks sharing a single eta: the objective
/// and its gradient are summed over tasks.
MklFit fit_nlmkl_shared(std::span<const MklTask> tasks, const SvrConfig& svr_config,
                        const MklConfig& mkl_config);

/// Single-task loop. `kernels` are already restricted to the training users.
std::pair<MklState, SvrModel> fit_nlmkl(std::span<const Eigen::MatrixXd> kernels,
                                        std::span<const double> y, const SvrConfig& svr_config,
                                        const MklConfig& mkl_config);

/// Same, restricting full-population kernels to `train_users` first.
std::pair<MklState, SvrModel> fit_nlmkl(std::span<const KernelMatrix> kernels,
                                        std::span<const std::size_t> train_users,
                                        std::span<const double> y, const SvrConfig& svr_config,
                                        const MklConfig& mkl_config);

/// CSV with header iteration,F,eta_0,...,eta_{P}.
std::string eta_trace_csv(const MklState& state);
void write_eta_trace(const MklState& state, const std::filesystem::path& path);

}  // namespace socialmkl
