#include "socialmkl/nlmkl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "socialmkl/error.hpp"

namespace socialmkl {

void MklConfig::validate(std::size_t n_kernels) const {
    if (!(lambda > 0.0)) throw ParameterError("MKL Lambda must be > 0");
    if (!(gamma > 0.0)) throw ParameterError("MKL gamma must be > 0");
    if (!(step_growth >= 1.0)) throw ParameterError("MKL step_growth must be >= 1");
    if (!(tolerance > 0.0)) throw ParameterError("MKL tolerance must be > 0");
    if (degree != 1 && degree != 2) throw ParameterError("MKL degree must be 1 or 2");
    if (!eta0.empty()) {
        if (eta0.size() != n_kernels) {
            throw ParameterError("eta0 has " + std::to_string(eta0.size()) + " entries for " +
                                 std::to_string(n_kernels) + " kernels");
        }
        for (double v : eta0) {
            if (!(v >= 0.0)) throw ParameterError("eta0 entries must be >= 0");
        }
    }
}

std::vector<double> MklConfig::center(std::size_t n_kernels) const {
    if (!eta0.empty()) return eta0;
    return std::vector<double>(n_kernels, 1.0 / std::sqrt(static_cast<double>(n_kernels)));
}

namespace {

void check_shapes(std::span<const Eigen::MatrixXd> kernels, std::size_t n_eta) {
    if (kernels.empty()) throw ParameterError("no kernels to combine");
    if (kernels.size() != n_eta) {
        throw ParameterError("eta has " + std::to_string(n_eta) + " entries for " +
                             std::to_string(kernels.size()) + " kernels");
    }
    const auto rows = kernels.front().rows();
    const auto cols = kernels.front().cols();
    for (const auto& k : kernels) {
        if (k.rows() != rows || k.cols() != cols) throw ParameterError("kernel dimensions differ");
    }
}

Eigen::MatrixXd weighted_sum(std::span<const Eigen::MatrixXd> kernels, std::span<const double> eta) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(kernels.front().rows(), kernels.front().cols());
    for (std::size_t m = 0; m < kernels.size(); ++m) {
        if (eta[m] != 0.0) s += eta[m] * kernels[m];
    }
    return s;
}

double norm_diff(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

}  // namespace

Eigen::MatrixXd combine_kernels(std::span<const Eigen::MatrixXd> kernels,
                                std::span<const double> eta, int degree) {
    if (degree != 1 && degree != 2) throw ParameterError("degree must be 1 or 2");
    check_shapes(kernels, eta.size());
    Eigen::MatrixXd s = weighted_sum(kernels, eta);
    if (degree == 2) s = s.array().square().matrix();
    return s;
}

std::vector<double> mkl_gradient(std::span<const double> beta,
                                 std::span<const Eigen::MatrixXd> kernels,
                                 std::span<const double> eta, int degree) {
    if (degree != 1 && degree != 2) throw ParameterError("degree must be 1 or 2");
    check_shapes(kernels, eta.size());
    const auto n = kernels.front().rows();
    if (static_cast<Eigen::Index>(beta.size()) != n || kernels.front().cols() != n) {
        throw ParameterError("dual vector length does not match the kernels");
    }
    const Eigen::Map<const Eigen::VectorXd> b(beta.data(), n);
    std::vector<double> grad(kernels.size(), 0.0);
    if (degree == 1) {
        for (std::size_t k = 0; k < kernels.size(); ++k) grad[k] = -0.5 * b.dot(kernels[k] * b);
        return grad;
    }
    const Eigen::MatrixXd m = (b * b.transpose()).cwiseProduct(weighted_sum(kernels, eta));
    for (std::size_t k = 0; k < kernels.size(); ++k) grad[k] = -m.cwiseProduct(kernels[k]).sum();
    return grad;
}

double mkl_gradient(std::span<const double> alpha_plus, std::span<const double> alpha_minus,
                    std::span<const Eigen::MatrixXd> kernels, std::span<const double> eta,
                    std::size_t k, int degree) {
    if (alpha_plus.size() != alpha_minus.size()) throw ParameterError("dual lengths differ");
    if (k >= kernels.size()) throw ParameterError("kernel index out of range");
    std::vector<double> beta(alpha_plus.size());
    for (std::size_t i = 0; i < beta.size(); ++i) beta[i] = alpha_plus[i] - alpha_minus[i];
    return mkl_gradient(beta, kernels, eta, degree)[k];
}

std::vector<double> project_onto_M(std::span<const double> eta, std::span<const double> eta0,
                                   double lambda) {
    if (!(lambda > 0.0)) throw ParameterError("Lambda must be > 0");
    if (eta.size() != eta0.size()) throw ParameterError("eta and eta0 lengths differ");
    const std::size_t n = eta.size();

    // KKT: v(mu) = max(0, (eta + mu eta0) / (1 + mu)); ||v(mu) - eta0|| decreases in mu.
    auto v_of = [&](double mu) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = std::max(0.0, (eta[i] + mu * eta0[i]) / (1.0 + mu));
        return v;
    };
    std::vector<double> v = v_of(0.0);
    if (norm_diff(v, eta0) > lambda) {
        double lo = 0.0;
        double hi = 1.0;
        while (norm_diff(v_of(hi), eta0) > lambda && hi < 1e300) hi *= 2.0;
        for (int iter = 0; iter < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++iter) {
            const double mid = 0.5 * (lo + hi);
            if (norm_diff(v_of(mid), eta0) > lambda) lo = mid;
            else hi = mid;
        }
        v = v_of(hi);
    }
    // Pull any rounding excess back onto the ball; stays nonnegative as a
    // convex combination of v and eta0.
    const double d = norm_diff(v, eta0);
    if (d > lambda) {
        for (std::size_t i = 0; i < n; ++i) v[i] = eta0[i] + (v[i] - eta0[i]) * (lambda / d);
    }
    for (double& x : v) x = std::max(x, 0.0);
    return v;
}

namespace {

struct Evaluation {
    std::vector<SvrModel> models;
    double objective = 0.0;
};

Evaluation evaluate(std::span<const MklTask> tasks, std::span<const double> eta,
                    const SvrConfig& svr, int degree, const std::vector<SvrModel>* warm,
                    std::size_t outer_iter) {
    Evaluation out;
    out.models.reserve(tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const Eigen::MatrixXd k = combine_kernels(tasks[t].kernels, eta, degree);
        try {
            out.models.push_back(train_svr(k, tasks[t].y, svr, warm ? &(*warm)[t] : nullptr));
        } catch (const TrainingError& e) {
            throw TrainingError("MKL outer iteration " + std::to_string(outer_iter) + ": " +
                                e.what());
        }
        out.objective += dual_objective(out.models.back(), k, tasks[t].y, svr.epsilon);
    }
    return out;
}

}  // namespace

MklFit fit_nlmkl_shared(std::span<const MklTask> tasks, const SvrConfig& svr_config,
                        const MklConfig& mkl_config) {
    if (tasks.empty()) throw ParameterError("no MKL tasks");
    const std::size_t p = tasks.front().kernels.size();
    for (const auto& task : tasks) {
        check_shapes(task.kernels, p);
        if (static_cast<Eigen::Index>(task.y.size()) != task.kernels.front().rows()) {
            throw ParameterError("targets do not match kernel size");
        }
    }
    mkl_config.validate(p);
    svr_config.validate();
    const std::vector<double> eta0 = mkl_config.center(p);

    MklFit fit;
    MklState& state = fit.state;
    state.eta = eta0;
    Evaluation current = evaluate(tasks, state.eta, svr_config, mkl_config.degree, nullptr, 0);
    state.objective_trace.push_back(current.objective);
    state.eta_trace.push_back(state.eta);

    double next_step = mkl_config.gamma;
    for (std::size_t it = 1; it <= mkl_config.max_iters; ++it) {
        std::vector<double> grad(p, 0.0);
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            const auto g = mkl_gradient(current.models[t].beta, tasks[t].kernels, state.eta,
                                        mkl_config.degree);
            for (std::size_t k = 0; k < p; ++k) grad[k] += g[k];
        }

        double step = next_step;
        bool accepted = false;
        bool halved = false;
        std::vector<double> candidate;
        Evaluation trial;
        // Halving stops at the same smallest step whatever the step grew to.
        const double min_step =
            mkl_config.gamma * std::ldexp(1.0, -static_cast<int>(mkl_config.max_halvings));
        for (bool first = true; first || (mkl_config.backtracking && step >= min_step);
             first = false, step *= 0.5) {
            std::vector<double> moved(p);
            for (std::size_t k = 0; k < p; ++k) moved[k] = state.eta[k] - step * grad[k];
            candidate = project_onto_M(moved, eta0, mkl_config.lambda);
            trial = evaluate(tasks, candidate, svr_config, mkl_config.degree, &current.models, it);
            if (!mkl_config.backtracking || trial.objective <= current.objective) {
                accepted = true;
                break;
            }
            halved = true;
        }
        if (!accepted) {
            state.converged = true;
            break;
        }

        next_step = halved ? step : step * mkl_config.step_growth;
        const double delta_eta = norm_diff(candidate, state.eta);
        const double delta_f = std::abs(trial.objective - current.objective);
        const double scale = std::max(1.0, std::abs(current.objective));
        state.eta = std::move(candidate);
        current = std::move(trial);
        state.objective_trace.push_back(current.objective);
        state.eta_trace.push_back(state.eta);
        state.iterations = it;
        if (delta_eta < mkl_config.tolerance || delta_f < mkl_config.tolerance * scale) {
            state.converged = true;
            break;
        }
    }
    fit.models = std::move(current.models);
    return fit;
}

std::pair<MklState, SvrModel> fit_nlmkl(std::span<const Eigen::MatrixXd> kernels,
                                        std::span<const double> y, const SvrConfig& svr_config,
                                        const MklConfig& mkl_config) {
    MklTask task{std::vector<Eigen::MatrixXd>(kernels.begin(), kernels.end()),
                 std::vector<double>(y.begin(), y.end())};
    MklFit fit = fit_nlmkl_shared(std::span<const MklTask>(&task, 1), svr_config, mkl_config);
    return {std::move(fit.state), std::move(fit.models.front())};
}

std::pair<MklState, SvrModel> fit_nlmkl(std::span<const KernelMatrix> kernels,
                                        std::span<const std::size_t> train_users,
                                        std::span<const double> y, const SvrConfig& svr_config,
                                        const MklConfig& mkl_config) {
    if (train_users.size() != y.size()) {
        throw ParameterError("one target per training user required");
    }
    std::vector<Eigen::MatrixXd> sub;
    sub.reserve(kernels.size());
    for (const auto& k : kernels) sub.push_back(k.submatrix(train_users, train_users));
    return fit_nlmkl(std::span<const Eigen::MatrixXd>(sub), y, svr_config, mkl_config);
}

std::string eta_trace_csv(const MklState& state) {
    std::ostringstream out;
    out.precision(17);
    const std::size_t p = state.eta.size();
    out << "iteration,F";
    for (std::size_t k = 0; k < p; ++k) out << ",eta_" << k;
    out << '\n';
    for (std::size_t i = 0; i < state.objective_trace.size(); ++i) {
        out << i << ',' << state.objective_trace[i];
        for (double v : state.eta_trace[i]) out << ',' << v;
        out << '\n';
    }
    return out.str();
}

void write_eta_trace(const MklState& state, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << eta_trace_csv(state);
    if (!f) throw IoError("short write to " + path.string());
}

}  // namespace socialmkl
