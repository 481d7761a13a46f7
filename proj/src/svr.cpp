#include "socialmkl/svr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "socialmkl/dataset.hpp"
#include "socialmkl/error.hpp"
#include "socialmkl/kernels.hpp"

namespace socialmkl {

void SvrConfig::validate() const {
    if (!(C > 0.0)) throw ParameterError("SVR C must be > 0");
    if (!(epsilon >= 0.0)) throw ParameterError("SVR epsilon must be >= 0");
    if (!(tolerance > 0.0)) throw ParameterError("SVR tolerance must be > 0");
    if (max_passes < 1 || stall_passes < 1) throw ParameterError("SVR pass limits must be >= 1");
}

namespace {

constexpr double kTau = 1e-12;

/// Dual state over 2N variables: t < N is a_t^+ (sign +1), t >= N is a_{t-N}^- (sign -1).
class SmoSolver {
public:
    SmoSolver(const Eigen::MatrixXd& k, std::span<const double> y, const SvrConfig& cfg)
        : k_(k), y_(y), cfg_(cfg), n_(y.size()), alpha_(2 * n_, 0.0), f_(Eigen::VectorXd::Zero(n_)) {}

    void warm_start(const SvrModel& model) {
        if (model.size() != n_) return;
        for (std::size_t i = 0; i < n_; ++i) {
            if (model.alpha_plus[i] > cfg_.C || model.alpha_minus[i] > cfg_.C) return;
        }
        for (std::size_t i = 0; i < n_; ++i) {
            alpha_[i] = model.alpha_plus[i];
            alpha_[i + n_] = model.alpha_minus[i];
        }
        recompute_f();
    }

    void solve(SvrModel& out) {
        const std::size_t pass_length = 2 * n_;
        double best_violation = std::numeric_limits<double>::infinity();
        std::vector<double> best_alpha = alpha_;
        std::size_t stalled = 0;
        std::size_t iter = 0;
        double violation = std::numeric_limits<double>::infinity();
        bool converged = false;

        for (std::size_t pass = 0; pass < cfg_.max_passes && !converged; ++pass) {
            for (std::size_t step = 0; step < pass_length; ++step) {
                std::size_t i = 0;
                std::size_t j = 0;
                violation = select(i, j);
                if (violation < cfg_.tolerance) {
                    converged = true;
                    break;
                }
                update(i, j);
                ++iter;
            }
            if (converged) break;
            if (violation < best_violation * (1.0 - 1e-9)) {
                best_violation = violation;
                best_alpha = alpha_;
                stalled = 0;
            } else if (++stalled >= cfg_.stall_passes) {
                alpha_ = best_alpha;
                recompute_f();
                violation = best_violation;
                break;
            }
        }

        out.converged = converged;
        out.iterations = iter;
        out.kkt_violation = violation;
        out.bias = -rho();
        out.beta.assign(n_, 0.0);
        out.alpha_plus.assign(n_, 0.0);
        out.alpha_minus.assign(n_, 0.0);
        out.support.clear();
        for (std::size_t p = 0; p < n_; ++p) {
            const double b = alpha_[p] - alpha_[p + n_];
            out.beta[p] = b;
            out.alpha_plus[p] = std::max(b, 0.0);
            out.alpha_minus[p] = std::max(-b, 0.0);
            if (b != 0.0) out.support.push_back(p);
        }
    }

private:
    double sign(std::size_t t) const { return t < n_ ? 1.0 : -1.0; }
    std::size_t point(std::size_t t) const { return t < n_ ? t : t - n_; }
    double kd(std::size_t p, std::size_t q) const {
        return k_(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
    }
    bool at_upper(std::size_t t) const { return alpha_[t] >= cfg_.C; }
    bool at_lower(std::size_t t) const { return alpha_[t] <= 0.0; }

    /// Gradient of the minimisation form 1/2 a^T Q a + p^T a.
    double grad(std::size_t t) const {
        const double s = sign(t);
        const std::size_t p = point(t);
        return cfg_.epsilon - s * y_[p] + s * f_(static_cast<Eigen::Index>(p));
    }

    void recompute_f() {
        Eigen::VectorXd beta(n_);
        for (std::size_t p = 0; p < n_; ++p) beta(p) = alpha_[p] - alpha_[p + n_];
        f_ = k_ * beta;
    }

    /// Second-order working-set selection; returns the maximal violation.
    double select(std::size_t& out_i, std::size_t& out_j) const {
        double gmax = -std::numeric_limits<double>::infinity();
        std::size_t i = 2 * n_;
        for (std::size_t t = 0; t < 2 * n_; ++t) {
            const bool in_up = sign(t) > 0 ? !at_upper(t) : !at_lower(t);
            if (!in_up) continue;
            const double v = -sign(t) * grad(t);
            if (v >= gmax) {
                gmax = v;
                i = t;
            }
        }
        double gmax2 = -std::numeric_limits<double>::infinity();
        double best_obj = std::numeric_limits<double>::infinity();
        std::size_t j = 2 * n_;
        if (i < 2 * n_) {
            const std::size_t pi = point(i);
            const double kii = kd(pi, pi);
            for (std::size_t t = 0; t < 2 * n_; ++t) {
                const bool in_low = sign(t) > 0 ? !at_lower(t) : !at_upper(t);
                if (!in_low) continue;
                const double sg = sign(t) * grad(t);
                gmax2 = std::max(gmax2, sg);
                const double diff = gmax + sg;
                if (diff <= 0.0) continue;
                const std::size_t pt = point(t);
                double quad = kii + kd(pt, pt) - 2.0 * kd(pi, pt);
                if (quad <= 0.0) quad = kTau;
                const double obj = -(diff * diff) / quad;
                if (obj <= best_obj) {
                    best_obj = obj;
                    j = t;
                }
            }
        }
        out_i = i;
        out_j = j;
        if (i == 2 * n_ || j == 2 * n_) return 0.0;
        return gmax + gmax2;
    }

    void update(std::size_t i, std::size_t j) {
        const double c = cfg_.C;
        const std::size_t pi = point(i);
        const std::size_t pj = point(j);
        const double old_i = alpha_[i];
        const double old_j = alpha_[j];
        double& ai = alpha_[i];
        double& aj = alpha_[j];
        double quad = kd(pi, pi) + kd(pj, pj) - 2.0 * kd(pi, pj);
        if (quad <= 0.0) quad = kTau;
        const double gi = grad(i);
        const double gj = grad(j);

        if (sign(i) != sign(j)) {
            const double delta = (-gi - gj) / quad;
            const double diff = ai - aj;
            ai += delta;
            aj += delta;
            if (diff > 0.0) {
                if (aj < 0.0) {
                    aj = 0.0;
                    ai = diff;
                }
            } else if (ai < 0.0) {
                ai = 0.0;
                aj = -diff;
            }
            if (diff > 0.0) {
                if (ai > c) {
                    ai = c;
                    aj = c - diff;
                }
            } else if (aj > c) {
                aj = c;
                ai = c + diff;
            }
        } else {
            const double delta = (gi - gj) / quad;
            const double sum = ai + aj;
            ai -= delta;
            aj += delta;
            if (sum > c) {
                if (ai > c) {
                    ai = c;
                    aj = sum - c;
                }
            } else if (aj < 0.0) {
                aj = 0.0;
                ai = sum;
            }
            if (sum > c) {
                if (aj > c) {
                    aj = c;
                    ai = sum - c;
                }
            } else if (ai < 0.0) {
                ai = 0.0;
                aj = sum;
            }
        }

        const double dbi = sign(i) * (ai - old_i);
        const double dbj = sign(j) * (aj - old_j);
        if (dbi != 0.0) f_ += dbi * k_.col(static_cast<Eigen::Index>(pi));
        if (dbj != 0.0) f_ += dbj * k_.col(static_cast<Eigen::Index>(pj));
    }

    /// Offset from free variables, or the midpoint of the KKT bounds.
    double rho() const {
        double ub = std::numeric_limits<double>::infinity();
        double lb = -std::numeric_limits<double>::infinity();
        double sum_free = 0.0;
        std::size_t n_free = 0;
        for (std::size_t t = 0; t < 2 * n_; ++t) {
            const double s = sign(t);
            const double yg = s * grad(t);
            if (at_upper(t)) {
                if (s < 0) ub = std::min(ub, yg);
                else lb = std::max(lb, yg);
            } else if (at_lower(t)) {
                if (s > 0) ub = std::min(ub, yg);
                else lb = std::max(lb, yg);
            } else {
                ++n_free;
                sum_free += yg;
            }
        }
        if (n_free > 0) return sum_free / static_cast<double>(n_free);
        return 0.5 * (ub + lb);
    }

    const Eigen::MatrixXd& k_;
    std::span<const double> y_;
    const SvrConfig& cfg_;
    std::size_t n_;
    std::vector<double> alpha_;
    Eigen::VectorXd f_;  // K beta
};

}  // namespace

SvrModel train_svr(const Eigen::MatrixXd& gram, std::span<const double> y, const SvrConfig& config,
                   const SvrModel* warm_start) {
    config.validate();
    if (y.empty()) throw TrainingError("SVR needs at least one training point");
    if (gram.rows() != gram.cols() || static_cast<std::size_t>(gram.rows()) != y.size()) {
        throw ParameterError("Gram matrix is " + std::to_string(gram.rows()) + "x" +
                             std::to_string(gram.cols()) + " but there are " +
                             std::to_string(y.size()) + " targets");
    }
    if (config.check_psd) {
        PsdReport report;
        try {
            report = validate_psd(gram, 1e-8);
        } catch (const ValidationError& e) {
            throw TrainingError(std::string("invalid Gram matrix: ") + e.what());
        }
        if (!report.pass) {
            throw TrainingError("Gram matrix is not positive semidefinite (min eigenvalue " +
                                std::to_string(report.min_eig) + ")");
        }
    }

    SvrModel model;
    model.config = config;
    SmoSolver solver(gram, y, config);
    if (warm_start) solver.warm_start(*warm_start);
    solver.solve(model);
    return model;
}

double predict_svr(const SvrModel& model, std::span<const double> k_row, bool clamp) {
    if (k_row.size() != model.size()) {
        throw ParameterError("kernel row has " + std::to_string(k_row.size()) +
                             " entries, model has " + std::to_string(model.size()));
    }
    double value = model.bias;
    for (std::size_t n : model.support) value += model.beta[n] * k_row[n];
    return clamp ? std::clamp(value, kMinRating, kMaxRating) : value;
}

double dual_objective(const SvrModel& model, const Eigen::MatrixXd& gram, std::span<const double> y,
                      double epsilon) {
    const std::size_t n = model.size();
    if (y.size() != n || static_cast<std::size_t>(gram.rows()) != n ||
        static_cast<std::size_t>(gram.cols()) != n) {
        throw ParameterError("dual_objective dimension mismatch");
    }
    const Eigen::Map<const Eigen::VectorXd> beta(model.beta.data(), static_cast<Eigen::Index>(n));
    const Eigen::Map<const Eigen::VectorXd> target(y.data(), static_cast<Eigen::Index>(n));
    double l1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) l1 += model.alpha_plus[i] + model.alpha_minus[i];
    return beta.dot(target) - epsilon * l1 - 0.5 * beta.dot(gram * beta);
}

nlohmann::json svr_model_to_json(const SvrModel& model,
                                 const std::vector<std::string>& train_user_ids) {
    if (train_user_ids.size() != model.size()) {
        throw ParameterError("one user id per training point required");
    }
    return {
        {"train_user_ids", train_user_ids},
        {"beta", model.beta},
        {"bias", model.bias},
        {"config",
         {{"C", model.config.C},
          {"epsilon", model.config.epsilon},
          {"tolerance", model.config.tolerance},
          {"max_passes", model.config.max_passes},
          {"clamp", model.config.clamp}}},
        {"converged", model.converged},
        {"iterations", model.iterations},
        {"kkt_violation", model.kkt_violation},
    };
}

}  // namespace socialmkl
