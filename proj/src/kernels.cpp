#include "socialmkl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "socialmkl/error.hpp"

namespace socialmkl {

namespace {

constexpr const char* kLabelNames[kKernelCount] = {"ONES", "ID",  "CT",   "COM",
                                                  "DEM",  "CLA", "ACT1", "ACT2"};

}  // namespace

std::string_view kernel_label_name(KernelLabel label) noexcept {
    return kLabelNames[static_cast<std::size_t>(label)];
}

std::optional<KernelLabel> parse_kernel_label(std::string_view name) noexcept {
    for (std::size_t i = 0; i < kKernelCount; ++i) {
        if (name == kLabelNames[i]) return static_cast<KernelLabel>(i);
    }
    return std::nullopt;
}

Eigen::MatrixXd KernelMatrix::submatrix(std::span<const std::size_t> rows,
                                        std::span<const std::size_t> cols) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                values_(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(cols[c]));
        }
    }
    return out;
}

void KernelConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("kernel alpha must lie in (0, 1)");
    if (sigma && !(*sigma > 0.0)) throw ParameterError("kernel sigma must be > 0");
}

Eigen::MatrixXd restart_matrix(const SocialGraph& graph, double alpha, IsolatedNodePolicy policy) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
    const auto n = static_cast<Eigen::Index>(graph.size());
    const Eigen::MatrixXd p = transition_matrix(graph, policy);
    const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - alpha * p.transpose();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    // I - alpha P^T is strictly diagonally dominant by columns for alpha < 1.
    const double rcond = lu.rcond();
    if (!(rcond > 1e-14)) {
        throw Error("restart system is numerically singular (rcond estimate " +
                    std::to_string(rcond) + ")");
    }
    return lu.solve((1.0 - alpha) * Eigen::MatrixXd::Identity(n, n));
}

KernelMatrix impact_distribution_kernel(const SocialGraph& graph, double alpha,
                                        IsolatedNodePolicy policy) {
    const Eigen::MatrixXd r = restart_matrix(graph, alpha, policy);
    Eigen::MatrixXd k = r.transpose() * r;
    k = 0.5 * (k + k.transpose()).eval();
    return KernelMatrix(KernelLabel::ImpactDistribution, std::move(k));
}

KernelMatrix commute_time_kernel(const SocialGraph& graph) {
    const auto n = static_cast<Eigen::Index>(graph.size());
    if (graph.edge_count() == 0) {
        return KernelMatrix(KernelLabel::CommuteTime, Eigen::MatrixXd::Zero(n, n));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(laplacian(graph));
    if (eig.info() != Eigen::Success) throw Error("Laplacian eigendecomposition failed");
    const Eigen::VectorXd& lambda = eig.eigenvalues();
    const double cutoff = 1e-10 * lambda.maxCoeff();
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (lambda(i) > cutoff) inv(i) = 1.0 / lambda(i);
    }
    const Eigen::MatrixXd& v = eig.eigenvectors();
    Eigen::MatrixXd k = v * inv.asDiagonal() * v.transpose();
    k = 0.5 * (k + k.transpose()).eval();
    return KernelMatrix(KernelLabel::CommuteTime, std::move(k));
}

KernelMatrix community_kernel(std::span<const std::size_t> community_of, std::size_t n) {
    if (community_of.size() < n) {
        throw ReferenceError("user " + std::to_string(community_of.size()) +
                             " missing from the community assignment");
    }
    const auto nn = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd k(nn, nn);
    for (Eigen::Index i = 0; i < nn; ++i) {
        for (Eigen::Index j = 0; j < nn; ++j) {
            k(i, j) = community_of[i] == community_of[j] ? 1.0 : 0.0;
        }
    }
    return KernelMatrix(KernelLabel::Community, std::move(k));
}

namespace {

/// Set cosine between rows of a binary incidence given as per-row column lists.
Eigen::MatrixXd set_cosine(const std::vector<std::vector<std::size_t>>& rows,
                           std::size_t n_columns) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd incidence = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(n_columns));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (std::size_t c : rows[i]) incidence(i, static_cast<Eigen::Index>(c)) = 1.0;
    }
    Eigen::MatrixXd k = incidence * incidence.transpose();
    Eigen::VectorXd norm(n);
    for (Eigen::Index i = 0; i < n; ++i) norm(i) = std::sqrt(static_cast<double>(rows[i].size()));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            k(i, j) = (norm(i) > 0.0 && norm(j) > 0.0) ? k(i, j) / (norm(i) * norm(j)) : 0.0;
        }
        k(i, i) = 1.0;  // exact for non-empty rows; degenerate rows get a unit diagonal
    }
    return k;
}

}  // namespace

KernelMatrix token_set_kernel(KernelLabel label, const std::vector<TokenSet>& tokens,
                              std::size_t n) {
    std::unordered_map<std::string, std::size_t> vocabulary;
    std::vector<std::vector<std::size_t>> rows(n);
    for (std::size_t u = 0; u < n && u < tokens.size(); ++u) {
        for (const auto& t : tokens[u]) {
            auto [it, inserted] = vocabulary.emplace(t, vocabulary.size());
            rows[u].push_back(it->second);
        }
        std::sort(rows[u].begin(), rows[u].end());
        rows[u].erase(std::unique(rows[u].begin(), rows[u].end()), rows[u].end());
    }
    return KernelMatrix(label, set_cosine(rows, vocabulary.size()));
}

KernelMatrix demographic_kernel(const std::vector<TokenSet>& demographics, std::size_t n) {
    return token_set_kernel(KernelLabel::Demographic, demographics, n);
}

KernelMatrix claim_kernel(const std::vector<TokenSet>& claims, std::size_t n) {
    return token_set_kernel(KernelLabel::Claim, claims, n);
}

KernelMatrix action_overlap_kernel(const RatingMatrix& ratings, std::size_t n,
                                   const RatingMask& mask) {
    std::vector<std::vector<std::size_t>> rows(n);
    for (UserIndex u = 0; u < n && u < ratings.n_users(); ++u) {
        for (const auto& r : ratings.user_ratings(u)) {
            if (mask && mask(u, r.item)) continue;
            rows[u].push_back(r.item);
        }
    }
    return KernelMatrix(KernelLabel::Action1, set_cosine(rows, ratings.n_items()));
}

std::vector<double> masked_user_means(const RatingMatrix& ratings, std::size_t n,
                                      const RatingMask& mask) {
    std::vector<double> sum(n, 0.0);
    std::vector<std::size_t> count(n, 0);
    double total = 0.0;
    std::size_t total_count = 0;
    for (UserIndex u = 0; u < n && u < ratings.n_users(); ++u) {
        for (const auto& r : ratings.user_ratings(u)) {
            if (mask && mask(u, r.item)) continue;
            sum[u] += r.value;
            ++count[u];
            total += r.value;
            ++total_count;
        }
    }
    const double global = total_count > 0 ? total / static_cast<double>(total_count) : 0.0;
    std::vector<double> means(n, global);
    for (std::size_t u = 0; u < n; ++u) {
        if (count[u] > 0) means[u] = sum[u] / static_cast<double>(count[u]);
    }
    return means;
}

double default_sigma(const RatingMatrix& ratings, std::size_t n, const RatingMask& mask) {
    const auto means = masked_user_means(ratings, n, mask);
    if (means.size() < 2) return 1.0;
    double mean = 0.0;
    for (double m : means) mean += m;
    mean /= static_cast<double>(means.size());
    double ss = 0.0;
    for (double m : means) ss += (m - mean) * (m - mean);
    const double sd = std::sqrt(ss / static_cast<double>(means.size() - 1));
    return sd > 1e-12 ? sd : 1.0;
}

KernelMatrix rating_bias_kernel(const RatingMatrix& ratings, std::size_t n, double sigma,
                                const RatingMask& mask) {
    if (!(sigma > 0.0)) throw ParameterError("sigma must be > 0");
    const auto means = masked_user_means(ratings, n, mask);
    const auto nn = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd k(nn, nn);
    const double denom = 2.0 * sigma * sigma;
    for (Eigen::Index i = 0; i < nn; ++i) {
        for (Eigen::Index j = 0; j < nn; ++j) {
            const double d = means[i] - means[j];
            k(i, j) = std::exp(-d * d / denom);
        }
    }
    return KernelMatrix(KernelLabel::Action2, std::move(k));
}

KernelMatrix all_ones_kernel(std::size_t n) {
    if (n < 1) throw ParameterError("all-ones kernel needs n >= 1");
    const auto nn = static_cast<Eigen::Index>(n);
    return KernelMatrix(KernelLabel::Ones, Eigen::MatrixXd::Ones(nn, nn));
}

KernelMatrix cosine_normalize(const KernelMatrix& kernel) {
    const Eigen::MatrixXd& k = kernel.values();
    const Eigen::Index n = k.rows();
    Eigen::VectorXd scale(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        scale(i) = k(i, i) > 1e-12 ? 1.0 / std::sqrt(k(i, i)) : 0.0;
    }
    Eigen::MatrixXd out = scale.asDiagonal() * k * scale.asDiagonal();
    for (Eigen::Index i = 0; i < n; ++i) out(i, i) = 1.0;
    return KernelMatrix(kernel.label(), std::move(out), true);
}

PsdReport validate_psd(const Eigen::MatrixXd& k, double tol) {
    if (k.rows() != k.cols()) throw ValidationError("kernel matrix is not square");
    double worst = 0.0;
    Eigen::Index wi = 0;
    Eigen::Index wj = 0;
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < k.cols(); ++j) {
            const double d = std::abs(k(i, j) - k(j, i));
            if (d > worst) {
                worst = d;
                wi = i;
                wj = j;
            }
        }
    }
    if (worst > tol) {
        throw ValidationError("kernel matrix asymmetric: |k(" + std::to_string(wi) + "," +
                              std::to_string(wj) + ") - k(" + std::to_string(wj) + "," +
                              std::to_string(wi) + ")| = " + std::to_string(worst));
    }
    PsdReport report;
    if (k.rows() == 0) {
        report.pass = true;
        return report;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw ValidationError("eigenvalue computation failed");
    report.min_eig = eig.eigenvalues().minCoeff();
    report.max_eig = eig.eigenvalues().maxCoeff();
    report.pass = report.min_eig >= -tol * std::max(std::abs(report.max_eig), 1.0);
    return report;
}

KernelMatrix build_kernel(const Dataset& dataset, const KernelConfig& config, KernelLabel label,
                          const RatingMask& mask) {
    config.validate();
    const auto n = dataset.n_users();
    const auto maybe_normalize = [&](KernelMatrix k) {
        return config.normalize ? cosine_normalize(k) : k;
    };
    switch (label) {
        case KernelLabel::Ones: return all_ones_kernel(n);
        case KernelLabel::ImpactDistribution:
            return maybe_normalize(impact_distribution_kernel(dataset.graph(), config.alpha, config.isolated));
        case KernelLabel::CommuteTime: return maybe_normalize(commute_time_kernel(dataset.graph()));
        case KernelLabel::Community:
            return community_kernel(detect_communities(dataset.graph(), config.community_seed).community_of, n);
        case KernelLabel::Demographic: return demographic_kernel(dataset.demographics(), n);
        case KernelLabel::Claim: return claim_kernel(dataset.claims(), n);
        case KernelLabel::Action1: return action_overlap_kernel(dataset.ratings(), n, mask);
        case KernelLabel::Action2: {
            const double sigma = config.sigma ? *config.sigma : default_sigma(dataset.ratings(), n, mask);
            return rating_bias_kernel(dataset.ratings(), n, sigma, mask);
        }
    }
    throw ParameterError("unknown kernel label");
}

KernelBank build_kernel_bank(const Dataset& dataset, const KernelConfig& config,
                             const RatingMask& mask) {
    KernelBank bank;
    for (auto label : kAllKernelLabels) bank[label] = build_kernel(dataset, config, label, mask);
    return bank;
}

}  // namespace socialmkl
