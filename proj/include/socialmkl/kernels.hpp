#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "socialmkl/community.hpp"
#include "socialmkl/dataset.hpp"
#include "socialmkl/social_graph.hpp"

namespace socialmkl {

/// Kernel identities. The numeric order is the weight order used by the
/// combination (ONES first) and by every report.
enum class KernelLabel : std::uint8_t {
    Ones = 0,
    ImpactDistribution = 1,
    CommuteTime = 2,
    Community = 3,
    Demographic = 4,
    Claim = 5,
    Action1 = 6,
    Action2 = 7,
};

inline constexpr std::size_t kKernelCount = 8;

inline constexpr std::array<KernelLabel, kKernelCount> kAllKernelLabels = {
    KernelLabel::Ones,        KernelLabel::ImpactDistribution, KernelLabel::CommuteTime,
    KernelLabel::Community,   KernelLabel::Demographic,        KernelLabel::Claim,
    KernelLabel::Action1,     KernelLabel::Action2};

/// "ONES", "ID", "CT", "COM", "DEM", "CLA", "ACT1", "ACT2".
std::string_view kernel_label_name(KernelLabel label) noexcept;
std::optional<KernelLabel> parse_kernel_label(std::string_view name) noexcept;

/// Dense symmetric Gram matrix over the dataset's users (row i = user i).
class KernelMatrix {
public:
    KernelMatrix() = default;
    KernelMatrix(KernelLabel label, Eigen::MatrixXd values, bool normalized = false)
        : label_(label), values_(std::move(values)), normalized_(normalized) {}

    KernelLabel label() const noexcept { return label_; }
    bool normalized() const noexcept { return normalized_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(values_.rows()); }
    const Eigen::MatrixXd& values() const noexcept { return values_; }
    double operator()(std::size_t i, std::size_t j) const {
        return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }

    /// Rows `rows`, columns `cols`.
    Eigen::MatrixXd submatrix(std::span<const std::size_t> rows,
                              std::span<const std::size_t> cols) const;

private:
    KernelLabel label_ = KernelLabel::Ones;
    Eigen::MatrixXd values_;
    bool normalized_ = false;
};

struct KernelConfig {
    double alpha = 0.85;                ///< random-walk damping, in (0, 1)
    std::optional<double> sigma;        ///< RBF width; default: sd of user mean ratings
    bool normalize = true;              ///< cosine-normalize ID and CT
    std::uint64_t community_seed = 1;
    IsolatedNodePolicy isolated = IsolatedNodePolicy::Teleport;

    void validate() const;
};

/// Returns true for (user, item) pairs that must be ignored.
using RatingMask = std::function<bool(UserIndex, ItemIndex)>;

/// K_ID = R^T R with R = (1 - alpha)(I - alpha P^T)^-1, P the transition matrix.
KernelMatrix impact_distribution_kernel(const SocialGraph& graph, double alpha,
                                        IsolatedNodePolicy policy = IsolatedNodePolicy::Strict);

/// Random-walk-with-restart matrix R itself.
Eigen::MatrixXd restart_matrix(const SocialGraph& graph, double alpha,
                               IsolatedNodePolicy policy = IsolatedNodePolicy::Strict);

/// K_CT = L^+ by symmetric eigendecomposition; eigenvalues below
/// 1e-10 * lambda_max are treated as zero.
KernelMatrix commute_time_kernel(const SocialGraph& graph);

/// Entry 1 iff both users share a community.
KernelMatrix community_kernel(std::span<const std::size_t> community_of, std::size_t n);

/// |c_i ∩ c_j| / sqrt(|c_i| |c_j|) over token sets; empty sets give a zero
/// row with a unit diagonal.
KernelMatrix token_set_kernel(KernelLabel label, const std::vector<TokenSet>& tokens,
                              std::size_t n);
KernelMatrix demographic_kernel(const std::vector<TokenSet>& demographics, std::size_t n);
KernelMatrix claim_kernel(const std::vector<TokenSet>& claims, std::size_t n);

/// Set cosine of rated-item sets, |v_i ∩ v_j| / sqrt(|v_i| |v_j|).
KernelMatrix action_overlap_kernel(const RatingMatrix& ratings, std::size_t n,
                                   const RatingMask& mask = {});

/// Mean rating per user after masking; users left without ratings get the
/// global mean of the unmasked ratings.
std::vector<double> masked_user_means(const RatingMatrix& ratings, std::size_t n,
                                      const RatingMask& mask = {});

/// Sample standard deviation of the masked user means (1.0 when degenerate).
double default_sigma(const RatingMatrix& ratings, std::size_t n, const RatingMask& mask = {});

/// exp(-(m_i - m_j)^2 / (2 sigma^2)) over user mean ratings.
KernelMatrix rating_bias_kernel(const RatingMatrix& ratings, std::size_t n, double sigma,
                                const RatingMask& mask = {});

KernelMatrix all_ones_kernel(std::size_t n);

/// k(i,j) / sqrt(k(i,i) k(j,j)); rows whose diagonal is <= 1e-12 are zeroed
/// and given a unit diagonal.
KernelMatrix cosine_normalize(const KernelMatrix& kernel);

struct PsdReport {
    double min_eig = 0.0;
    double max_eig = 0.0;
    bool pass = false;
};

/// Eigenvalue check: pass iff min_eig >= -tol * max(|max_eig|, 1).
/// Throws ValidationError when the matrix is asymmetric beyond tol.
PsdReport validate_psd(const Eigen::MatrixXd& k, double tol = 1e-8);
inline PsdReport validate_psd(const KernelMatrix& k, double tol = 1e-8) {
    return validate_psd(k.values(), tol);
}

/// The eight kernels in label order.
struct KernelBank {
    std::array<KernelMatrix, kKernelCount> kernels;

    const KernelMatrix& operator[](KernelLabel label) const {
        return kernels[static_cast<std::size_t>(label)];
    }
    KernelMatrix& operator[](KernelLabel label) { return kernels[static_cast<std::size_t>(label)]; }
};

/// One kernel of the bank.
KernelMatrix build_kernel(const Dataset& dataset, const KernelConfig& config, KernelLabel label,
                          const RatingMask& mask = {});

/// Builds all eight kernels. ACT1/ACT2 honour `mask`; the community kernel
/// runs community detection with config.community_seed.
KernelBank build_kernel_bank(const Dataset& dataset, const KernelConfig& config,
                             const RatingMask& mask = {});

// ---------------------------------------------------------------------------
// Binary container: 32-byte header then n*n little-endian float64, row-major.
//   [0,8)   magic "SMKLKERN"
//   [8,12)  uint32 version (1)
//   [12,16) uint32 label
//   [16,24) uint64 n
//   [24]    uint8 normalized flag
//   [25,32) zero padding

void write_kernel(const KernelMatrix& kernel, const std::filesystem::path& path);
/// Throws IoError / ValidationError on a missing, truncated or corrupt file.
KernelMatrix read_kernel(const std::filesystem::path& path);

/// Directory of kernel files keyed by a content fingerprint.
class KernelCache {
public:
    explicit KernelCache(std::filesystem::path dir);

    /// Loads `key` when a valid file exists, otherwise builds, stores and
    /// returns it. A corrupt file is rebuilt with a warning on stderr.
    KernelMatrix get_or_build(const std::string& key, const std::function<KernelMatrix()>& build);

    std::size_t hits() const noexcept { return hits_; }
    std::size_t misses() const noexcept { return misses_; }
    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path dir_;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

/// FNV-1a fingerprint of the dataset contents, as 16 hex digits.
std::string dataset_fingerprint(const Dataset& dataset);

/// Cache key for one unmasked kernel: fingerprint, label and the
/// parameters that kernel depends on.
std::string kernel_cache_key(const std::string& fingerprint, KernelLabel label,
                             const KernelConfig& config);

/// build_kernel_bank without a mask, going through `cache`.
KernelBank build_kernel_bank(const Dataset& dataset, const KernelConfig& config, KernelCache& cache);

}  // namespace socialmkl
