#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "socialmkl/dataset.hpp"
#include "socialmkl/social_graph.hpp"

namespace socialmkl {

enum class FallbackKind { GlobalMean, ItemMean, UserMean, None };

std::string_view fallback_kind_name(FallbackKind kind) noexcept;
std::optional<FallbackKind> parse_fallback_kind(std::string_view name) noexcept;

struct BaselineConfig {
    double alpha_mni = 0.5;   ///< damping in (0, 1)
    std::size_t max_level = 2;
    bool normalize_mni = false;
    FallbackKind fallback = FallbackKind::GlobalMean;

    void validate() const;
};

/// Value used when a predictor has nothing to go on.
///
/// Means come from `known` (the ratings a predictor may look at); the user
/// mean comes from `profile` when given, skipping the target item.
class Fallback {
public:
    Fallback(FallbackKind kind, const RatingMatrix& known, const RatingMatrix* profile = nullptr);

    /// nullopt only for FallbackKind::None.
    std::optional<double> value(UserIndex v, ItemIndex w) const;
    /// Global mean of `known`, or the scale midpoint when it is empty.
    double global_mean() const noexcept { return global_; }
    FallbackKind kind() const noexcept { return kind_; }

private:
    FallbackKind kind_;
    const RatingMatrix& known_;
    const RatingMatrix* profile_;
    double global_;
};

struct Prediction {
    std::optional<double> value;  ///< empty: no prediction and no fallback
    bool from_fallback = false;
};

/// Mean of w's ratings among v's direct friends.
Prediction predict_ni(const SocialGraph& graph, const RatingMatrix& known, UserIndex v, ItemIndex w,
                      const Fallback& fallback);

/// Average rating of w within each BFS level 1..levels.size()-1 (nullopt when
/// nobody at that level rated w). `levels` comes from bfs_levels.
std::vector<std::optional<double>> mni_level_averages(const std::vector<std::vector<UserIndex>>& levels,
                                                      const RatingMatrix& known, ItemIndex w);

/// sum_{i<=k} alpha^i R_i over populated levels, divided by the sum of the
/// used alpha^i when `normalize`. nullopt when no level up to k is populated.
std::optional<double> combine_mni(std::span<const std::optional<double>> level_averages,
                                  double alpha, std::size_t k, bool normalize);

Prediction predict_mni(const SocialGraph& graph, const RatingMatrix& known, UserIndex v, ItemIndex w,
                       const BaselineConfig& config, const Fallback& fallback);

using Similarity = std::function<double(UserIndex, UserIndex)>;

/// sum Sim(v,u) R_{u,w} / sum |Sim(v,u)| over raters u != v of w.
Prediction predict_cf(const Similarity& similarity, const RatingMatrix& known, UserIndex v,
                      ItemIndex w, const Fallback& fallback);

/// Pearson correlation over co-rated items (optionally ignoring one item);
/// fewer than 2 co-rated items or zero variance gives 0.
double pearson_similarity(const RatingMatrix& ratings, UserIndex u, UserIndex v,
                          std::optional<ItemIndex> exclude = std::nullopt);

/// m_v + sum Sim(v,u)(R_{u,w} - m_u) / sum |Sim(v,u)|. Means come from
/// `profile`, with w left out of m_v.
Prediction predict_ucf_bias(const Similarity& similarity, const RatingMatrix& known,
                            const RatingMatrix& profile, UserIndex v, ItemIndex w,
                            const Fallback& fallback);

}  // namespace socialmkl
