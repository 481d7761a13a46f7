#include "socialmkl/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "socialmkl/error.hpp"

namespace socialmkl {

std::string_view fallback_kind_name(FallbackKind kind) noexcept {
    switch (kind) {
        case FallbackKind::GlobalMean: return "global_mean";
        case FallbackKind::ItemMean: return "item_mean";
        case FallbackKind::UserMean: return "user_mean";
        case FallbackKind::None: return "none";
    }
    return "none";
}

std::optional<FallbackKind> parse_fallback_kind(std::string_view name) noexcept {
    for (auto k : {FallbackKind::GlobalMean, FallbackKind::ItemMean, FallbackKind::UserMean,
                   FallbackKind::None}) {
        if (fallback_kind_name(k) == name) return k;
    }
    return std::nullopt;
}

void BaselineConfig::validate() const {
    if (!(alpha_mni > 0.0 && alpha_mni < 1.0)) throw ParameterError("MNI damping must be in (0, 1)");
    if (max_level < 1) throw ParameterError("MNI max level must be >= 1");
}

namespace {

/// Mean of u's ratings, skipping `skip`.
std::optional<double> mean_without(const RatingMatrix& ratings, UserIndex u,
                                   std::optional<ItemIndex> skip) {
    if (u >= ratings.n_users()) return std::nullopt;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : ratings.user_ratings(u)) {
        if (skip && r.item == *skip) continue;
        sum += r.value;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

Prediction fallback_prediction(const Fallback& fallback, UserIndex v, ItemIndex w) {
    return {fallback.value(v, w), true};
}

}  // namespace

Fallback::Fallback(FallbackKind kind, const RatingMatrix& known, const RatingMatrix* profile)
    : kind_(kind), known_(known), profile_(profile),
      global_(known.global_mean().value_or(0.5 * (kMinRating + kMaxRating))) {}

std::optional<double> Fallback::value(UserIndex v, ItemIndex w) const {
    switch (kind_) {
        case FallbackKind::None: return std::nullopt;
        case FallbackKind::GlobalMean: return global_;
        case FallbackKind::ItemMean:
            if (w < known_.n_items()) {
                if (auto m = known_.item_mean(w)) return m;
            }
            return global_;
        case FallbackKind::UserMean:
            if (auto m = mean_without(profile_ ? *profile_ : known_, v, w)) return m;
            return global_;
    }
    return global_;
}

Prediction predict_ni(const SocialGraph& graph, const RatingMatrix& known, UserIndex v, ItemIndex w,
                      const Fallback& fallback) {
    if (v >= graph.size()) throw ReferenceError("unknown user index " + std::to_string(v));
    double sum = 0.0;
    std::size_t n = 0;
    for (UserIndex u : graph.neighbors(v)) {
        if (auto r = known.rating(u, w)) {
            sum += *r;
            ++n;
        }
    }
    if (n == 0) return fallback_prediction(fallback, v, w);
    return {sum / static_cast<double>(n), false};
}

std::vector<std::optional<double>> mni_level_averages(const std::vector<std::vector<UserIndex>>& levels,
                                                      const RatingMatrix& known, ItemIndex w) {
    std::vector<std::optional<double>> out(levels.size());
    for (std::size_t i = 1; i < levels.size(); ++i) {
        double sum = 0.0;
        std::size_t n = 0;
        for (UserIndex u : levels[i]) {
            if (auto r = known.rating(u, w)) {
                sum += *r;
                ++n;
            }
        }
        if (n > 0) out[i] = sum / static_cast<double>(n);
    }
    return out;
}

std::optional<double> combine_mni(std::span<const std::optional<double>> level_averages,
                                  double alpha, std::size_t k, bool normalize) {
    double value = 0.0;
    double weight = 0.0;
    double a = 1.0;
    bool any = false;
    for (std::size_t i = 1; i <= k && i < level_averages.size(); ++i) {
        a *= alpha;
        if (!level_averages[i]) continue;
        value += a * *level_averages[i];
        weight += a;
        any = true;
    }
    if (!any) return std::nullopt;
    return normalize ? value / weight : value;
}

Prediction predict_mni(const SocialGraph& graph, const RatingMatrix& known, UserIndex v, ItemIndex w,
                       const BaselineConfig& config, const Fallback& fallback) {
    config.validate();
    const auto levels = bfs_levels(graph, v, config.max_level);
    const auto averages = mni_level_averages(levels, known, w);
    if (auto p = combine_mni(averages, config.alpha_mni, config.max_level, config.normalize_mni)) {
        return {*p, false};
    }
    return fallback_prediction(fallback, v, w);
}

Prediction predict_cf(const Similarity& similarity, const RatingMatrix& known, UserIndex v,
                      ItemIndex w, const Fallback& fallback) {
    double num = 0.0;
    double den = 0.0;
    for (const auto& r : known.item_ratings(w)) {
        if (r.user == v) continue;
        const double s = similarity(v, r.user);
        num += s * r.value;
        den += std::abs(s);
    }
    if (!(den > 0.0)) return fallback_prediction(fallback, v, w);
    return {num / den, false};
}

double pearson_similarity(const RatingMatrix& ratings, UserIndex u, UserIndex v,
                          std::optional<ItemIndex> exclude) {
    const auto a = ratings.user_ratings(u);
    const auto b = ratings.user_ratings(v);
    std::size_t n = 0;
    double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i].item < b[j].item) {
            ++i;
        } else if (b[j].item < a[i].item) {
            ++j;
        } else {
            if (!(exclude && a[i].item == *exclude)) {
                const double x = a[i].value;
                const double y = b[j].value;
                ++n;
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
            }
            ++i;
            ++j;
        }
    }
    if (n < 2) return 0.0;
    const double nn = static_cast<double>(n);
    const double cov = sxy - sx * sy / nn;
    const double vx = sxx - sx * sx / nn;
    const double vy = syy - sy * sy / nn;
    if (vx <= 1e-12 || vy <= 1e-12) return 0.0;
    return std::clamp(cov / std::sqrt(vx * vy), -1.0, 1.0);
}

Prediction predict_ucf_bias(const Similarity& similarity, const RatingMatrix& known,
                            const RatingMatrix& profile, UserIndex v, ItemIndex w,
                            const Fallback& fallback) {
    const auto m_v = mean_without(profile, v, w);
    if (!m_v) return fallback_prediction(fallback, v, w);
    double num = 0.0;
    double den = 0.0;
    for (const auto& r : known.item_ratings(w)) {
        if (r.user == v) continue;
        const double s = similarity(v, r.user);
        if (s == 0.0) continue;
        const double m_u = mean_without(profile, r.user, std::nullopt).value_or(r.value);
        num += s * (r.value - m_u);
        den += std::abs(s);
    }
    if (!(den > 0.0)) return fallback_prediction(fallback, v, w);
    return {*m_v + num / den, false};
}

}  // namespace socialmkl
