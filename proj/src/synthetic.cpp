#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include <Eigen/LU>

#include "socialmkl/dataset.hpp"
#include "socialmkl/error.hpp"

namespace socialmkl {

namespace {

// Centre of the generated rating scale (the mean rating of the reference corpus).
constexpr double kBaseRating = 7.31;
constexpr double kDegreeExponent = 2.5;

const char* const kGenres[] = {"action", "comedy", "drama", "romance", "scifi", "thriller"};
constexpr std::size_t kGenreCount = std::size(kGenres);
const char* const kAgeGroups[] = {"18-24", "25-34", "35-44", "45-54", "55+"};
const char* const kEducation[] = {"HS", "BSc", "MSc", "PhD"};
constexpr std::size_t kCityCount = 8;

std::string padded_id(char prefix, std::size_t index, std::size_t count) {
    std::string digits = std::to_string(index);
    const std::size_t width = std::to_string(count > 0 ? count - 1 : 0).size();
    return std::string(1, prefix) + std::string(width - digits.size(), '0') + digits;
}

/// Mean of p(k) ~ (k + shift)^-exponent on [1, kmax].
double shifted_power_law_mean(double shift, std::size_t kmax) {
    double z = 0.0;
    double m = 0.0;
    for (std::size_t k = 1; k <= kmax; ++k) {
        const double p = std::pow(static_cast<double>(k) + shift, -kDegreeExponent);
        z += p;
        m += p * static_cast<double>(k);
    }
    return m / z;
}

/// Shift that puts the truncated power-law mean at `target`; the target is
/// clamped into the attainable range.
double solve_degree_shift(double target, std::size_t kmax) {
    double lo = 0.0;
    double hi = 1e7;
    if (shifted_power_law_mean(lo, kmax) >= target) return lo;
    if (shifted_power_law_mean(hi, kmax) <= target) return hi;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (shifted_power_law_mean(mid, kmax) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<std::pair<UserIndex, UserIndex>> build_friendships(
    const SyntheticParams& p, const std::vector<std::size_t>& community, std::mt19937_64& rng) {
    const std::size_t n = p.n_users;
    const std::size_t kmax = std::min(std::max<std::size_t>(1, n / 10), n - 1);
    const double shift = solve_degree_shift(p.mean_degree, kmax);
    std::vector<double> weights(kmax);
    for (std::size_t k = 1; k <= kmax; ++k) {
        weights[k - 1] = std::pow(static_cast<double>(k) + shift, -kDegreeExponent);
    }
    std::discrete_distribution<std::size_t> degree_dist(weights.begin(), weights.end());
    std::bernoulli_distribution internal(p.intra_community_fraction);

    std::vector<std::vector<UserIndex>> internal_stubs(p.n_communities);
    std::vector<UserIndex> external_stubs;
    for (UserIndex u = 0; u < n; ++u) {
        const std::size_t degree = degree_dist(rng) + 1;
        for (std::size_t s = 0; s < degree; ++s) {
            if (internal(rng)) {
                internal_stubs[community[u]].push_back(u);
            } else {
                external_stubs.push_back(u);
            }
        }
    }

    std::set<std::pair<UserIndex, UserIndex>> edge_set;
    auto pair_pool = [&](std::vector<UserIndex>& pool) {
        std::shuffle(pool.begin(), pool.end(), rng);
        for (std::size_t i = 0; i + 1 < pool.size(); i += 2) {
            UserIndex a = pool[i];
            UserIndex b = pool[i + 1];
            if (a == b) continue;  // self-loop rejected
            if (a > b) std::swap(a, b);
            edge_set.emplace(a, b);  // multi-edge rejected by the set
        }
    };
    for (auto& pool : internal_stubs) pair_pool(pool);
    pair_pool(external_stubs);

    // Every user keeps at least one friend.
    std::vector<std::size_t> degree(n, 0);
    for (auto [a, b] : edge_set) {
        ++degree[a];
        ++degree[b];
    }
    std::vector<std::vector<UserIndex>> members(p.n_communities);
    for (UserIndex u = 0; u < n; ++u) members[community[u]].push_back(u);
    for (UserIndex u = 0; u < n; ++u) {
        if (degree[u] > 0) continue;
        const auto& peers = members[community[u]];
        UserIndex v = u;
        if (peers.size() > 1) {
            std::uniform_int_distribution<std::size_t> pick(0, peers.size() - 1);
            while (v == u) v = peers[pick(rng)];
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            while (v == u) v = pick(rng);
        }
        edge_set.emplace(std::min(u, v), std::max(u, v));
        ++degree[u];
        ++degree[v];
    }
    return {edge_set.begin(), edge_set.end()};
}

}  // namespace

void SyntheticParams::validate() const {
    if (n_users < 1 || n_items < 1 || n_communities < 1) {
        throw ParameterError("n_users, n_items and n_communities must be >= 1");
    }
    if (n_users < 2) throw ParameterError("a friendship graph needs n_users >= 2");
    if (!(mean_degree > 0.0) || mean_degree >= static_cast<double>(n_users)) {
        throw ParameterError("mean_degree must lie in (0, n_users)");
    }
    if (!(influence_strength >= 0.0 && influence_strength < 1.0)) {
        throw ParameterError("influence_strength must lie in [0, 1)");
    }
    if (!(community_strength >= 0.0) || !(noise_std >= 0.0) || !(bias_std >= 0.0) ||
        !(taste_std >= 0.0)) {
        throw ParameterError("strengths and standard deviations must be >= 0");
    }
    if (!(ratings_per_user_mean >= 1.0)) {
        throw ParameterError("ratings_per_user_mean must be >= 1");
    }
    if (!(intra_community_fraction >= 0.0 && intra_community_fraction <= 1.0)) {
        throw ParameterError("intra_community_fraction must lie in [0, 1]");
    }
}

Dataset generate_synthetic(const SyntheticParams& p) {
    p.validate();
    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> std_normal(0.0, 1.0);
    const std::size_t n = p.n_users;
    const std::size_t m = p.n_items;

    // Balanced planted communities.
    std::vector<UserIndex> order(n);
    std::iota(order.begin(), order.end(), UserIndex{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> community(n);
    for (std::size_t i = 0; i < n; ++i) community[order[i]] = i % p.n_communities;

    SocialGraph graph(n, build_friendships(p, community, rng));

    // Item effects per community: a shared genre affinity plus an item-specific part.
    std::uniform_int_distribution<std::size_t> pick_genre(0, kGenreCount - 1);
    std::vector<std::size_t> genre(m);
    for (auto& g : genre) g = pick_genre(rng);
    Eigen::MatrixXd affinity(p.n_communities, kGenreCount);
    for (Eigen::Index c = 0; c < affinity.rows(); ++c) {
        for (Eigen::Index g = 0; g < affinity.cols(); ++g) affinity(c, g) = std_normal(rng);
    }
    Eigen::MatrixXd effect(p.n_communities, m);
    for (Eigen::Index c = 0; c < effect.rows(); ++c) {
        for (std::size_t j = 0; j < m; ++j) {
            effect(c, j) = (affinity(c, genre[j]) + std_normal(rng)) / std::sqrt(2.0);
        }
    }

    Eigen::MatrixXd base(n, m);
    for (UserIndex u = 0; u < n; ++u) {
        const double bias = p.bias_std * std_normal(rng);
        for (std::size_t j = 0; j < m; ++j) {
            base(u, j) = p.community_strength * effect(community[u], j) + bias +
                         p.taste_std * std_normal(rng);
        }
    }

    // z = (1 - s) base + s * (friends' average of z)
    Eigen::MatrixXd latent = base;
    if (p.influence_strength > 0.0) {
        const double s = p.influence_strength;
        Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) -
                                 s * transition_matrix(graph, IsolatedNodePolicy::Teleport);
        latent = system.partialPivLu().solve((1.0 - s) * base);
    }

    // Which items each user rates: popularity-skewed, tilted toward liked items.
    std::poisson_distribution<std::size_t> extra_ratings(p.ratings_per_user_mean - 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<RatingEntry> entries;
    for (UserIndex u = 0; u < n; ++u) {
        const std::size_t count = std::min(m, 1 + extra_ratings(rng));
        std::vector<std::pair<double, std::size_t>> keys(m);
        for (std::size_t j = 0; j < m; ++j) {
            const double weight = std::pow(static_cast<double>(j + 1), -0.3) *
                                  std::exp(0.5 * effect(community[u], j));
            keys[j] = {std::log(std::max(unit(rng), 1e-300)) / weight, j};
        }
        std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(count),
                          keys.end(), std::greater<>());
        for (std::size_t r = 0; r < count; ++r) {
            const std::size_t j = keys[r].second;
            const double value = kBaseRating + latent(u, j) + p.noise_std * std_normal(rng);
            entries.push_back({u, j, std::clamp(value, kMinRating, kMaxRating)});
        }
    }

    // Profiles: the city token and the claimed genres lean toward the community.
    std::bernoulli_distribution coin(0.5);
    std::bernoulli_distribution home_city(0.6);
    std::bernoulli_distribution claim_top(0.7);
    std::bernoulli_distribution claim_other(0.15);
    std::uniform_int_distribution<std::size_t> pick_age(0, std::size(kAgeGroups) - 1);
    std::uniform_int_distribution<std::size_t> pick_edu(0, std::size(kEducation) - 1);
    std::uniform_int_distribution<std::size_t> pick_city(0, kCityCount - 1);
    std::vector<TokenSet> demographics(n);
    std::vector<TokenSet> claims(n);
    for (UserIndex u = 0; u < n; ++u) {
        const std::size_t c = community[u];
        const std::size_t city = home_city(rng) ? c % kCityCount : pick_city(rng);
        demographics[u] = {std::string("age=") + kAgeGroups[pick_age(rng)],
                           "city=c" + std::to_string(city),
                           std::string("edu=") + kEducation[pick_edu(rng)],
                           std::string("gender=") + (coin(rng) ? "F" : "M")};
        std::sort(demographics[u].begin(), demographics[u].end());

        std::vector<std::size_t> ranked(kGenreCount);
        std::iota(ranked.begin(), ranked.end(), std::size_t{0});
        std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
            return affinity(c, a) > affinity(c, b);
        });
        for (std::size_t r = 0; r < kGenreCount; ++r) {
            const bool take = r < 2 ? claim_top(rng) : claim_other(rng);
            if (take) claims[u].push_back(kGenres[ranked[r]]);
        }
        std::sort(claims[u].begin(), claims[u].end());
    }

    std::vector<std::string> user_ids(n);
    for (UserIndex u = 0; u < n; ++u) user_ids[u] = padded_id('u', u, n);
    std::vector<std::string> item_ids(m);
    for (std::size_t j = 0; j < m; ++j) item_ids[j] = padded_id('m', j, m);

    return Dataset(std::move(user_ids), std::move(item_ids), RatingMatrix(n, m, std::move(entries)),
                   std::move(graph), std::move(demographics), std::move(claims));
}

}  // namespace socialmkl
