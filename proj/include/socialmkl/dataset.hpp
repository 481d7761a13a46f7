#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "socialmkl/social_graph.hpp"

namespace socialmkl {

inline constexpr double kMinRating = 1.0;
inline constexpr double kMaxRating = 10.0;

struct RatingEntry {
    UserIndex user;
    ItemIndex item;
    double value;
};

struct ItemRating {
    ItemIndex item;
    double value;
};

struct UserRating {
    UserIndex user;
    double value;
};

/// Sparse user x item ratings, indexed both ways.
///
/// Entries are unique per (user, item) and lie in [1, 10].
class RatingMatrix {
public:
    RatingMatrix() = default;
    RatingMatrix(std::size_t n_users, std::size_t n_items, std::vector<RatingEntry> entries);

    std::size_t n_users() const noexcept { return user_offsets_.empty() ? 0 : user_offsets_.size() - 1; }
    std::size_t n_items() const noexcept { return item_offsets_.empty() ? 0 : item_offsets_.size() - 1; }
    std::size_t size() const noexcept { return by_user_.size(); }
    bool empty() const noexcept { return by_user_.empty(); }

    /// v_i with values, sorted by item.
    std::span<const ItemRating> user_ratings(UserIndex u) const;
    /// Raters of item w, sorted by user.
    std::span<const UserRating> item_ratings(ItemIndex w) const;

    std::optional<double> rating(UserIndex u, ItemIndex w) const;
    std::size_t user_count(UserIndex u) const { return user_ratings(u).size(); }
    /// m_i; empty for users without ratings.
    std::optional<double> user_mean(UserIndex u) const;
    std::optional<double> item_mean(ItemIndex w) const;
    /// Mean over every stored rating; empty when there are none.
    std::optional<double> global_mean() const;

    std::vector<RatingEntry> entries() const;

    /// Copy holding only the ratings of users with keep[u] == true.
    RatingMatrix restricted_to_users(const std::vector<bool>& keep) const;

private:
    std::vector<std::size_t> user_offsets_;
    std::vector<ItemRating> by_user_;
    std::vector<std::size_t> item_offsets_;
    std::vector<UserRating> by_item_;
    double sum_ = 0.0;
};

/// Sorted, duplicate-free token set such as {"city=HK", "gender=F"}.
using TokenSet = std::vector<std::string>;

/// Users, items, ratings, friendships and profile tokens.
///
/// Immutable once built. The constructor validates every invariant: rating
/// and graph indices are in range, token sets are sorted and unique, and the
/// id lists are free of duplicates.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<std::string> user_ids, std::vector<std::string> item_ids,
            RatingMatrix ratings, SocialGraph graph, std::vector<TokenSet> demographics,
            std::vector<TokenSet> claims);

    std::size_t n_users() const noexcept { return user_ids_.size(); }
    std::size_t n_items() const noexcept { return item_ids_.size(); }

    const std::vector<std::string>& user_ids() const noexcept { return user_ids_; }
    const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }
    const RatingMatrix& ratings() const noexcept { return ratings_; }
    const SocialGraph& graph() const noexcept { return graph_; }
    const std::vector<TokenSet>& demographics() const noexcept { return demographics_; }
    const std::vector<TokenSet>& claims() const noexcept { return claims_; }

    std::optional<UserIndex> find_user(const std::string& id) const;
    std::optional<ItemIndex> find_item(const std::string& id) const;

private:
    std::vector<std::string> user_ids_;
    std::vector<std::string> item_ids_;
    RatingMatrix ratings_;
    SocialGraph graph_;
    std::vector<TokenSet> demographics_;
    std::vector<TokenSet> claims_;
    std::unordered_map<std::string, UserIndex> user_lookup_;
    std::unordered_map<std::string, ItemIndex> item_lookup_;
};

struct DatasetPaths {
    std::filesystem::path ratings;
    std::filesystem::path friendships;
    std::optional<std::filesystem::path> demographics;
    std::optional<std::filesystem::path> claims;
};

struct LoadOptions {
    /// Strict: friendship/profile rows naming users absent from ratings.csv
    /// and users without friends are errors. Permissive: such users are added
    /// (and isolated users kept).
    bool strict = false;
};

Dataset load_dataset(const DatasetPaths& paths, const LoadOptions& options = {});

/// Writes ratings.csv, friendships.csv, demographics.csv and claims.csv.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

struct FoldAssignment {
    std::vector<std::size_t> fold_of;  ///< indexed by user
    std::size_t k = 0;
    std::uint64_t seed = 0;

    std::vector<UserIndex> members(std::size_t fold) const;
    std::vector<std::size_t> fold_sizes() const;
};

/// Uniform random partition of the users into k folds of near-equal size.
FoldAssignment split_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed);
FoldAssignment split_folds(std::size_t n_users, std::size_t k, std::uint64_t seed);

/// Parameters of the seeded stand-in corpus.
struct SyntheticParams {
    std::size_t n_users = 500;
    std::size_t n_items = 50;
    double mean_degree = 14.16;
    std::size_t n_communities = 5;
    double influence_strength = 0.5;   ///< weight of the friends' average, in [0, 1)
    double community_strength = 1.0;   ///< scale of per-community item effects
    double noise_std = 0.5;
    double ratings_per_user_mean = 20.0;
    std::uint64_t seed = 42;
    double bias_std = 1.0;             ///< per-user rating offset
    double taste_std = 0.5;            ///< per-(user, item) idiosyncratic preference
    double intra_community_fraction = 0.8;

    void validate() const;
};

Dataset generate_synthetic(const SyntheticParams& params);

}  // namespace socialmkl
