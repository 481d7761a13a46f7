#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace socialmkl {

using UserIndex = std::size_t;
using ItemIndex = std::size_t;

/// Undirected, unweighted friendship graph over users 0..n-1.
///
/// Adjacency is stored as sorted neighbor lists. Construction deduplicates
/// (u,v)/(v,u) pairs and rejects self-loops, so the implied 0/1 adjacency
/// matrix is symmetric with a zero diagonal.
class SocialGraph {
public:
    SocialGraph() = default;
    explicit SocialGraph(std::size_t n) : adjacency_(n) {}
    SocialGraph(std::size_t n, std::span<const std::pair<UserIndex, UserIndex>> edges);

    std::size_t size() const noexcept { return adjacency_.size(); }
    std::size_t edge_count() const noexcept { return edge_count_; }
    std::size_t degree(UserIndex u) const { return adjacency_.at(u).size(); }
    std::span<const UserIndex> neighbors(UserIndex u) const { return adjacency_.at(u); }
    bool has_edge(UserIndex u, UserIndex v) const;

    /// Each undirected edge once, as (min, max), in lexicographic order.
    std::vector<std::pair<UserIndex, UserIndex>> edges() const;

    /// Dense 0/1 adjacency matrix.
    Eigen::MatrixXd adjacency_matrix() const;

private:
    std::vector<std::vector<UserIndex>> adjacency_;
    std::size_t edge_count_ = 0;
};

enum class IsolatedNodePolicy {
    Strict,    ///< degree-0 node is an error
    Teleport,  ///< degree-0 row becomes the uniform distribution over all nodes
};

/// Row-stochastic single-step transition matrix, p_ij = a_ij / d_i.
Eigen::MatrixXd transition_matrix(const SocialGraph& graph,
                                  IsolatedNodePolicy policy = IsolatedNodePolicy::Strict);

/// Combinatorial Laplacian L = D - A.
Eigen::MatrixXd laplacian(const SocialGraph& graph);

/// Shortest-path shells around `source`.
///
/// The result has max_level + 1 entries: index 0 holds {source} and index i
/// holds every user at hop distance exactly i, in ascending index order.
std::vector<std::vector<UserIndex>> bfs_levels(const SocialGraph& graph, UserIndex source,
                                               std::size_t max_level);

/// Friend-count groups used for the per-degree breakdown. Bins are disjoint:
/// [1,5], [6,10], [11,20], [21,50], [51,inf). Degree 0 has its own bin.
enum class FriendBin { Zero, From1To5, From6To10, From11To20, From21To50, Over50 };

inline constexpr FriendBin kReportedFriendBins[] = {FriendBin::From1To5, FriendBin::From6To10,
                                                    FriendBin::From11To20, FriendBin::From21To50,
                                                    FriendBin::Over50};

FriendBin friend_bin_for_degree(std::size_t degree) noexcept;
FriendBin friend_count_bin(const SocialGraph& graph, UserIndex user);
std::string_view friend_bin_label(FriendBin bin) noexcept;

}  // namespace socialmkl
