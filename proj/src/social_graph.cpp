#include "socialmkl/social_graph.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <string>

#include "socialmkl/error.hpp"

namespace socialmkl {

SocialGraph::SocialGraph(std::size_t n, std::span<const std::pair<UserIndex, UserIndex>> edges)
    : adjacency_(n) {
    for (auto [u, v] : edges) {
        if (u >= n || v >= n) {
            throw ReferenceError("edge (" + std::to_string(u) + "," + std::to_string(v) +
                                 ") references a node outside [0," + std::to_string(n) + ")");
        }
        if (u == v) {
            throw ParameterError("self-loop on node " + std::to_string(u));
        }
        adjacency_[u].push_back(v);
        adjacency_[v].push_back(u);
    }
    std::size_t half_edges = 0;
    for (auto& list : adjacency_) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
        half_edges += list.size();
    }
    edge_count_ = half_edges / 2;
}

bool SocialGraph::has_edge(UserIndex u, UserIndex v) const {
    const auto& list = adjacency_.at(u);
    return std::binary_search(list.begin(), list.end(), v);
}

std::vector<std::pair<UserIndex, UserIndex>> SocialGraph::edges() const {
    std::vector<std::pair<UserIndex, UserIndex>> out;
    out.reserve(edge_count_);
    for (UserIndex u = 0; u < adjacency_.size(); ++u) {
        for (UserIndex v : adjacency_[u]) {
            if (u < v) out.emplace_back(u, v);
        }
    }
    return out;
}

Eigen::MatrixXd SocialGraph::adjacency_matrix() const {
    const auto n = static_cast<Eigen::Index>(size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (UserIndex u = 0; u < adjacency_.size(); ++u) {
        for (UserIndex v : adjacency_[u]) a(u, v) = 1.0;
    }
    return a;
}

Eigen::MatrixXd transition_matrix(const SocialGraph& graph, IsolatedNodePolicy policy) {
    const auto n = static_cast<Eigen::Index>(graph.size());
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
    for (UserIndex u = 0; u < graph.size(); ++u) {
        const auto nbrs = graph.neighbors(u);
        if (nbrs.empty()) {
            if (policy == IsolatedNodePolicy::Strict) {
                throw ValidationError("node " + std::to_string(u) +
                                      " has no neighbors; transition row undefined");
            }
            p.row(u).setConstant(1.0 / static_cast<double>(n));
            continue;
        }
        const double w = 1.0 / static_cast<double>(nbrs.size());
        for (UserIndex v : nbrs) p(u, v) = w;
    }
    return p;
}

Eigen::MatrixXd laplacian(const SocialGraph& graph) {
    Eigen::MatrixXd l = -graph.adjacency_matrix();
    for (UserIndex u = 0; u < graph.size(); ++u) {
        l(u, u) = static_cast<double>(graph.degree(u));
    }
    return l;
}

std::vector<std::vector<UserIndex>> bfs_levels(const SocialGraph& graph, UserIndex source,
                                               std::size_t max_level) {
    if (source >= graph.size()) {
        throw ReferenceError("unknown source node " + std::to_string(source));
    }
    if (max_level < 1) throw ParameterError("max_level must be >= 1");

    constexpr auto kUnseen = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> dist(graph.size(), kUnseen);
    std::vector<std::vector<UserIndex>> levels(max_level + 1);
    std::deque<UserIndex> frontier{source};
    dist[source] = 0;
    levels[0].push_back(source);
    while (!frontier.empty()) {
        const UserIndex u = frontier.front();
        frontier.pop_front();
        if (dist[u] == max_level) continue;
        for (UserIndex v : graph.neighbors(u)) {
            if (dist[v] != kUnseen) continue;
            dist[v] = dist[u] + 1;
            levels[dist[v]].push_back(v);
            frontier.push_back(v);
        }
    }
    for (auto& level : levels) std::sort(level.begin(), level.end());
    return levels;
}

FriendBin friend_bin_for_degree(std::size_t degree) noexcept {
    if (degree == 0) return FriendBin::Zero;
    if (degree <= 5) return FriendBin::From1To5;
    if (degree <= 10) return FriendBin::From6To10;
    if (degree <= 20) return FriendBin::From11To20;
    if (degree <= 50) return FriendBin::From21To50;
    return FriendBin::Over50;
}

FriendBin friend_count_bin(const SocialGraph& graph, UserIndex user) {
    if (user >= graph.size()) throw ReferenceError("unknown user " + std::to_string(user));
    return friend_bin_for_degree(graph.degree(user));
}

std::string_view friend_bin_label(FriendBin bin) noexcept {
    switch (bin) {
        case FriendBin::Zero: return "0";
        case FriendBin::From1To5: return "1-5";
        case FriendBin::From6To10: return "6-10";
        case FriendBin::From11To20: return "11-20";
        case FriendBin::From21To50: return "21-50";
        case FriendBin::Over50: return ">50";
    }
    return "?";
}

}  // namespace socialmkl
