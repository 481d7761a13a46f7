#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "socialmkl/social_graph.hpp"

namespace socialmkl {

class Dataset;

struct CommunityAssignment {
    /// Dense community ids from 0, numbered by first appearance in node order.
    std::vector<std::size_t> community_of;
    /// Modularity of the final partition; meaningless when !modularity_defined.
    double modularity = 0.0;
    /// False for edgeless graphs, where Q has a zero denominator.
    bool modularity_defined = true;
    /// Q of the starting singleton partition followed by Q after each pass.
    std::vector<double> pass_modularity;

    std::size_t community_count() const noexcept;
};

/// Newman modularity Q = (1/2m) sum_ij [a_ij - d_i d_j / 2m] delta(c_i, c_j).
/// Throws ParameterError on an edgeless graph.
double modularity(const SocialGraph& graph, std::span<const std::size_t> community_of);

/// Two-phase modularity heuristic: local node moves until no single move
/// improves Q, then aggregation of communities into super-nodes; repeated
/// until a pass changes nothing, then a node-level sweep and Kernighan-Lin
/// style refinement over the original graph. Node visit order is shuffled per pass with `seed`; equal gains
/// resolve to the lowest community id. The best of several seeded runs is
/// returned.
CommunityAssignment detect_communities(const SocialGraph& graph, std::uint64_t seed);

/// communities.csv with header `user_id,community_id`.
void write_communities_csv(const Dataset& dataset, const CommunityAssignment& assignment,
                           const std::filesystem::path& path);

}  // namespace socialmkl
