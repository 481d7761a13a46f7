#include "socialmkl/community.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "socialmkl/dataset.hpp"
#include "socialmkl/error.hpp"

namespace socialmkl {

std::size_t CommunityAssignment::community_count() const noexcept {
    if (community_of.empty()) return 0;
    return *std::max_element(community_of.begin(), community_of.end()) + 1;
}

double modularity(const SocialGraph& graph, std::span<const std::size_t> community_of) {
    if (community_of.size() != graph.size()) {
        throw ParameterError("community assignment does not cover the graph");
    }
    if (graph.edge_count() == 0) throw ParameterError("modularity undefined on an edgeless graph");

    const double two_m = 2.0 * static_cast<double>(graph.edge_count());
    const std::size_t n_comm =
        community_of.empty() ? 0 : *std::max_element(community_of.begin(), community_of.end()) + 1;
    std::vector<double> internal(n_comm, 0.0);
    std::vector<double> total(n_comm, 0.0);
    for (UserIndex u = 0; u < graph.size(); ++u) {
        total[community_of[u]] += static_cast<double>(graph.degree(u));
        for (UserIndex v : graph.neighbors(u)) {
            if (community_of[u] == community_of[v]) internal[community_of[u]] += 1.0;
        }
    }
    double q = 0.0;
    for (std::size_t c = 0; c < n_comm; ++c) {
        q += internal[c] / two_m - (total[c] / two_m) * (total[c] / two_m);
    }
    return q;
}

namespace {

/// Weighted graph with self-loop mass; the unit of work for one Louvain level.
struct LevelGraph {
    std::vector<std::vector<std::pair<std::size_t, double>>> neighbors;  // excludes self
    std::vector<double> self_weight;  // a_ii summed over both directions
    std::vector<double> strength;     // k_i = self + sum of neighbor weights
    double two_m = 0.0;

    std::size_t size() const { return neighbors.size(); }
};

LevelGraph from_social_graph(const SocialGraph& graph) {
    LevelGraph g;
    const auto n = graph.size();
    g.neighbors.resize(n);
    g.self_weight.assign(n, 0.0);
    g.strength.assign(n, 0.0);
    for (UserIndex u = 0; u < n; ++u) {
        for (UserIndex v : graph.neighbors(u)) g.neighbors[u].emplace_back(v, 1.0);
        g.strength[u] = static_cast<double>(graph.degree(u));
        g.two_m += g.strength[u];
    }
    return g;
}

/// One local-moving phase. Returns true if any node changed community.
bool move_nodes(const LevelGraph& g, std::vector<std::size_t>& community, std::mt19937_64& rng) {
    const std::size_t n = g.size();
    std::vector<double> total(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) total[community[i]] += g.strength[i];

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<double> link_to(n, 0.0);
    std::vector<std::size_t> touched;
    bool any_move = false;
    bool improved = true;
    while (improved) {
        improved = false;
        for (std::size_t i : order) {
            const std::size_t own = community[i];
            const double k_i = g.strength[i];
            touched.clear();
            for (auto [j, w] : g.neighbors[i]) {
                const std::size_t c = community[j];
                if (link_to[c] == 0.0) touched.push_back(c);
                link_to[c] += w;
            }
            total[own] -= k_i;
            auto gain = [&](std::size_t c) { return link_to[c] - total[c] * k_i / g.two_m; };

            const double stay_gain = gain(own);
            std::size_t best = own;
            double best_gain = stay_gain;
            std::sort(touched.begin(), touched.end());
            for (std::size_t c : touched) {
                if (c == own) continue;
                const double cand = gain(c);
                // strictly better than staying, and strictly better than the
                // current best (ties keep the lower id seen first)
                if (cand > stay_gain + 1e-12 && (best == own || cand > best_gain + 1e-12)) {
                    best = c;
                    best_gain = cand;
                }
            }
            total[best] += k_i;
            if (best != own) {
                community[i] = best;
                improved = true;
                any_move = true;
            }
            for (std::size_t c : touched) link_to[c] = 0.0;
        }
    }
    return any_move;
}

/// Renumbers to dense ids in order of first appearance; returns the count.
std::size_t renumber(std::vector<std::size_t>& community) {
    std::vector<std::size_t> remap(community.size(), static_cast<std::size_t>(-1));
    std::size_t next = 0;
    for (auto& c : community) {
        if (remap[c] == static_cast<std::size_t>(-1)) remap[c] = next++;
        c = remap[c];
    }
    return next;
}

LevelGraph aggregate(const LevelGraph& g, const std::vector<std::size_t>& community,
                     std::size_t n_comm) {
    LevelGraph out;
    out.neighbors.resize(n_comm);
    out.self_weight.assign(n_comm, 0.0);
    out.strength.assign(n_comm, 0.0);
    out.two_m = g.two_m;
    std::vector<double> acc(n_comm, 0.0);
    std::vector<std::vector<std::size_t>> members(n_comm);
    for (std::size_t i = 0; i < g.size(); ++i) members[community[i]].push_back(i);
    std::vector<std::size_t> touched;
    for (std::size_t c = 0; c < n_comm; ++c) {
        touched.clear();
        for (std::size_t i : members[c]) {
            out.self_weight[c] += g.self_weight[i];
            out.strength[c] += g.strength[i];
            for (auto [j, w] : g.neighbors[i]) {
                const std::size_t d = community[j];
                if (d == c) {
                    out.self_weight[c] += w;
                } else {
                    if (acc[d] == 0.0) touched.push_back(d);
                    acc[d] += w;
                }
            }
        }
        std::sort(touched.begin(), touched.end());
        for (std::size_t d : touched) {
            out.neighbors[c].emplace_back(d, acc[d]);
            acc[d] = 0.0;
        }
    }
    return out;
}

/// Kernighan-Lin style sweep: every node is moved once, best move first
/// (negative gains allowed), then the sequence is cut back to its best
/// prefix. Repeats while that prefix improves Q.
bool kl_refine(const SocialGraph& graph, std::vector<std::size_t>& community) {
    const std::size_t n = graph.size();
    const double m = static_cast<double>(graph.edge_count());
    bool changed = false;
    while (true) {
        std::vector<double> total(n, 0.0);
        for (UserIndex u = 0; u < n; ++u) total[community[u]] += static_cast<double>(graph.degree(u));
        std::vector<bool> locked(n, false);
        std::vector<std::pair<UserIndex, std::size_t>> moves;  // (node, previous community)
        double running = 0.0, best_gain = 0.0;
        std::size_t best_len = 0;
        std::vector<double> link(n, 0.0);
        for (std::size_t step = 0; step < n; ++step) {
            std::size_t empty = 0;
            while (empty < n && total[empty] > 0.0) ++empty;
            double step_best = -std::numeric_limits<double>::infinity();
            UserIndex node = n;
            std::size_t target = n;
            for (UserIndex u = 0; u < n; ++u) {
                if (locked[u]) continue;
                const double k = static_cast<double>(graph.degree(u));
                const std::size_t own = community[u];
                std::vector<std::size_t> cands;
                for (UserIndex v : graph.neighbors(u)) {
                    if (link[community[v]] == 0.0) cands.push_back(community[v]);
                    link[community[v]] += 1.0;
                }
                const double k_own = link[own];
                if (empty < n && total[own] > k) cands.push_back(empty);
                std::sort(cands.begin(), cands.end());
                for (std::size_t c : cands) {
                    if (c == own) continue;
                    const double gain = (link[c] - k_own) / m - k * (total[c] - total[own] + k) / (2.0 * m * m);
                    if (gain > step_best + 1e-12) {
                        step_best = gain;
                        node = u;
                        target = c;
                    }
                }
                for (UserIndex v : graph.neighbors(u)) link[community[v]] = 0.0;
            }
            if (node == n) break;
            const double k = static_cast<double>(graph.degree(node));
            moves.emplace_back(node, community[node]);
            total[community[node]] -= k;
            total[target] += k;
            community[node] = target;
            locked[node] = true;
            running += step_best;
            if (running > best_gain + 1e-12) {
                best_gain = running;
                best_len = moves.size();
            }
        }
        for (std::size_t i = moves.size(); i > best_len; --i) community[moves[i - 1].first] = moves[i - 1].second;
        if (best_len == 0) return changed;
        changed = true;
    }
}

/// One full run: level passes until nothing moves, then a final node-level
/// sweep on the original graph starting from the aggregated partition.
CommunityAssignment louvain_once(const SocialGraph& graph, std::mt19937_64& rng) {
    CommunityAssignment result;
    result.community_of.resize(graph.size());
    std::iota(result.community_of.begin(), result.community_of.end(), std::size_t{0});
    const LevelGraph base = from_social_graph(graph);
    LevelGraph level = base;
    result.pass_modularity.push_back(modularity(graph, result.community_of));

    while (true) {
        std::vector<std::size_t> community(level.size());
        std::iota(community.begin(), community.end(), std::size_t{0});
        if (!move_nodes(level, community, rng)) break;
        const std::size_t n_comm = renumber(community);
        for (auto& c : result.community_of) c = community[c];
        result.pass_modularity.push_back(modularity(graph, result.community_of));
        if (n_comm == level.size()) break;
        level = aggregate(level, community, n_comm);
    }
    if (move_nodes(base, result.community_of, rng)) {
        renumber(result.community_of);
        result.pass_modularity.push_back(modularity(graph, result.community_of));
    }
    if (kl_refine(graph, result.community_of)) {
        renumber(result.community_of);
        result.pass_modularity.push_back(modularity(graph, result.community_of));
    }
    renumber(result.community_of);
    result.modularity = modularity(graph, result.community_of);
    return result;
}

constexpr int kRestarts = 4;

}  // namespace

CommunityAssignment detect_communities(const SocialGraph& graph, std::uint64_t seed) {
    if (graph.edge_count() == 0) {
        CommunityAssignment result;
        result.community_of.resize(graph.size());
        std::iota(result.community_of.begin(), result.community_of.end(), std::size_t{0});
        result.modularity_defined = false;
        return result;
    }
    std::mt19937_64 rng(seed);
    CommunityAssignment best;
    for (int r = 0; r < kRestarts; ++r) {
        CommunityAssignment run = louvain_once(graph, rng);
        if (r == 0 || run.modularity > best.modularity + 1e-12) best = std::move(run);
    }
    return best;
}

void write_communities_csv(const Dataset& dataset, const CommunityAssignment& assignment,
                           const std::filesystem::path& path) {
    if (assignment.community_of.size() != dataset.n_users()) {
        throw ParameterError("community assignment does not match the dataset");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "user_id,community_id\n";
    for (UserIndex u = 0; u < dataset.n_users(); ++u) {
        out << dataset.user_ids()[u] << ',' << assignment.community_of[u] << '\n';
    }
}

}  // namespace socialmkl
