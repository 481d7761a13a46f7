#include <doctest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "socialmkl/community.hpp"
#include "socialmkl/error.hpp"
#include "test_util.hpp"

using namespace socialmkl;

namespace {

SocialGraph make_graph(std::size_t n, const oracle::Edges& edges) {
    std::vector<std::pair<UserIndex, UserIndex>> e(edges.begin(), edges.end());
    return SocialGraph(n, e);
}

oracle::Edges clique(std::size_t from, std::size_t to) {
    oracle::Edges e;
    for (std::size_t i = from; i < to; ++i)
        for (std::size_t j = i + 1; j < to; ++j) e.emplace_back(i, j);
    return e;
}

bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j)
            if ((a[i] == a[j]) != (b[i] == b[j])) return false;
    return true;
}

}  // namespace

TEST_CASE("modularity examples") {
    const oracle::Edges bridged = {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}, {2, 3}};
    const auto g = make_graph(6, bridged);
    const std::vector<std::size_t> one(6, 0);
    CHECK(std::abs(modularity(g, one)) <= 1e-15);
    const std::vector<std::size_t> halves = {0, 0, 0, 1, 1, 1};
    CHECK(modularity(g, halves) == doctest::Approx(2.0 * (3.0 / 7.0 - 0.25)).epsilon(1e-12));
    CHECK(modularity(g, halves) == doctest::Approx(0.35714285714).epsilon(1e-9));

    const auto pair = make_graph(2, {{0, 1}});
    const std::vector<std::size_t> singles = {0, 1};
    CHECK(modularity(pair, singles) == doctest::Approx(-0.5));

    CHECK_THROWS_AS(modularity(SocialGraph(3), std::vector<std::size_t>{0, 1, 2}), ParameterError);
}

TEST_CASE("modularity agrees with the definition on the corpus") {
    std::mt19937_64 rng(8);
    for (const auto& cg : oracle::small_graph_corpus()) {
        const auto g = make_graph(cg.n, cg.edges);
        const auto a = oracle::adjacency(cg.n, cg.edges);
        std::uniform_int_distribution<std::size_t> pick(0, 2);
        for (int t = 0; t < 5; ++t) {
            std::vector<std::size_t> c(cg.n);
            for (auto& x : c) x = pick(rng);
            const double q = modularity(g, c);
            CHECK(q == doctest::Approx(oracle::modularity(a, c)).epsilon(1e-12));
            CHECK(q >= -1.0);
            CHECK(q <= 1.0);
        }
    }
}

TEST_CASE("two five-cliques joined by a bridge are recovered exactly") {
    auto e = clique(0, 5);
    for (auto p : clique(5, 10)) e.push_back(p);
    e.emplace_back(4, 5);
    const auto g = make_graph(10, e);
    std::vector<std::size_t> best;
    oracle::best_modularity(oracle::adjacency(10, e), &best);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto r = detect_communities(g, seed);
        CHECK(r.community_count() == 2);
        CHECK(same_partition(r.community_of, {0, 0, 0, 0, 0, 1, 1, 1, 1, 1}));
        CHECK(same_partition(r.community_of, best));
    }
}

TEST_CASE("complete graph stays one community") {
    const auto g = make_graph(4, clique(0, 4));
    const auto r = detect_communities(g, 1);
    CHECK(r.community_count() == 1);
    CHECK(std::abs(r.modularity) <= 1e-12);
    CHECK(oracle::best_modularity(oracle::adjacency(4, clique(0, 4))) == doctest::Approx(0.0));
}

TEST_CASE("disconnected triangles form one community each") {
    const auto g = make_graph(6, {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}});
    const auto r = detect_communities(g, 4);
    CHECK(same_partition(r.community_of, {0, 0, 0, 1, 1, 1}));
}

TEST_CASE("edgeless graph gives singletons with undefined modularity") {
    const auto r = detect_communities(SocialGraph(4), 1);
    CHECK_FALSE(r.modularity_defined);
    CHECK(r.community_count() == 4);
}

TEST_CASE("detected modularity properties on the corpus") {
    auto corpus = oracle::small_graph_corpus(8);
    for (const auto& cg : corpus) {
        if (cg.n > 8) continue;
        const auto g = make_graph(cg.n, cg.edges);
        const auto a = oracle::adjacency(cg.n, cg.edges);
        const double optimum = oracle::best_modularity(a);
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const auto r = detect_communities(g, seed);
            REQUIRE(r.community_of.size() == cg.n);
            CHECK(std::abs(r.modularity - modularity(g, r.community_of)) <= 1e-12);
            CHECK(std::abs(r.modularity - oracle::modularity(a, r.community_of)) <= 1e-12);
            for (std::size_t i = 1; i < r.pass_modularity.size(); ++i) {
                CHECK(r.pass_modularity[i] >= r.pass_modularity[i - 1] - 1e-12);
            }
            if (optimum > 1e-12) CHECK(r.modularity >= 0.95 * optimum);
            // Ids are dense from 0 in order of first appearance.
            std::size_t next = 0;
            for (auto c : r.community_of) {
                CHECK(c <= next);
                if (c == next) ++next;
            }
        }
    }
}

TEST_CASE("community detection is deterministic for a seed") {
    const auto d = generate_synthetic({});
    const auto a = detect_communities(d.graph(), 9);
    const auto b = detect_communities(d.graph(), 9);
    CHECK(a.community_of == b.community_of);
    CHECK(a.modularity == b.modularity);
    CHECK(a.modularity > 0.3);
}

TEST_CASE("communities csv export") {
    const auto d = testutil::make_dataset(3, 1, {{0, 0, 5.0}}, {{0, 1}});
    const auto r = detect_communities(d.graph(), 1);
    testutil::TempDir dir("communities");
    write_communities_csv(d, r, dir / "communities.csv");
    const auto text = testutil::read_file(dir / "communities.csv");
    CHECK(text.rfind("user_id,community_id\n", 0) == 0);
    CHECK(text.find("u2,") != std::string::npos);
}
