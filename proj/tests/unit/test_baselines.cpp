#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "socialmkl/baselines.hpp"
#include "socialmkl/error.hpp"

using namespace socialmkl;

namespace {

SocialGraph make_graph(std::size_t n, const oracle::Edges& edges) {
    std::vector<std::pair<UserIndex, UserIndex>> e(edges.begin(), edges.end());
    return SocialGraph(n, e);
}

/// Random sparse ratings over a corpus graph.
RatingMatrix random_ratings(std::size_t n, std::size_t items, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution rated(0.5);
    std::uniform_int_distribution<int> value(1, 10);
    std::vector<RatingEntry> e;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t w = 0; w < items; ++w)
            if (rated(rng)) e.push_back({u, w, static_cast<double>(value(rng))});
    return RatingMatrix(n, items, e);
}

}  // namespace

TEST_CASE("fallback names and config validation") {
    for (auto k : {FallbackKind::GlobalMean, FallbackKind::ItemMean, FallbackKind::UserMean, FallbackKind::None}) {
        CHECK(parse_fallback_kind(fallback_kind_name(k)) == k);
    }
    CHECK(fallback_kind_name(FallbackKind::GlobalMean) == "global_mean");
    CHECK_FALSE(parse_fallback_kind("median").has_value());
    BaselineConfig c;
    c.alpha_mni = 1.0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = {};
    c.max_level = 0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("fallback values") {
    RatingMatrix known(3, 2, {{0, 0, 8}, {1, 0, 6}, {1, 1, 4}});
    CHECK(*Fallback(FallbackKind::GlobalMean, known).value(2, 1) == doctest::Approx(6.0));
    CHECK(*Fallback(FallbackKind::ItemMean, known).value(2, 0) == doctest::Approx(7.0));
    CHECK(*Fallback(FallbackKind::UserMean, known).value(1, 0) == doctest::Approx(4.0));
    CHECK(*Fallback(FallbackKind::UserMean, known).value(2, 0) == doctest::Approx(6.0));
    CHECK_FALSE(Fallback(FallbackKind::None, known).value(0, 0).has_value());
    RatingMatrix empty(2, 1, {});
    CHECK(Fallback(FallbackKind::GlobalMean, empty).global_mean() == 5.5);

    // A corpus with mean rating 7.31 falls back to 7.31.
    RatingMatrix corpus(4, 1, {{0, 0, 7.31}, {1, 0, 7.31}, {2, 0, 7.31}});
    const auto g = make_graph(4, {{0, 1}, {1, 2}});
    const auto p = predict_ni(g, corpus, 3, 0, Fallback(FallbackKind::GlobalMean, corpus));
    CHECK(p.from_fallback);
    CHECK(*p.value == doctest::Approx(7.31));
}

TEST_CASE("neighbour influence examples") {
    const auto g = make_graph(4, {{0, 1}, {0, 2}, {0, 3}});
    RatingMatrix r(4, 2, {{1, 0, 8}, {2, 0, 6}, {3, 1, 9}});
    const Fallback fb(FallbackKind::GlobalMean, r);
    const auto p = predict_ni(g, r, 0, 0, fb);
    CHECK_FALSE(p.from_fallback);
    CHECK(*p.value == doctest::Approx(7.0));
    CHECK(*predict_ni(g, r, 0, 1, fb).value == doctest::Approx(9.0));
    const auto none = predict_ni(g, r, 1, 1, Fallback(FallbackKind::None, r));
    CHECK(none.from_fallback);
    CHECK_FALSE(none.value.has_value());
    CHECK_THROWS_AS(predict_ni(g, r, 9, 0, fb), ReferenceError);
}

TEST_CASE("multi-level influence examples") {
    const std::vector<std::optional<double>> both = {std::nullopt, 8.0, 6.0};
    CHECK(*combine_mni(both, 0.5, 2, false) == doctest::Approx(5.5));
    CHECK(*combine_mni(both, 0.5, 2, true) == doctest::Approx(5.5 / 0.75));
    CHECK(*combine_mni(both, 0.5, 2, true) == doctest::Approx(7.3333).epsilon(1e-4));
    const std::vector<std::optional<double>> first = {std::nullopt, 8.0, std::nullopt};
    CHECK(*combine_mni(first, 0.5, 2, false) == doctest::Approx(4.0));
    CHECK(*combine_mni(first, 0.5, 2, true) == doctest::Approx(8.0));
    const std::vector<std::optional<double>> none = {std::nullopt, std::nullopt, std::nullopt};
    CHECK_FALSE(combine_mni(none, 0.5, 2, false).has_value());
    // Levels beyond k are ignored.
    CHECK(*combine_mni(both, 0.5, 1, false) == doctest::Approx(4.0));

    // Path 0-1-2: level 1 of user 0 is {1}, level 2 is {2}.
    const auto g = make_graph(3, {{0, 1}, {1, 2}});
    RatingMatrix r(3, 1, {{1, 0, 8}, {2, 0, 6}});
    BaselineConfig c;
    const Fallback fb(FallbackKind::GlobalMean, r);
    CHECK(*predict_mni(g, r, 0, 0, c, fb).value == doctest::Approx(5.5));
    c.normalize_mni = true;
    CHECK(*predict_mni(g, r, 0, 0, c, fb).value == doctest::Approx(7.3333).epsilon(1e-4));
    const auto levels = bfs_levels(g, 0, 2);
    const auto avgs = mni_level_averages(levels, r, 0);
    CHECK(*avgs[1] == 8.0);
    CHECK(*avgs[2] == 6.0);
}

TEST_CASE("normalised single-level influence equals neighbour influence") {
    BaselineConfig c;
    c.max_level = 1;
    c.normalize_mni = true;
    std::uint64_t seed = 0;
    for (const auto& cg : oracle::small_graph_corpus()) {
        const auto g = make_graph(cg.n, cg.edges);
        const auto r = random_ratings(cg.n, 4, ++seed);
        const Fallback fb(FallbackKind::GlobalMean, r);
        for (UserIndex v = 0; v < cg.n; ++v) {
            for (ItemIndex w = 0; w < 4; ++w) {
                const auto ni = predict_ni(g, r, v, w, fb);
                const auto mni = predict_mni(g, r, v, w, c, fb);
                CHECK(ni.from_fallback == mni.from_fallback);
                CHECK(*ni.value == doctest::Approx(*mni.value).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("kernel similarity CF examples") {
    RatingMatrix r(3, 1, {{1, 0, 8}, {2, 0, 6}});
    const Fallback fb(FallbackKind::GlobalMean, r);
    auto sim = [](UserIndex, UserIndex u) { return u == 1 ? 0.5 : 0.25; };
    CHECK(*predict_cf(sim, r, 0, 0, fb).value == doctest::Approx(5.5 / 0.75));
    auto equal = [](UserIndex, UserIndex) { return 0.3; };
    CHECK(*predict_cf(equal, r, 0, 0, fb).value == doctest::Approx(7.0));
    auto zero = [](UserIndex, UserIndex) { return 0.0; };
    const auto p = predict_cf(zero, r, 0, 0, fb);
    CHECK(p.from_fallback);
    CHECK(*p.value == doctest::Approx(7.0));
}

TEST_CASE("CF properties over random instances") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const std::size_t n = 8;
        const auto r = random_ratings(n, 5, seed);
        Eigen::MatrixXd s(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = u(rng);
        auto sim = [&](UserIndex a, UserIndex b) { return s(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)); };
        auto scaled = [&](UserIndex a, UserIndex b) { return 3.7 * sim(a, b); };
        auto equal = [](UserIndex, UserIndex) { return 0.42; };
        const Fallback fb(FallbackKind::UserMean, r, &r);
        for (UserIndex v = 0; v < n; ++v) {
            for (ItemIndex w = 0; w < 5; ++w) {
                const auto a = predict_cf(sim, r, v, w, fb);
                const auto b = predict_cf(scaled, r, v, w, fb);
                CHECK(*a.value == doctest::Approx(*b.value).epsilon(1e-12));
                const auto c = predict_ucf_bias(sim, r, r, v, w, fb);
                const auto d = predict_ucf_bias(scaled, r, r, v, w, fb);
                CHECK(*c.value == doctest::Approx(*d.value).epsilon(1e-12));

                double sum = 0.0;
                std::size_t cnt = 0;
                for (const auto& x : r.item_ratings(w)) {
                    if (x.user == v) continue;
                    sum += x.value;
                    ++cnt;
                }
                const auto e = predict_cf(equal, r, v, w, fb);
                if (cnt > 0) CHECK(std::abs(*e.value - sum / static_cast<double>(cnt)) <= 1e-12);
                else CHECK(e.from_fallback);
            }
        }
    }
}

TEST_CASE("pearson similarity examples and properties") {
    RatingMatrix r(4, 3, {{0, 0, 2}, {0, 1, 4}, {0, 2, 6}, {1, 0, 6}, {1, 1, 4}, {1, 2, 2}, {2, 0, 2}, {2, 1, 4}, {2, 2, 6}, {3, 0, 9}});
    CHECK(pearson_similarity(r, 0, 1) == doctest::Approx(-1.0));
    CHECK(pearson_similarity(r, 0, 2) == doctest::Approx(1.0));
    CHECK(pearson_similarity(r, 0, 3) == 0.0);
    // Excluding one of three co-rated items leaves two.
    CHECK(pearson_similarity(r, 0, 1, 2) == doctest::Approx(-1.0));
    RatingMatrix flat(2, 3, {{0, 0, 5}, {0, 1, 5}, {0, 2, 5}, {1, 0, 1}, {1, 1, 2}, {1, 2, 3}});
    CHECK(pearson_similarity(flat, 0, 1) == 0.0);

    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto rr = random_ratings(6, 8, seed);
        for (UserIndex a = 0; a < 6; ++a) {
            for (UserIndex b = 0; b < 6; ++b) {
                const double s = pearson_similarity(rr, a, b);
                CHECK(s == pearson_similarity(rr, b, a));
                CHECK(s >= -1.0);
                CHECK(s <= 1.0);
            }
        }
    }
}

TEST_CASE("user CF with bias examples") {
    // u = 1 rated w = 0 with 8 and another item with 6 (mean 7); v = 0 has mean 6.
    RatingMatrix r(2, 2, {{0, 1, 6}, {1, 0, 8}, {1, 1, 6}});
    const Fallback fb(FallbackKind::UserMean, r, &r);
    auto one = [](UserIndex, UserIndex) { return 1.0; };
    const auto p = predict_ucf_bias(one, r, r, 0, 0, fb);
    CHECK_FALSE(p.from_fallback);
    CHECK(*p.value == doctest::Approx(7.0));

    // Neighbours rating at their own means leave m_v.
    RatingMatrix at_mean(3, 2, {{0, 1, 4}, {1, 0, 7}, {1, 1, 7}, {2, 0, 3}, {2, 1, 3}});
    const Fallback fb2(FallbackKind::UserMean, at_mean, &at_mean);
    auto mixed = [](UserIndex, UserIndex u) { return u == 1 ? 0.7 : -0.2; };
    CHECK(*predict_ucf_bias(mixed, at_mean, at_mean, 0, 0, fb2).value == doctest::Approx(4.0));

    auto zero = [](UserIndex, UserIndex) { return 0.0; };
    const auto f = predict_ucf_bias(zero, at_mean, at_mean, 0, 0, fb2);
    CHECK(f.from_fallback);
    CHECK(*f.value == doctest::Approx(4.0));
}
