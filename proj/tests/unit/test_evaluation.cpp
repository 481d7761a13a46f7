#include <doctest.h>

#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "socialmkl/error.hpp"
#include "socialmkl/evaluation.hpp"
#include "test_util.hpp"

using namespace socialmkl;

namespace {

/// Clique communities whose members all rate every item with the community constant.
Dataset constant_communities(std::size_t per, std::size_t n_comm, std::size_t n_items) {
    const std::size_t n = per * n_comm;
    std::vector<RatingEntry> r;
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t u = 0; u < n; ++u) {
        const std::size_t c = u / per;
        for (std::size_t w = 0; w < n_items; ++w) r.push_back({u, w, 3.0 + 2.5 * static_cast<double>(c)});
        for (std::size_t v = u + 1; v < n; ++v) {
            if (v / per == c) e.emplace_back(u, v);
        }
    }
    return testutil::make_dataset(n, n_items, r, e, std::vector<TokenSet>(n, TokenSet{"a=1"}),
                                  std::vector<TokenSet>(n, TokenSet{"x"}));
}

EvaluationConfig recovery_config(std::vector<std::string> methods) {
    EvaluationConfig c;
    c.methods = std::move(methods);
    c.folds = 3;
    c.repetitions = 1;
    c.tuning.enabled = false;
    c.svr.epsilon = 0.0;
    c.svr.C = 1e4;
    c.svr.tolerance = 1e-10;
    return c;
}

Dataset small_synthetic(std::uint64_t seed = 5) {
    SyntheticParams p;
    p.n_users = 60;
    p.n_items = 8;
    p.mean_degree = 6;
    p.n_communities = 3;
    p.ratings_per_user_mean = 5;
    p.seed = seed;
    return generate_synthetic(p);
}

EvaluationConfig quick_config(std::vector<std::string> methods) {
    EvaluationConfig c;
    c.methods = std::move(methods);
    c.folds = 3;
    c.repetitions = 2;
    c.tuning.enabled = false;
    c.mkl.max_iters = 5;
    return c;
}

}  // namespace

TEST_CASE("rmse examples") {
    const std::vector<double> p{1, 2, 3, 4}, a{2, 4, 1, 5};
    CHECK(rmse(p, a) == doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));
    CHECK(rmse(std::vector<double>{3.0}, std::vector<double>{5.0}) == 2.0);
    CHECK(rmse(p, p) == 0.0);
    CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), ParameterError);
    CHECK_THROWS_AS(rmse(p, std::vector<double>{1.0}), ParameterError);
}

TEST_CASE("paired t test matches a frozen reference") {
    const std::vector<double> a{1.2, 1.5, 1.1, 1.9, 1.4, 1.3, 1.7, 1.0, 1.6, 1.25};
    const std::vector<double> b{1.0, 1.6, 0.9, 1.5, 1.2, 1.1, 1.65, 1.05, 1.3, 1.2};
    const auto r = paired_t_test(a, b);
    CHECK(r.df == 9);
    CHECK(r.t == doctest::Approx(2.9512728622544984).epsilon(1e-10));
    CHECK(r.p == doctest::Approx(0.016187413635504393).epsilon(1e-8));
    const auto swapped = paired_t_test(b, a);
    CHECK(swapped.t == doctest::Approx(-r.t).epsilon(1e-14));
    CHECK(swapped.p == doctest::Approx(r.p).epsilon(1e-14));
}

TEST_CASE("paired t test degenerate differences") {
    const std::vector<double> a{1, 2, 3, 4};
    const auto same = paired_t_test(a, a);
    CHECK(same.t == 0.0);
    CHECK(same.p == 1.0);
    const std::vector<double> shifted{2, 3, 4, 5};
    const auto s = paired_t_test(shifted, a);
    CHECK(std::isinf(s.t));
    CHECK(s.t > 0);
    CHECK(s.p == 0.0);
    CHECK_THROWS_AS(paired_t_test(a, std::vector<double>{1, 2}), ParameterError);
    CHECK_THROWS_AS(paired_t_test(std::vector<double>{1}, std::vector<double>{2}), ParameterError);
}

TEST_CASE("friend bin table pools residuals per bin") {
    // Star: centre 0 has 4 friends, leaves have 1, node 5 is isolated.
    const std::vector<std::pair<UserIndex, UserIndex>> star{{0, 1}, {0, 2}, {0, 3}, {0, 4}};
    const SocialGraph g(6, star);
    MethodResult m;
    m.name = "X";
    m.residuals.resize(2);
    m.residuals[0] = {{1, 0, 0, 5.0, 5.0, 3.0, false}, {2, 0, 0, 4.0, 4.0, 4.0, false}};
    m.residuals[1] = {{0, 1, 0, 6.0, 12.0, 7.0, false}, {5, 1, 0, 2.0, 2.0, 1.0, true}};
    const auto rows = friend_bin_table({m}, g);
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].bin == FriendBin::Zero);
    CHECK(rows[0].users == 1);
    CHECK(rows[0].pairs == 1);
    CHECK(rows[0].rmse.at("X") == doctest::Approx(1.0));
    const auto& one_to_five = rows[1];
    CHECK(one_to_five.bin == FriendBin::From1To5);
    CHECK(one_to_five.users == 3);
    CHECK(one_to_five.pairs == 3);
    // Errors 2, 0, -1 over every 1-5 pair, which is all of them but the isolated one.
    CHECK(one_to_five.rmse.at("X") == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-14));
    CHECK(rows[2].rmse.empty());
    const auto raw = friend_bin_table({m}, g, false);
    CHECK(raw[1].rmse.at("X") == doctest::Approx(std::sqrt((4.0 + 0.0 + 25.0) / 3.0)).epsilon(1e-14));
}

TEST_CASE("single populated bin equals the overall RMSE") {
    const Dataset d = small_synthetic();
    EvaluationConfig c = quick_config({"NI"});
    const auto report = run_cross_validation(d, c);
    const auto* ni = report.find("NI");
    REQUIRE(ni);
    // Put every user in the 1-5 bin: a ring.
    std::vector<std::pair<UserIndex, UserIndex>> ring;
    for (std::size_t u = 0; u < d.n_users(); ++u) ring.emplace_back(u, (u + 1) % d.n_users());
    const SocialGraph g(d.n_users(), ring);
    const auto rows = friend_bin_table({*ni}, g);
    double ss = 0;
    std::size_t n = 0;
    for (const auto& rep : ni->residuals) {
        for (const auto& r : rep) {
            ss += (r.prediction - r.actual) * (r.prediction - r.actual);
            ++n;
        }
    }
    CHECK(rows[1].pairs == n);
    CHECK(rows[1].rmse.at("NI") == doctest::Approx(std::sqrt(ss / static_cast<double>(n))).epsilon(1e-12));
    CHECK(rows[0].pairs == 0);
}

TEST_CASE("NI on a three-user path") {
    // Path 0-1-2; every user is alone in its fold, so the others are known.
    const Dataset d = testutil::make_dataset(3, 2, {{0, 0, 2}, {1, 0, 5}, {2, 0, 8}, {0, 1, 4}, {2, 1, 6}},
                                             {{0, 1}, {1, 2}});
    EvaluationConfig c;
    c.methods = {"NI"};
    c.folds = 3;
    c.repetitions = 1;
    c.tuning.enabled = false;
    const auto report = run_cross_validation(d, c);
    const auto& res = report.find("NI")->residuals.at(0);
    REQUIRE(res.size() == 5);
    auto pred = [&](std::uint32_t u, std::uint32_t w) -> const Residual& {
        for (const auto& r : res) {
            if (r.user == u && r.item == w) return r;
        }
        throw std::logic_error("missing pair");
    };
    CHECK(pred(0, 0).prediction == doctest::Approx(5.0));
    CHECK_FALSE(pred(0, 0).from_fallback);
    CHECK(pred(1, 0).prediction == doctest::Approx(5.0));
    CHECK(pred(2, 0).prediction == doctest::Approx(5.0));
    // Friend 1 never rated item 1: global mean of the known ratings.
    CHECK(pred(0, 1).prediction == doctest::Approx(19.0 / 3.0));
    CHECK(pred(0, 1).from_fallback);
    CHECK(pred(2, 1).prediction == doctest::Approx(11.0 / 3.0));
    CHECK(pred(2, 1).from_fallback);
    const double expect = std::sqrt((9.0 + 0.0 + 9.0 + std::pow(19.0 / 3.0 - 4.0, 2) + std::pow(11.0 / 3.0 - 6.0, 2)) / 5.0);
    CHECK(report.find("NI")->rmse_mean() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(report.find("NI")->coverage() == doctest::Approx(3.0 / 5.0));
}

TEST_CASE("community-constant ratings are recovered by the community kernel") {
    const Dataset d = constant_communities(5, 3, 4);
    const auto report = run_cross_validation(d, recovery_config({"K_COM"}));
    CHECK(report.find("K_COM")->rmse_mean() < 1e-6);
}

TEST_CASE("combined error on community-constant ratings vanishes as communities grow") {
    // Held-out users see the graph kernels' diagonal instead of their
    // within-community value, so the combined fit is only asymptotically exact.
    std::vector<double> errs;
    for (std::size_t per : {5u, 10u, 40u}) {
        const Dataset d = constant_communities(per, 3, 4);
        errs.push_back(run_cross_validation(d, recovery_config({"COMBINED"})).find("COMBINED")->rmse_mean());
    }
    CHECK(errs[1] < errs[0]);
    CHECK(errs[2] < errs[1]);
    CHECK(errs[2] < 0.05);
}

TEST_CASE("report aggregates per repetition") {
    const Dataset d = small_synthetic();
    EvaluationConfig c = quick_config({"NI", "K_COM"});
    c.repetitions = 10;
    c.threads = 4;
    std::size_t callbacks = 0;
    const auto report = run_cross_validation(d, c, [&](const EvaluationReport& r) {
        ++callbacks;
        CHECK(r.repetitions_done == callbacks);
    });
    CHECK(callbacks == 10);
    CHECK(report.repetitions_done == 10);
    for (const auto& m : report.methods) {
        REQUIRE(m.rmse_per_rep.size() == 10);
        CHECK(m.rmse_clamped_per_rep == m.rmse_per_rep);
        CHECK(m.rmse_unclamped_per_rep.size() == 10);
        const double mean = std::accumulate(m.rmse_per_rep.begin(), m.rmse_per_rep.end(), 0.0) / 10.0;
        double ss = 0;
        for (double v : m.rmse_per_rep) ss += (v - mean) * (v - mean);
        CHECK(m.rmse_mean() == doctest::Approx(mean).epsilon(1e-12));
        CHECK(m.rmse_std() == doctest::Approx(std::sqrt(ss / 9.0)).epsilon(1e-12));
        REQUIRE(m.residuals.size() == 10);
        std::size_t fallback = 0, pairs = 0;
        for (std::size_t rep = 0; rep < 10; ++rep) {
            std::vector<double> p, a;
            for (const auto& r : m.residuals[rep]) {
                p.push_back(r.prediction);
                a.push_back(r.actual);
                fallback += r.from_fallback ? 1 : 0;
            }
            pairs += p.size();
            CHECK(rmse(p, a) == doctest::Approx(m.rmse_per_rep[rep]).epsilon(1e-12));
        }
        CHECK(pairs == m.pairs);
        CHECK(m.coverage() + static_cast<double>(fallback) / static_cast<double>(pairs) ==
              doctest::Approx(1.0).epsilon(1e-15));
        // Every rated pair is predicted once per repetition.
        CHECK(m.pairs == 10 * d.ratings().size());
    }
}

TEST_CASE("clamping only ever helps") {
    const Dataset d = small_synthetic(9);
    const auto report = run_cross_validation(d, quick_config({"K_ID", "CF-S_AVG"}));
    for (const auto& m : report.methods) {
        for (std::size_t i = 0; i < m.rmse_per_rep.size(); ++i) {
            CHECK(m.rmse_clamped_per_rep[i] <= m.rmse_unclamped_per_rep[i] + 1e-12);
        }
        for (const auto& rep : m.residuals) {
            for (const auto& r : rep) {
                CHECK(r.prediction >= kMinRating);
                CHECK(r.prediction <= kMaxRating);
            }
        }
    }
}

TEST_CASE("runs are deterministic apart from timings and thread count") {
    const Dataset d = small_synthetic();
    EvaluationConfig c = quick_config({"NI", "MNI", "UCF-S_Pearson", "K_ACT2", "COMBINED"});
    c.tuning.enabled = true;
    c.tuning.alpha_grid = {0.3, 0.7};
    c.tuning.mni_alpha_grid = {0.3, 0.7};
    c.tuning.mni_max_level = 3;
    c.tuning.c_grid = {1.0};
    c.tuning.epsilon_grid = {0.1};
    auto strip = [](nlohmann::json j) {
        for (auto& m : j["methods"]) m.erase("seconds");
        j["config"].erase("threads");
        return j;
    };
    c.threads = 1;
    const auto one = strip(report_to_json(run_cross_validation(d, c)));
    c.threads = 4;
    const auto four = strip(report_to_json(run_cross_validation(d, c)));
    CHECK(one == four);
    c.seed = 2;
    const auto other = strip(report_to_json(run_cross_validation(d, c)));
    CHECK(one != other);
}

TEST_CASE("unknown methods are rejected before any work") {
    const Dataset d = small_synthetic();
    EvaluationConfig c = quick_config({"NI", "BOGUS"});
    bool called = false;
    try {
        run_cross_validation(d, c, [&](const EvaluationReport&) { called = true; });
        FAIL("expected ParameterError");
    } catch (const ParameterError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("BOGUS") != std::string::npos);
        CHECK(msg.find("COMBINED") != std::string::npos);
    }
    CHECK_FALSE(called);
    c.methods = {"NI"};
    c.folds = d.n_users() + 1;
    CHECK_THROWS_AS(run_cross_validation(d, c), ParameterError);
    c.folds = 1;
    CHECK_THROWS_AS(run_cross_validation(d, c), ParameterError);
}

TEST_CASE("every registered method parses and runs") {
    const auto& names = registered_methods();
    CHECK(names.size() == 24);
    for (const auto& n : names) CHECK(parse_method(n).has_value());
    CHECK_FALSE(parse_method("K_ONES").has_value());
    CHECK(parse_method("CF-S_ID-S_ACT2")->kernels ==
          std::vector<KernelLabel>{KernelLabel::ImpactDistribution, KernelLabel::Action2});
    CHECK(parse_method("UCF-S_CT-S_Pearson")->kernels == std::vector<KernelLabel>{KernelLabel::CommuteTime});
    CHECK(parse_method("UCF-S_Pearson")->kernels.empty());
    CHECK(parse_method("CF-S_AVG")->kernels.size() == 7);

    const Dataset d = small_synthetic();
    EvaluationConfig c = quick_config(names);
    c.repetitions = 1;
    c.threads = 4;
    const auto report = run_cross_validation(d, c);
    REQUIRE(report.methods.size() == names.size());
    for (const auto& m : report.methods) {
        INFO(m.name);
        CHECK(std::isfinite(m.rmse_mean()));
        CHECK(m.rmse_mean() <= kMaxRating - kMinRating);
    }
    CHECK(report.eta_fits > 0);
}

TEST_CASE("strict leakage hides test users from the profile kernels") {
    const Dataset d = small_synthetic();
    EvaluationConfig c = quick_config({"K_ACT2", "UCF-S_Pearson"});
    const auto loose = run_cross_validation(d, c);
    c.strict_leakage = true;
    const auto strict = run_cross_validation(d, c);
    for (const auto& name : {"K_ACT2", "UCF-S_Pearson"}) {
        CHECK(std::isfinite(strict.find(name)->rmse_mean()));
        CHECK(strict.find(name)->rmse_mean() != loose.find(name)->rmse_mean());
    }
}

TEST_CASE("report json round trip and export") {
    const Dataset d = small_synthetic();
    const auto report = run_cross_validation(d, quick_config({"NI", "COMBINED"}));
    const auto back = report_from_json(report_to_json(report));
    CHECK(report_to_json(back)["methods"] == report_to_json(report)["methods"]);
    CHECK(back.eta_average == report.eta_average);
    REQUIRE(back.bins.size() == report.bins.size());
    for (std::size_t i = 0; i < back.bins.size(); ++i) {
        CHECK(back.bins[i].bin == report.bins[i].bin);
        CHECK(back.bins[i].rmse == report.bins[i].rmse);
    }
    double eta_sum = 0;
    for (double v : report.eta_average) {
        CHECK(v >= 0.0);
        eta_sum += v;
    }
    CHECK(eta_sum > 0.0);

    testutil::TempDir dir("export");
    export_report(report, dir.path());
    for (const char* f : {"report.json", "table3.csv", "table4.csv", "fig4.csv"}) {
        CHECK(std::filesystem::exists(dir / f));
    }
    const auto t4 = testutil::read_file(dir / "table4.csv");
    std::vector<std::string> names;
    std::size_t pos = t4.find('\n') + 1;
    while (pos < t4.size()) {
        const auto comma = t4.find(',', pos);
        names.push_back(t4.substr(pos, comma - pos));
        pos = t4.find('\n', pos) + 1;
    }
    CHECK(names == std::vector<std::string>{"ONES", "K_ID", "K_CT", "K_COM", "K_DEM", "K_CLA", "K_ACT1", "K_ACT2"});
    const auto fig4 = testutil::read_file(dir / "fig4.csv");
    CHECK(fig4.rfind("bin,users,pairs,NI,COMBINED\n", 0) == 0);
    CHECK(std::count(fig4.begin(), fig4.end(), '\n') == 7);

    EvaluationReport one;
    one.methods.push_back(report.methods[0]);
    testutil::TempDir dir1("export1");
    export_report(one, dir1.path());
    const auto t3 = testutil::read_file(dir1 / "table3.csv");
    CHECK(std::count(t3.begin(), t3.end(), '\n') == 2);
    CHECK(t3.rfind("method,rmse_mean,rmse_std\nNI,", 0) == 0);

    CHECK_THROWS_AS(export_report(EvaluationReport{}, dir1.path()), ParameterError);
    CHECK_THROWS_AS(report_from_json(nlohmann::json{{"methods", 1}}), ValidationError);
    CHECK(format_summary(report).find("COMBINED") != std::string::npos);
}

TEST_CASE("parallel_for visits every index once and rethrows") {
    for (std::size_t threads : {1u, 3u, 8u}) {
        std::vector<std::atomic<int>> hits(100);
        parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
        for (const auto& h : hits) CHECK(h.load() == 1);
    }
    CHECK_THROWS_WITH_AS(parallel_for(20, 4,
                                      [](std::size_t i) {
                                          if (i == 7 || i == 13) throw std::runtime_error("at " + std::to_string(i));
                                      }),
                         "at 7", std::runtime_error);
    parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}
