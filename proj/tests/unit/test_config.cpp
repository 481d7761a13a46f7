#include <doctest.h>

#include "socialmkl/config.hpp"
#include "socialmkl/error.hpp"
#include "test_util.hpp"

using namespace socialmkl;
using nlohmann::json;

TEST_CASE("config sections round trip through json") {
    SyntheticParams s;
    s.n_users = 123;
    s.noise_std = 0.25;
    s.seed = 77;
    CHECK(to_json(synthetic_params_from_json(to_json(s))) == to_json(s));

    KernelConfig k;
    k.alpha = 0.35;
    CHECK(to_json(kernel_config_from_json(to_json(k))) == to_json(k));

    SvrConfig v;
    v.C = 3.5;
    v.epsilon = 0.05;
    CHECK(to_json(svr_config_from_json(to_json(v))) == to_json(v));

    MklConfig m;
    m.lambda = 2.0;
    m.step_growth = 1.0;
    CHECK(to_json(mkl_config_from_json(to_json(m))) == to_json(m));

    BaselineConfig b;
    b.max_level = 4;
    b.fallback = FallbackKind::ItemMean;
    CHECK(to_json(baseline_config_from_json(to_json(b))) == to_json(b));

    TuningConfig t;
    t.alpha_grid = {0.2, 0.4};
    t.enabled = false;
    CHECK(to_json(tuning_config_from_json(to_json(t))) == to_json(t));
}

TEST_CASE("run config round trip") {
    RunConfig c;
    c.synthetic = SyntheticParams{};
    c.evaluation.methods = {"NI", "COMBINED"};
    c.evaluation.folds = 4;
    c.evaluation.seed = 9;
    c.evaluation.kernel_cache = "/tmp/cache";
    c.out = "/tmp/out";
    const json j = to_json(c);
    const RunConfig back = run_config_from_json(j);
    CHECK(to_json(back) == j);
    CHECK(back.evaluation.methods == c.evaluation.methods);
    CHECK(back.evaluation.kernel_cache == c.evaluation.kernel_cache);
    CHECK_NOTHROW(back.validate());
}

TEST_CASE("unknown keys and wrong types are rejected") {
    CHECK_THROWS_AS(run_config_from_json(json{{"foldz", 3}}), ParameterError);
    CHECK_THROWS_AS(run_config_from_json(json{{"svr", {{"C", 1.0}, {"gamma", 2}}}}), ParameterError);
    CHECK_THROWS_AS(run_config_from_json(json{{"folds", "ten"}}), ParameterError);
    CHECK_THROWS_AS(run_config_from_json(json{{"folds", -2}}), ParameterError);
    CHECK_THROWS_AS(run_config_from_json(json{{"clamp", 1}}), ParameterError);
    CHECK_THROWS_AS(run_config_from_json(json::array()), ParameterError);
    CHECK_THROWS_AS(synthetic_params_from_json(json{{"users", 10}}), ParameterError);
    CHECK_THROWS_AS(baseline_config_from_json(json{{"fallback", "median"}}), ParameterError);
    CHECK_THROWS_AS(run_config_from_json(json{{"data", {{"ratings", "r.csv"}}}}), ParameterError);
}

TEST_CASE("run config validation") {
    RunConfig none;
    none.evaluation.methods = {"NI"};
    CHECK_THROWS_AS(none.validate(), ParameterError);

    RunConfig both = none;
    both.synthetic = SyntheticParams{};
    both.data = DatasetPaths{"a.csv", "b.csv", std::nullopt, std::nullopt};
    CHECK_THROWS_AS(both.validate(), ParameterError);

    RunConfig missing = none;
    missing.data = DatasetPaths{"/nonexistent/r.csv", "/nonexistent/f.csv", std::nullopt, std::nullopt};
    CHECK_THROWS_AS(missing.validate(), ParameterError);

    RunConfig bad_synth = none;
    bad_synth.synthetic = SyntheticParams{};
    bad_synth.synthetic->n_users = 0;
    CHECK_THROWS_AS(bad_synth.validate(), ParameterError);
}

TEST_CASE("relative data paths resolve against the config file") {
    testutil::TempDir dir("config");
    testutil::write_file(dir / "ratings.csv", "user_id,item_id,rating\nu0,m0,5\nu1,m0,6\n");
    testutil::write_file(dir / "friends.csv", "user_id_a,user_id_b\nu0,u1\n");
    testutil::write_file(dir / "run.json",
                         R"({"data": {"ratings": "ratings.csv", "friendships": "friends.csv"},
                             "methods": ["NI"], "folds": 2, "out": "results"})");
    const RunConfig c = load_run_config(dir / "run.json");
    REQUIRE(c.data);
    CHECK(c.data->ratings == dir / "ratings.csv");
    CHECK(c.out == dir / "results");
    CHECK_NOTHROW(c.validate());
    const Dataset d = load_run_dataset(c);
    CHECK(d.n_users() == 2);

    testutil::write_file(dir / "broken.json", "{\"folds\": ");
    CHECK_THROWS_AS(load_run_config(dir / "broken.json"), ParameterError);
    CHECK_THROWS_AS(load_run_config(dir / "absent.json"), IoError);
}
