#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

RunResult run(const std::string& args, const testutil::TempDir& scratch) {
    const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
    const std::string cmd = std::string(SOCIALMKL_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = testutil::read_file(out);
    r.err = testutil::read_file(err);
    return r;
}

void write_json(const fs::path& path, const nlohmann::json& j) { testutil::write_file(path, j.dump(2)); }

nlohmann::json small_synthetic() {
    return {{"n_users", 80}, {"n_items", 10}, {"mean_degree", 8.0}, {"n_communities", 3},
            {"ratings_per_user_mean", 6.0}, {"seed", 3}};
}

}  // namespace

TEST_CASE("synth writes a reproducible dataset") {
    testutil::TempDir dir("cli_synth");
    const auto a = run("synth --out " + (dir / "a").string() + " --seed 11", dir);
    REQUIRE(a.code == 0);
    for (const char* f : {"ratings.csv", "friendships.csv", "demographics.csv", "claims.csv"}) {
        CHECK(fs::exists(dir / "a" / f));
    }
    CHECK(a.out.find("ratings.csv") != std::string::npos);
    REQUIRE(run("synth --out " + (dir / "b").string() + " --seed 11", dir).code == 0);
    REQUIRE(run("synth --out " + (dir / "c").string() + " --seed 12", dir).code == 0);
    for (const char* f : {"ratings.csv", "friendships.csv", "demographics.csv", "claims.csv"}) {
        CHECK(testutil::read_file(dir / "a" / f) == testutil::read_file(dir / "b" / f));
    }
    CHECK(testutil::read_file(dir / "a" / "ratings.csv") != testutil::read_file(dir / "c" / "ratings.csv"));
}

TEST_CASE("synth rejects bad parameters") {
    testutil::TempDir dir("cli_synth_bad");
    write_json(dir / "p.json", {{"n_users", 0}});
    const auto r = run("synth --params " + (dir / "p.json").string() + " --out " + (dir / "o").string(), dir);
    CHECK(r.code == 2);
    CHECK(r.err.find("error") != std::string::npos);
    write_json(dir / "q.json", {{"n_userz", 5}});
    CHECK(run("synth --params " + (dir / "q.json").string() + " --out " + (dir / "o").string(), dir).code == 2);
    CHECK(run("synth", dir).code == 2);
    CHECK(run("frobnicate", dir).code == 2);
}

TEST_CASE("kernels uses and repairs the cache") {
    testutil::TempDir dir("cli_kernels");
    write_json(dir / "run.json", {{"synthetic", small_synthetic()}, {"methods", {"NI"}}});
    const std::string args =
        "kernels --config " + (dir / "run.json").string() + " --kernel-cache " + (dir / "cache").string();
    const auto first = run(args, dir);
    REQUIRE(first.code == 0);
    CHECK(first.out.find("FAIL") == std::string::npos);
    CHECK(first.err.find(" 0 loaded") != std::string::npos);
    const auto second = run(args, dir);
    REQUIRE(second.code == 0);
    CHECK(second.err.find(" 0 built") != std::string::npos);

    // Truncate one entry: it is rebuilt with a warning.
    fs::path victim;
    for (const auto& e : fs::directory_iterator(dir / "cache")) victim = e.path();
    REQUIRE(!victim.empty());
    testutil::write_file(victim, "junk");
    const auto third = run(args, dir);
    CHECK(third.code == 0);
    CHECK(third.err.find("warning") != std::string::npos);
    CHECK(third.err.find(" 1 built") != std::string::npos);
}

TEST_CASE("evaluate dry run and method validation") {
    testutil::TempDir dir("cli_dry");
    write_json(dir / "run.json", {{"synthetic", small_synthetic()}, {"methods", {"NI", "COMBINED"}}});
    const std::string cfg = "evaluate --config " + (dir / "run.json").string() + " --out " + (dir / "o").string();
    const auto dry = run(cfg + " --dry-run", dir);
    REQUIRE(dry.code == 0);
    CHECK(dry.out.find("plan:") != std::string::npos);
    CHECK(dry.out.find("COMBINED") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "o"));

    const auto bad = run(cfg + " --methods NI,NOPE", dir);
    CHECK(bad.code == 2);
    CHECK(bad.err.find("NOPE") != std::string::npos);
    CHECK(bad.err.find("UCF-S_Pearson") != std::string::npos);
    CHECK(run(cfg + " --folds 1", dir).code == 2);
    CHECK(run(cfg + " --clamp --no-clamp", dir).code == 2);

    write_json(dir / "bad.json", {{"synthetic", small_synthetic()}, {"methods", {"NI"}}, {"foldz", 3}});
    CHECK(run("evaluate --dry-run --config " + (dir / "bad.json").string(), dir).code == 2);
}

TEST_CASE("evaluate and report on a small synthetic set") {
    testutil::TempDir dir("cli_eval");
    write_json(dir / "run.json", {{"synthetic", small_synthetic()},
                                  {"methods", {"NI", "MNI", "COMBINED"}},
                                  {"folds", 4},
                                  {"repetitions", 2},
                                  {"tuning", {{"enabled", false}}}});
    const auto r = run("evaluate --config " + (dir / "run.json").string() + " --out " + (dir / "o").string() +
                           " --threads 2",
                       dir);
    REQUIRE(r.code == 0);
    for (const char* f : {"report.json", "table3.csv", "table4.csv", "fig4.csv"}) {
        CHECK(fs::exists(dir / "o" / f));
    }
    CHECK_FALSE(fs::exists(dir / "o" / "report.json.partial"));
    const auto report = nlohmann::json::parse(testutil::read_file(dir / "o" / "report.json"));
    std::map<std::string, double> rmse;
    for (const auto& m : report["methods"]) rmse[m["name"]] = m["rmse_mean"].get<double>();
    REQUIRE(rmse.size() == 3);
    CHECK(rmse["COMBINED"] < rmse["NI"]);
    CHECK(rmse["COMBINED"] < rmse["MNI"]);
    CHECK(report["config"]["run"]["synthetic"]["n_users"] == 80);

    const auto rep = run("report --in " + (dir / "o").string() + " --out " + (dir / "again").string(), dir);
    REQUIRE(rep.code == 0);
    CHECK(rep.out.find("COMBINED") != std::string::npos);
    CHECK(testutil::read_file(dir / "again" / "table3.csv") == testutil::read_file(dir / "o" / "table3.csv"));
    CHECK(run("report --in " + (dir / "missing").string(), dir).code == 1);
}
