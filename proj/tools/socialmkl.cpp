// socialmkl: dataset synthesis, kernel construction and cross-validated
// evaluation of rating predictors.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "socialmkl/config.hpp"
#include "socialmkl/dataset.hpp"
#include "socialmkl/error.hpp"
#include "socialmkl/evaluation.hpp"
#include "socialmkl/kernels.hpp"

namespace fs = std::filesystem;
using namespace socialmkl;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPsd = 3;

enum class Level { Info, Warn, Error };

void log(Level level, const std::string& msg) {
    const char* tag = level == Level::Info ? "info" : level == Level::Warn ? "warn" : "error";
    std::cerr << "[" << tag << "] " << msg << "\n";
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParameterError(path.string() + ": " + e.what());
    }
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

/// Maps library errors onto exit codes.
template <typename F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const ParameterError& e) {
        log(Level::Error, e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        log(Level::Error, e.what());
        return kExitRuntime;
    }
}

struct SynthArgs {
    std::string params;
    std::string out;
    std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
    return guarded([&] {
        SyntheticParams p;
        if (!a.params.empty()) p = synthetic_params_from_json(read_json_file(a.params));
        if (a.seed) p.seed = *a.seed;
        p.validate();
        const Dataset d = generate_synthetic(p);
        write_dataset(d, a.out);
        std::size_t demo = 0, claims = 0;
        for (const auto& t : d.demographics()) demo += t.size();
        for (const auto& t : d.claims()) claims += t.size();
        std::cout << "ratings.csv       " << d.ratings().size() << " rows\n"
                  << "friendships.csv   " << d.graph().edge_count() << " rows\n"
                  << "demographics.csv  " << demo << " rows\n"
                  << "claims.csv        " << claims << " rows\n";
        return 0;
    });
}

struct CommonArgs {
    std::string config;
    std::string kernel_cache;
};

RunConfig load_config(const CommonArgs& a) {
    RunConfig c = load_run_config(a.config);
    if (!a.kernel_cache.empty()) c.evaluation.kernel_cache = fs::path(a.kernel_cache);
    return c;
}

int cmd_kernels(const CommonArgs& a) {
    return guarded([&] {
        RunConfig c = load_config(a);
        if (c.data.has_value() == c.synthetic.has_value()) {
            throw ParameterError("config needs exactly one of \"data\" and \"synthetic\"");
        }
        c.evaluation.kernel.validate();
        const Dataset d = load_run_dataset(c);
        log(Level::Info, "dataset: " + std::to_string(d.n_users()) + " users, " +
                             std::to_string(d.n_items()) + " items, " +
                             std::to_string(d.ratings().size()) + " ratings");
        KernelBank bank;
        if (c.evaluation.kernel_cache) {
            KernelCache cache(*c.evaluation.kernel_cache);
            bank = build_kernel_bank(d, c.evaluation.kernel, cache);
            log(Level::Info, "kernel cache " + cache.dir().string() + ": " +
                                 std::to_string(cache.hits()) + " loaded, " +
                                 std::to_string(cache.misses()) + " built");
        } else {
            bank = build_kernel_bank(d, c.evaluation.kernel);
        }
        int status = 0;
        std::cout << "kernel  min_eig        max_eig        psd\n";
        for (auto label : kAllKernelLabels) {
            const auto r = validate_psd(bank[label]);
            std::ostringstream line;
            line << std::left << std::setw(8) << kernel_label_name(label) << std::scientific
                 << std::setprecision(4) << std::setw(15) << r.min_eig << std::setw(15) << r.max_eig
                 << (r.pass ? "pass" : "FAIL");
            std::cout << line.str() << "\n";
            if (!r.pass) {
                log(Level::Error, "kernel " + std::string(kernel_label_name(label)) +
                                      " is not positive semidefinite");
                status = kExitPsd;
            }
        }
        return status;
    });
}

struct EvaluateArgs {
    CommonArgs common;
    std::string methods;
    std::optional<std::size_t> folds;
    std::optional<std::size_t> reps;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::size_t> threads;
    bool clamp = false;
    bool no_clamp = false;
    bool strict_leakage = false;
    bool shared_eta = false;
    bool normalize_mni = false;
    bool dry_run = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
    return guarded([&] {
        RunConfig c = load_config(a.common);
        auto& e = c.evaluation;
        if (!a.methods.empty()) e.methods = split_list(a.methods);
        if (a.folds) e.folds = *a.folds;
        if (a.reps) e.repetitions = *a.reps;
        if (a.seed) e.seed = *a.seed;
        if (!a.out.empty()) c.out = a.out;
        e.threads = a.threads ? *a.threads : std::max(1u, std::thread::hardware_concurrency());
        if (a.clamp) e.clamp = true;
        if (a.no_clamp) e.clamp = false;
        if (a.strict_leakage) e.strict_leakage = true;
        if (a.shared_eta) e.shared_eta = true;
        if (a.normalize_mni) e.baseline.normalize_mni = true;
        c.validate();

        if (a.dry_run) {
            std::cout << "plan: " << e.repetitions << " repetition(s) x " << e.folds
                      << "-fold cross-validation, seed " << e.seed << "\n"
                      << "dataset: "
                      << (c.synthetic ? "synthetic (" + std::to_string(c.synthetic->n_users) + " users, " +
                                            std::to_string(c.synthetic->n_items) + " items)"
                                      : c.data->ratings.string())
                      << "\n"
                      << "tuning: " << (e.tuning.enabled ? "inner holdout grid search" : "off") << "\n"
                      << "output: " << c.out.string() << "\n"
                      << "methods:\n";
            for (const auto& m : e.methods) std::cout << "  " << m << "\n";
            std::cout << "config:\n" << to_json(c).dump(2) << "\n";
            return 0;
        }

        const Dataset d = load_run_dataset(c);
        log(Level::Info, "dataset: " + std::to_string(d.n_users()) + " users, " +
                             std::to_string(d.n_items()) + " items, " +
                             std::to_string(d.ratings().size()) + " ratings");
        fs::create_directories(c.out);
        const fs::path partial = c.out / "report.json.partial";
        const auto start = std::chrono::steady_clock::now();
        EvaluationReport report = run_cross_validation(d, e, [&](const EvaluationReport& r) {
            nlohmann::json j = report_to_json(r);
            j["config"]["run"] = to_json(c);
            write_text(partial, j.dump(2) + "\n");
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            log(Level::Info, "repetition " + std::to_string(r.repetitions_done) + "/" +
                                 std::to_string(e.repetitions) + " done (" +
                                 std::to_string(static_cast<long>(secs)) + " s)");
        });
        report.config["run"] = to_json(c);
        export_report(report, c.out);
        fs::remove(partial);
        std::cout << format_summary(report);
        log(Level::Info, "wrote report to " + c.out.string());
        return 0;
    });
}

struct ReportArgs {
    std::string in;
    std::string out;
};

int cmd_report(const ReportArgs& a) {
    return guarded([&] {
        fs::path path = a.in;
        if (fs::is_directory(path)) path /= "report.json";
        const EvaluationReport report = report_from_json(read_json_file(path));
        std::cout << format_summary(report);
        if (!a.out.empty()) {
            export_report(report, a.out);
            log(Level::Info, "re-exported report to " + a.out);
        }
        return 0;
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Social-network rating prediction with multiple kernel learning"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Write a seeded synthetic dataset as four CSV files");
    s->add_option("--params", synth.params, "JSON file with generator parameters");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--seed", synth.seed, "Override the generator seed");

    CommonArgs kern;
    auto* k = app.add_subcommand("kernels", "Build all kernels, cache them and check PSD");
    k->add_option("--config", kern.config, "Run config (JSON)")->required();
    k->add_option("--kernel-cache", kern.kernel_cache, "Kernel cache directory");

    EvaluateArgs ev;
    auto* e = app.add_subcommand("evaluate", "Repeated k-fold cross-validation");
    e->add_option("--config", ev.common.config, "Run config (JSON)")->required();
    e->add_option("--kernel-cache", ev.common.kernel_cache, "Kernel cache directory");
    e->add_option("--methods", ev.methods, "Comma-separated method names");
    e->add_option("--folds", ev.folds, "Number of folds");
    e->add_option("--reps", ev.reps, "Number of repetitions");
    e->add_option("--seed", ev.seed, "Base seed");
    e->add_option("--out", ev.out, "Output directory");
    e->add_option("--threads", ev.threads, "Worker threads (default: all cores)");
    auto* clamp = e->add_flag("--clamp", ev.clamp, "Score predictions clamped to [1, 10]");
    e->add_flag("--no-clamp", ev.no_clamp, "Score raw predictions")->excludes(clamp);
    e->add_flag("--strict-leakage", ev.strict_leakage, "Hide every test-user rating");
    e->add_flag("--shared-eta", ev.shared_eta, "Learn one kernel weighting per fold");
    e->add_flag("--normalize-mni", ev.normalize_mni, "Normalise the MNI damping weights");
    e->add_flag("--dry-run", ev.dry_run, "Validate and print the plan only");

    ReportArgs rep;
    auto* r = app.add_subcommand("report", "Print and re-export a finished report");
    r->add_option("--in", rep.in, "report.json or its directory")->required();
    r->add_option("--out", rep.out, "Directory for re-exported CSV/JSON files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kExitUsage;
    }

    if (s->parsed()) return cmd_synth(synth);
    if (k->parsed()) return cmd_kernels(kern);
    if (e->parsed()) return cmd_evaluate(ev);
    if (r->parsed()) return cmd_report(rep);
    return kExitUsage;
}
