#include "socialmkl/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "socialmkl/error.hpp"

namespace socialmkl {

using nlohmann::json;

namespace {

/// Reads known keys of one JSON object and rejects the rest.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
        if (!j_.is_object()) throw ParameterError(context_ + " must be a JSON object");
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        used_.insert(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) fail(key, "expected a boolean");
        } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
            if (!it->is_number_unsigned()) fail(key, "expected a non-negative integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) fail(key, "expected a number");
        }
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            fail(key, "wrong type");
        }
    }

    void get(const std::string& key, std::optional<double>& out) {
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        used_.insert(key);
        if (it->is_null()) {
            out.reset();
        } else if (it->is_number()) {
            out = it->get<double>();
        } else {
            fail(key, "expected a number or null");
        }
    }

    const json* child(const std::string& key) {
        const auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        used_.insert(key);
        return &*it;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!used_.contains(key)) throw ParameterError("unknown key '" + key + "' in " + context_);
        }
    }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ParameterError(context_ + "." + key + ": " + what);
    }

private:
    const json& j_;
    std::string context_;
    std::set<std::string> used_;
};

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
    if (p.is_absolute() || base.empty()) return p;
    return base / p;
}

}  // namespace

json to_json(const SyntheticParams& p) {
    return {{"n_users", p.n_users},
            {"n_items", p.n_items},
            {"mean_degree", p.mean_degree},
            {"n_communities", p.n_communities},
            {"influence_strength", p.influence_strength},
            {"community_strength", p.community_strength},
            {"noise_std", p.noise_std},
            {"ratings_per_user_mean", p.ratings_per_user_mean},
            {"seed", p.seed},
            {"bias_std", p.bias_std},
            {"taste_std", p.taste_std},
            {"intra_community_fraction", p.intra_community_fraction}};
}

SyntheticParams synthetic_params_from_json(const json& j) {
    SyntheticParams p;
    ObjectReader r(j, "synthetic");
    r.get("n_users", p.n_users);
    r.get("n_items", p.n_items);
    r.get("mean_degree", p.mean_degree);
    r.get("n_communities", p.n_communities);
    r.get("influence_strength", p.influence_strength);
    r.get("community_strength", p.community_strength);
    r.get("noise_std", p.noise_std);
    r.get("ratings_per_user_mean", p.ratings_per_user_mean);
    r.get("seed", p.seed);
    r.get("bias_std", p.bias_std);
    r.get("taste_std", p.taste_std);
    r.get("intra_community_fraction", p.intra_community_fraction);
    r.finish();
    p.validate();
    return p;
}

json to_json(const KernelConfig& c) {
    return {{"alpha", c.alpha},
            {"sigma", c.sigma ? json(*c.sigma) : json(nullptr)},
            {"normalize", c.normalize},
            {"community_seed", c.community_seed},
            {"isolated", c.isolated == IsolatedNodePolicy::Strict ? "strict" : "teleport"}};
}

KernelConfig kernel_config_from_json(const json& j) {
    KernelConfig c;
    ObjectReader r(j, "kernel");
    r.get("alpha", c.alpha);
    r.get("sigma", c.sigma);
    r.get("normalize", c.normalize);
    r.get("community_seed", c.community_seed);
    std::string isolated = c.isolated == IsolatedNodePolicy::Strict ? "strict" : "teleport";
    r.get("isolated", isolated);
    if (isolated == "strict") c.isolated = IsolatedNodePolicy::Strict;
    else if (isolated == "teleport") c.isolated = IsolatedNodePolicy::Teleport;
    else r.fail("isolated", "expected \"strict\" or \"teleport\"");
    r.finish();
    c.validate();
    return c;
}

json to_json(const SvrConfig& c) {
    return {{"C", c.C},
            {"epsilon", c.epsilon},
            {"tolerance", c.tolerance},
            {"max_passes", c.max_passes},
            {"stall_passes", c.stall_passes},
            {"check_psd", c.check_psd}};
}

SvrConfig svr_config_from_json(const json& j) {
    SvrConfig c;
    ObjectReader r(j, "svr");
    r.get("C", c.C);
    r.get("epsilon", c.epsilon);
    r.get("tolerance", c.tolerance);
    r.get("max_passes", c.max_passes);
    r.get("stall_passes", c.stall_passes);
    r.get("check_psd", c.check_psd);
    r.finish();
    c.validate();
    return c;
}

json to_json(const MklConfig& c) {
    return {{"eta0", c.eta0},
            {"lambda", c.lambda},
            {"gamma", c.gamma},
            {"step_growth", c.step_growth},
            {"max_iters", c.max_iters},
            {"tolerance", c.tolerance},
            {"degree", c.degree},
            {"max_halvings", c.max_halvings},
            {"backtracking", c.backtracking}};
}

MklConfig mkl_config_from_json(const json& j) {
    MklConfig c;
    ObjectReader r(j, "mkl");
    r.get("eta0", c.eta0);
    r.get("lambda", c.lambda);
    r.get("gamma", c.gamma);
    r.get("step_growth", c.step_growth);
    r.get("max_iters", c.max_iters);
    r.get("tolerance", c.tolerance);
    r.get("degree", c.degree);
    r.get("max_halvings", c.max_halvings);
    r.get("backtracking", c.backtracking);
    r.finish();
    c.validate(c.eta0.empty() ? kKernelCount : c.eta0.size());
    return c;
}

json to_json(const BaselineConfig& c) {
    return {{"alpha_mni", c.alpha_mni},
            {"max_level", c.max_level},
            {"normalize_mni", c.normalize_mni},
            {"fallback", std::string(fallback_kind_name(c.fallback))}};
}

BaselineConfig baseline_config_from_json(const json& j) {
    BaselineConfig c;
    ObjectReader r(j, "baseline");
    r.get("alpha_mni", c.alpha_mni);
    r.get("max_level", c.max_level);
    r.get("normalize_mni", c.normalize_mni);
    std::string fallback(fallback_kind_name(c.fallback));
    r.get("fallback", fallback);
    const auto kind = parse_fallback_kind(fallback);
    if (!kind) r.fail("fallback", "expected global_mean, item_mean, user_mean or none");
    c.fallback = *kind;
    r.finish();
    c.validate();
    return c;
}

json to_json(const TuningConfig& c) {
    return {{"enabled", c.enabled},
            {"holdout_fraction", c.holdout_fraction},
            {"alpha_grid", c.alpha_grid},
            {"sigma_scales", c.sigma_scales},
            {"c_grid", c.c_grid},
            {"epsilon_grid", c.epsilon_grid},
            {"mni_alpha_grid", c.mni_alpha_grid},
            {"mni_max_level", c.mni_max_level},
            {"max_items", c.max_items}};
}

TuningConfig tuning_config_from_json(const json& j) {
    TuningConfig c;
    ObjectReader r(j, "tuning");
    r.get("enabled", c.enabled);
    r.get("holdout_fraction", c.holdout_fraction);
    r.get("alpha_grid", c.alpha_grid);
    r.get("sigma_scales", c.sigma_scales);
    r.get("c_grid", c.c_grid);
    r.get("epsilon_grid", c.epsilon_grid);
    r.get("mni_alpha_grid", c.mni_alpha_grid);
    r.get("mni_max_level", c.mni_max_level);
    r.get("max_items", c.max_items);
    r.finish();
    c.validate();
    return c;
}

json to_json(const EvaluationConfig& c) {
    return {{"methods", c.methods},
            {"folds", c.folds},
            {"repetitions", c.repetitions},
            {"seed", c.seed},
            {"kernel", to_json(c.kernel)},
            {"svr", to_json(c.svr)},
            {"mkl", to_json(c.mkl)},
            {"baseline", to_json(c.baseline)},
            {"tuning", to_json(c.tuning)},
            {"min_train", c.min_train},
            {"clamp", c.clamp},
            {"strict_leakage", c.strict_leakage},
            {"shared_eta", c.shared_eta},
            {"pooled_rmse", c.pooled_rmse}};
}

json to_json(const RunConfig& c) {
    json j = to_json(c.evaluation);
    if (c.data) {
        json d = {{"ratings", c.data->ratings.string()},
                  {"friendships", c.data->friendships.string()},
                  {"strict", c.strict_load}};
        if (c.data->demographics) d["demographics"] = c.data->demographics->string();
        if (c.data->claims) d["claims"] = c.data->claims->string();
        j["data"] = d;
    }
    if (c.synthetic) j["synthetic"] = to_json(*c.synthetic);
    j["out"] = c.out.string();
    j["kernel_cache"] = c.evaluation.kernel_cache ? json(c.evaluation.kernel_cache->string()) : json(nullptr);
    j["threads"] = c.evaluation.threads;
    return j;
}

void RunConfig::validate() const {
    if (data.has_value() == synthetic.has_value()) {
        throw ParameterError("config needs exactly one of \"data\" and \"synthetic\"");
    }
    if (data) {
        auto must_exist = [](const std::filesystem::path& p) {
            if (!std::filesystem::exists(p)) throw ParameterError("no such file: " + p.string());
        };
        must_exist(data->ratings);
        must_exist(data->friendships);
        if (data->demographics) must_exist(*data->demographics);
        if (data->claims) must_exist(*data->claims);
    }
    if (synthetic) synthetic->validate();
    evaluation.validate();
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
    RunConfig c;
    ObjectReader r(j, "config");
    if (const json* d = r.child("data")) {
        ObjectReader dr(*d, "data");
        DatasetPaths paths;
        std::string ratings, friendships;
        std::optional<std::string> demographics, claims;
        dr.get("ratings", ratings);
        dr.get("friendships", friendships);
        if (const json* v = dr.child("demographics"); v && !v->is_null()) {
            if (!v->is_string()) dr.fail("demographics", "expected a path");
            demographics = v->get<std::string>();
        }
        if (const json* v = dr.child("claims"); v && !v->is_null()) {
            if (!v->is_string()) dr.fail("claims", "expected a path");
            claims = v->get<std::string>();
        }
        dr.get("strict", c.strict_load);
        dr.finish();
        if (ratings.empty() || friendships.empty()) {
            throw ParameterError("data.ratings and data.friendships are required");
        }
        paths.ratings = resolve(ratings, base_dir);
        paths.friendships = resolve(friendships, base_dir);
        if (demographics) paths.demographics = resolve(*demographics, base_dir);
        if (claims) paths.claims = resolve(*claims, base_dir);
        c.data = paths;
    }
    if (const json* s = r.child("synthetic")) c.synthetic = synthetic_params_from_json(*s);
    auto& e = c.evaluation;
    if (const json* k = r.child("kernel")) e.kernel = kernel_config_from_json(*k);
    if (const json* s = r.child("svr")) e.svr = svr_config_from_json(*s);
    if (const json* m = r.child("mkl")) e.mkl = mkl_config_from_json(*m);
    if (const json* b = r.child("baseline")) e.baseline = baseline_config_from_json(*b);
    if (const json* t = r.child("tuning")) e.tuning = tuning_config_from_json(*t);
    r.get("methods", e.methods);
    r.get("folds", e.folds);
    r.get("repetitions", e.repetitions);
    r.get("seed", e.seed);
    r.get("min_train", e.min_train);
    r.get("clamp", e.clamp);
    r.get("strict_leakage", e.strict_leakage);
    r.get("shared_eta", e.shared_eta);
    r.get("pooled_rmse", e.pooled_rmse);
    r.get("threads", e.threads);
    std::string out = c.out.string();
    r.get("out", out);
    c.out = resolve(out, base_dir);
    if (const json* kc = r.child("kernel_cache"); kc && !kc->is_null()) {
        if (!kc->is_string()) r.fail("kernel_cache", "expected a path or null");
        e.kernel_cache = resolve(kc->get<std::string>(), base_dir);
    }
    r.finish();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ParameterError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

Dataset load_run_dataset(const RunConfig& config) {
    if (config.synthetic) return generate_synthetic(*config.synthetic);
    if (!config.data) throw ParameterError("config names no dataset");
    LoadOptions options;
    options.strict = config.strict_load;
    return load_dataset(*config.data, options);
}

}  // namespace socialmkl
