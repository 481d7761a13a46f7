#include "socialmkl/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "socialmkl/config.hpp"
#include "socialmkl/error.hpp"

namespace socialmkl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Method registry

namespace {

constexpr std::array<KernelLabel, 7> kSimilarityLabels = {
    KernelLabel::ImpactDistribution, KernelLabel::CommuteTime, KernelLabel::Community,
    KernelLabel::Demographic,        KernelLabel::Claim,       KernelLabel::Action1,
    KernelLabel::Action2};

std::string label_str(KernelLabel l) { return std::string(kernel_label_name(l)); }

}  // namespace

const std::vector<std::string>& registered_methods() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n = {"NI", "MNI", "MNI-NORM"};
        for (auto l : kSimilarityLabels) n.push_back("CF-S_" + label_str(l));
        n.insert(n.end(), {"CF-S_AVG", "CF-S_ID-S_ACT2", "CF-S_CT-S_ACT2", "UCF-S_Pearson",
                           "UCF-S_ID-S_Pearson", "UCF-S_CT-S_Pearson"});
        for (auto l : kSimilarityLabels) n.push_back("K_" + label_str(l));
        n.push_back("COMBINED");
        return n;
    }();
    return names;
}

std::optional<MethodSpec> parse_method(const std::string& name) {
    const auto& all = registered_methods();
    if (std::find(all.begin(), all.end(), name) == all.end()) return std::nullopt;
    MethodSpec spec;
    spec.name = name;
    auto labels_from = [](std::string rest) {
        // "ID-S_ACT2" -> {ID, ACT2}
        std::vector<KernelLabel> out;
        std::size_t pos = 0;
        while (true) {
            const auto next = rest.find("-S_", pos);
            const auto part = rest.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
            if (part != "Pearson") out.push_back(*parse_kernel_label(part));
            if (next == std::string::npos) break;
            pos = next + 3;
        }
        return out;
    };
    if (name == "NI") {
        spec.kind = MethodKind::NeighborInfluence;
    } else if (name == "MNI") {
        spec.kind = MethodKind::MultiLevelInfluence;
    } else if (name == "MNI-NORM") {
        spec.kind = MethodKind::MultiLevelNormalized;
    } else if (name == "COMBINED") {
        spec.kind = MethodKind::Combined;
    } else if (name == "CF-S_AVG") {
        spec.kind = MethodKind::KernelCf;
        spec.average = true;
        spec.kernels.assign(kSimilarityLabels.begin(), kSimilarityLabels.end());
    } else if (name.rfind("UCF-S_", 0) == 0) {
        spec.kind = MethodKind::PearsonBiasCf;
        spec.kernels = labels_from(name.substr(6));
    } else if (name.rfind("CF-S_", 0) == 0) {
        spec.kind = MethodKind::KernelCf;
        spec.kernels = labels_from(name.substr(5));
    } else {
        spec.kind = MethodKind::SingleKernelSvr;
        spec.kernels = {*parse_kernel_label(name.substr(2))};
    }
    return spec;
}

void TuningConfig::validate() const {
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
        throw ParameterError("tuning holdout fraction must lie in (0, 1)");
    }
    for (double a : alpha_grid) {
        if (!(a > 0.0 && a < 1.0)) throw ParameterError("tuning alpha grid values must lie in (0, 1)");
    }
    for (double a : mni_alpha_grid) {
        if (!(a > 0.0 && a < 1.0)) throw ParameterError("MNI damping grid values must lie in (0, 1)");
    }
    for (double s : sigma_scales) {
        if (!(s > 0.0)) throw ParameterError("sigma scales must be > 0");
    }
    for (double c : c_grid) {
        if (!(c > 0.0)) throw ParameterError("C grid values must be > 0");
    }
    for (double e : epsilon_grid) {
        if (!(e >= 0.0)) throw ParameterError("epsilon grid values must be >= 0");
    }
    if (mni_max_level < 1) throw ParameterError("tuning MNI max level must be >= 1");
}

void EvaluationConfig::validate() const {
    if (methods.empty()) throw ParameterError("no methods requested");
    for (const auto& m : methods) {
        if (!parse_method(m)) {
            std::string valid;
            for (const auto& n : registered_methods()) valid += (valid.empty() ? "" : ", ") + n;
            throw ParameterError("unknown method '" + m + "'; valid methods: " + valid);
        }
    }
    if (folds < 2) throw ParameterError("need at least 2 folds");
    if (repetitions < 1) throw ParameterError("need at least 1 repetition");
    if (min_train < 1) throw ParameterError("min_train must be >= 1");
    kernel.validate();
    svr.validate();
    mkl.validate(kKernelCount);
    baseline.validate();
    tuning.validate();
}

// ---------------------------------------------------------------------------
// Statistics

double rmse(std::span<const double> predictions, std::span<const double> actuals) {
    if (predictions.empty()) throw ParameterError("RMSE of an empty sequence");
    if (predictions.size() != actuals.size()) {
        throw ParameterError("RMSE inputs differ in length");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = predictions[i] - actuals[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(predictions.size()));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ParameterError("paired t test needs equal lengths");
    if (a.size() < 2) throw ParameterError("paired t test needs at least 2 pairs");
    const std::size_t n = a.size();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    TTestResult r;
    r.df = n - 1;
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd == 0.0) {
        if (mean == 0.0) {
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = std::copysign(std::numeric_limits<double>::infinity(), mean);
            r.p = 0.0;
        }
        return r;
    }
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const boost::math::students_t dist(static_cast<double>(r.df));
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    return r;
}

double MethodResult::rmse_mean() const {
    if (rmse_per_rep.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(rmse_per_rep.begin(), rmse_per_rep.end(), 0.0) /
           static_cast<double>(rmse_per_rep.size());
}

double MethodResult::rmse_std() const {
    if (rmse_per_rep.size() < 2) return 0.0;
    const double m = rmse_mean();
    double ss = 0.0;
    for (double v : rmse_per_rep) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(rmse_per_rep.size() - 1));
}

double MethodResult::coverage() const {
    return pairs == 0 ? 0.0 : static_cast<double>(predicted) / static_cast<double>(pairs);
}

const MethodResult* EvaluationReport::find(const std::string& name) const {
    for (const auto& m : methods) {
        if (m.name == name) return &m;
    }
    return nullptr;
}

std::vector<BinRow> friend_bin_table(const std::vector<MethodResult>& methods,
                                     const SocialGraph& graph, bool clamped) {
    std::vector<BinRow> rows;
    rows.push_back({FriendBin::Zero, 0, 0, {}});
    for (auto b : kReportedFriendBins) rows.push_back({b, 0, 0, {}});
    auto row_of = [](FriendBin b) {
        return b == FriendBin::Zero ? std::size_t{0} : static_cast<std::size_t>(b);
    };

    std::vector<std::vector<bool>> seen(rows.size(), std::vector<bool>(graph.size(), false));
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        std::vector<double> sq(rows.size(), 0.0);
        std::vector<std::size_t> count(rows.size(), 0);
        for (const auto& rep : methods[mi].residuals) {
            for (const auto& r : rep) {
                const std::size_t row = row_of(friend_count_bin(graph, r.user));
                const double d = (clamped ? r.prediction : r.raw) - r.actual;
                sq[row] += d * d;
                ++count[row];
                if (mi == 0 && !seen[row][r.user]) {
                    seen[row][r.user] = true;
                    ++rows[row].users;
                }
            }
        }
        for (std::size_t row = 0; row < rows.size(); ++row) {
            if (mi == 0) rows[row].pairs = count[row];
            if (count[row] > 0) {
                rows[row].rmse[methods[mi].name] = std::sqrt(sq[row] / static_cast<double>(count[row]));
            }
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Parallel helper

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t failed_at = n;
    std::exception_ptr failure;
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (i < failed_at) {
                    failed_at = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t count = std::min(threads, n);
    pool.reserve(count);
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Cross-validation

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t salt) {
    std::uint64_t z = seed;
    for (std::uint64_t v : {a, b, salt}) {
        z += 0x9E3779B97F4A7C15ull + v;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        z ^= z >> 31;
    }
    return z;
}

struct Pair {
    UserIndex user;
    ItemIndex item;
    double actual;
};

/// Ratings of kept users, and the held-out users' ratings as pairs to predict.
struct Split {
    RatingMatrix known;
    std::vector<Pair> pairs;
    std::vector<std::vector<std::size_t>> pairs_by_item;
};

Split make_split(const RatingMatrix& source, const std::vector<bool>& keep, std::size_t max_items) {
    Split s;
    s.known = source.restricted_to_users(keep);
    s.pairs_by_item.resize(source.n_items());
    for (UserIndex u = 0; u < source.n_users(); ++u) {
        if (keep[u]) continue;
        for (const auto& r : source.user_ratings(u)) {
            if (max_items != 0 && r.item >= max_items) continue;
            s.pairs_by_item[r.item].push_back(s.pairs.size());
            s.pairs.push_back({u, r.item, r.value});
        }
    }
    return s;
}

/// Raw predictions per pair plus fallback flags.
struct Scored {
    std::vector<double> raw;
    std::vector<char> fallback;

    explicit Scored(std::size_t n = 0) : raw(n, 0.0), fallback(n, 0) {}
};

double clamp_rating(double v) { return std::clamp(v, kMinRating, kMaxRating); }

double score(const Split& s, const Scored& p, bool clamp) {
    if (s.pairs.empty()) return 0.0;
    double ss = 0.0;
    for (std::size_t i = 0; i < s.pairs.size(); ++i) {
        const double pred = clamp ? clamp_rating(p.raw[i]) : p.raw[i];
        ss += (pred - s.pairs[i].actual) * (pred - s.pairs[i].actual);
    }
    return std::sqrt(ss / static_cast<double>(s.pairs.size()));
}

struct Variant {
    double param = 0.0;
    KernelMatrix kernel;
};

void check_psd_or_throw(const KernelMatrix& k, const std::string& what) {
    const auto report = validate_psd(k);
    if (!report.pass) {
        throw ValidationError(what + " failed the PSD check (min eigenvalue " +
                              std::to_string(report.min_eig) + ")");
    }
}

KernelMatrix id_kernel(const SocialGraph& graph, double alpha, const KernelConfig& cfg) {
    auto k = impact_distribution_kernel(graph, alpha, cfg.isolated);
    return cfg.normalize ? cosine_normalize(k) : k;
}

/// Kernels that depend on the ratings, for one visibility mask.
struct RatingKernels {
    KernelMatrix act1;
    KernelMatrix act2;
    std::vector<Variant> act2_variants;
};

RatingKernels build_rating_kernels(const Dataset& data, const EvaluationConfig& cfg,
                                   const RatingMask& mask, bool variants) {
    const auto n = data.n_users();
    RatingKernels out;
    out.act1 = action_overlap_kernel(data.ratings(), n, mask);
    const double sigma = cfg.kernel.sigma ? *cfg.kernel.sigma : default_sigma(data.ratings(), n, mask);
    out.act2 = rating_bias_kernel(data.ratings(), n, sigma, mask);
    check_psd_or_throw(out.act1, "ACT1");
    check_psd_or_throw(out.act2, "ACT2");
    if (variants) {
        for (double scale : cfg.tuning.sigma_scales) {
            Variant v{sigma * scale, rating_bias_kernel(data.ratings(), n, sigma * scale, mask)};
            check_psd_or_throw(v.kernel, "ACT2 variant");
            out.act2_variants.push_back(std::move(v));
        }
    }
    return out;
}

struct SvrChoice {
    const KernelMatrix* kernel = nullptr;
    SvrConfig svr;
    double param = 0.0;
};

class CrossValidation {
public:
    CrossValidation(const Dataset& data, const EvaluationConfig& cfg) : data_(data), cfg_(cfg) {
        for (const auto& name : cfg.methods) specs_.push_back(*parse_method(name));
        threads_ = cfg.threads;
        svr_base_ = cfg.svr;
        svr_base_.check_psd = false;  // every Gram block comes from a validated kernel

        const bool need_kernels = std::any_of(specs_.begin(), specs_.end(), [](const MethodSpec& s) {
            return s.kind != MethodKind::NeighborInfluence && s.kind != MethodKind::MultiLevelInfluence &&
                   s.kind != MethodKind::MultiLevelNormalized;
        });
        need_kernels_ = need_kernels;
        if (need_kernels) build_static_kernels();

        std::size_t levels = std::max(cfg.baseline.max_level, cfg.tuning.mni_max_level);
        const bool need_levels = std::any_of(specs_.begin(), specs_.end(), [](const MethodSpec& s) {
            return s.kind == MethodKind::MultiLevelInfluence || s.kind == MethodKind::MultiLevelNormalized;
        });
        if (need_levels) {
            levels_.resize(data.n_users());
            for (UserIndex v = 0; v < data.n_users(); ++v) {
                levels_[v] = bfs_levels(data.graph(), v, levels);
            }
        }
    }

    EvaluationReport run(const ProgressCallback& progress) {
        EvaluationReport report;
        report.config = to_json(cfg_);
        for (const auto& s : specs_) {
            MethodResult m;
            m.name = s.name;
            report.methods.push_back(std::move(m));
        }
        std::array<double, kKernelCount> eta_sum{};
        for (std::size_t rep = 0; rep < cfg_.repetitions; ++rep) {
            const auto folds = split_folds(data_.n_users(), cfg_.folds,
                                           derive_seed(cfg_.seed, rep, 0, 1));
            std::vector<std::vector<Residual>> rep_residuals(specs_.size());
            for (std::size_t f = 0; f < cfg_.folds; ++f) {
                run_fold(rep, f, folds, report, rep_residuals, eta_sum);
            }
            for (std::size_t mi = 0; mi < specs_.size(); ++mi) {
                auto& m = report.methods[mi];
                const double clamped = rep_rmse(rep_residuals[mi], true);
                const double raw = rep_rmse(rep_residuals[mi], false);
                m.rmse_clamped_per_rep.push_back(clamped);
                m.rmse_unclamped_per_rep.push_back(raw);
                m.rmse_per_rep.push_back(cfg_.clamp ? clamped : raw);
                m.residuals.push_back(std::move(rep_residuals[mi]));
            }
            report.repetitions_done = rep + 1;
            for (std::size_t k = 0; k < kKernelCount; ++k) {
                report.eta_average[k] = report.eta_fits ? eta_sum[k] / static_cast<double>(report.eta_fits) : 0.0;
            }
            report.bins = friend_bin_table(report.methods, data_.graph(), cfg_.clamp);
            if (progress) progress(report);
        }
        return report;
    }

private:
    struct Fold {
        std::vector<bool> is_train;
        Split outer;
        Split inner;
        const RatingMatrix* profile = nullptr;
        std::optional<Fallback> baseline_fallback;
        double global = 0.0;
        RatingKernels strict_kernels;
        std::array<std::optional<SvrChoice>, kKernelCount> choices;
        std::optional<SvrConfig> combined_svr;
        std::optional<std::pair<double, std::size_t>> mni_choice[2];
    };

    void build_static_kernels() {
        const auto& kc = cfg_.kernel;
        if (cfg_.kernel_cache) {
            KernelCache cache(*cfg_.kernel_cache);
            bank_ = build_kernel_bank(data_, kc, cache);
        } else {
            bank_ = build_kernel_bank(data_, kc);
        }
        for (auto l : kAllKernelLabels) check_psd_or_throw(bank_[l], label_str(l));
        if (cfg_.tuning.enabled) {
            for (double a : cfg_.tuning.alpha_grid) {
                Variant v{a, id_kernel(data_.graph(), a, kc)};
                check_psd_or_throw(v.kernel, "ID variant");
                id_variants_.push_back(std::move(v));
            }
        }
        if (!cfg_.strict_leakage) {
            rating_kernels_ = build_rating_kernels(data_, cfg_, {}, cfg_.tuning.enabled);
        }
    }

    const KernelMatrix& kernel(const Fold& fold, KernelLabel l) const {
        const RatingKernels& rk = cfg_.strict_leakage ? fold.strict_kernels : rating_kernels_;
        if (l == KernelLabel::Action1) return rk.act1;
        if (l == KernelLabel::Action2) return rk.act2;
        return bank_[l];
    }

    std::vector<const Variant*> variants(const Fold& fold, KernelLabel l) const {
        std::vector<const Variant*> out;
        if (l == KernelLabel::ImpactDistribution) {
            for (const auto& v : id_variants_) out.push_back(&v);
        } else if (l == KernelLabel::Action2) {
            const RatingKernels& rk = cfg_.strict_leakage ? fold.strict_kernels : rating_kernels_;
            for (const auto& v : rk.act2_variants) out.push_back(&v);
        }
        return out;
    }

    /// Pooled over the repetition, or the mean of per-fold values.
    double rep_rmse(const std::vector<Residual>& rs, bool clamped) const {
        if (rs.empty()) return 0.0;
        std::vector<double> sq(cfg_.folds, 0.0);
        std::vector<std::size_t> count(cfg_.folds, 0);
        for (const auto& r : rs) {
            const double d = (clamped ? r.prediction : r.raw) - r.actual;
            sq[r.fold] += d * d;
            ++count[r.fold];
        }
        if (cfg_.pooled_rmse) {
            return std::sqrt(std::accumulate(sq.begin(), sq.end(), 0.0) / static_cast<double>(rs.size()));
        }
        double sum = 0.0;
        std::size_t used = 0;
        for (std::size_t f = 0; f < cfg_.folds; ++f) {
            if (count[f] == 0) continue;
            sum += std::sqrt(sq[f] / static_cast<double>(count[f]));
            ++used;
        }
        return sum / static_cast<double>(used);
    }

    void run_fold(std::size_t rep, std::size_t f, const FoldAssignment& folds, EvaluationReport& report,
                  std::vector<std::vector<Residual>>& rep_residuals,
                  std::array<double, kKernelCount>& eta_sum) {
        Fold fold;
        const auto n = data_.n_users();
        fold.is_train.resize(n);
        for (UserIndex u = 0; u < n; ++u) fold.is_train[u] = folds.fold_of[u] != f;
        fold.outer = make_split(data_.ratings(), fold.is_train, 0);
        fold.profile = cfg_.strict_leakage ? &fold.outer.known : &data_.ratings();
        fold.global = fold.outer.known.global_mean().value_or(0.5 * (kMinRating + kMaxRating));
        fold.baseline_fallback.emplace(cfg_.baseline.fallback, fold.outer.known, fold.profile);

        // Inner tuning split over the training users.
        std::vector<UserIndex> train_users;
        for (UserIndex u = 0; u < n; ++u) {
            if (fold.is_train[u]) train_users.push_back(u);
        }
        std::mt19937_64 rng(derive_seed(cfg_.seed, rep, f, 2));
        std::shuffle(train_users.begin(), train_users.end(), rng);
        const auto n_val = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(cfg_.tuning.holdout_fraction *
                                                     static_cast<double>(train_users.size()))));
        std::vector<bool> inner_keep = fold.is_train;
        for (std::size_t i = 0; i < n_val && i < train_users.size(); ++i) inner_keep[train_users[i]] = false;
        // Test users carry no ratings in outer.known, so only validation users become pairs.
        fold.inner = make_split(fold.outer.known, inner_keep, cfg_.tuning.max_items);

        if (cfg_.strict_leakage && need_kernels_) {
            const auto& is_train = fold.is_train;
            RatingMask mask = [&is_train](UserIndex u, ItemIndex) { return !is_train[u]; };
            fold.strict_kernels = build_rating_kernels(data_, cfg_, mask, cfg_.tuning.enabled);
        }

        for (std::size_t mi = 0; mi < specs_.size(); ++mi) {
            const auto start = std::chrono::steady_clock::now();
            std::vector<std::vector<double>> etas;
            const Scored scored = run_method(specs_[mi], fold, etas);
            auto& m = report.methods[mi];
            m.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            for (const auto& eta : etas) {
                for (std::size_t k = 0; k < kKernelCount && k < eta.size(); ++k) eta_sum[k] += eta[k];
                ++report.eta_fits;
            }
            const auto& pairs = fold.outer.pairs;
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                Residual r;
                r.user = static_cast<std::uint32_t>(pairs[i].user);
                r.item = static_cast<std::uint32_t>(pairs[i].item);
                r.fold = static_cast<std::uint32_t>(f);
                r.raw = scored.raw[i];
                r.prediction = clamp_rating(scored.raw[i]);
                r.actual = pairs[i].actual;
                r.from_fallback = scored.fallback[i] != 0;
                rep_residuals[mi].push_back(r);
                ++m.pairs;
                if (!r.from_fallback) ++m.predicted;
            }
        }
    }

    Scored run_method(const MethodSpec& spec, Fold& fold, std::vector<std::vector<double>>& etas) {
        switch (spec.kind) {
            case MethodKind::NeighborInfluence: return run_ni(fold, fold.outer);
            case MethodKind::MultiLevelInfluence:
                return run_mni_tuned(fold, cfg_.baseline.normalize_mni);
            case MethodKind::MultiLevelNormalized: return run_mni_tuned(fold, true);
            case MethodKind::KernelCf: return run_cf(spec, fold);
            case MethodKind::PearsonBiasCf: return run_ucf(spec, fold);
            case MethodKind::SingleKernelSvr: {
                const SvrChoice& c = choice(fold, spec.kernels.front());
                return run_svr(fold.outer, single_gram(*c.kernel), c.svr, fold.global);
            }
            case MethodKind::Combined: return run_combined(fold, etas);
        }
        return Scored{};
    }

    // -- baselines ----------------------------------------------------------

    Prediction fill(Prediction p, double global) const {
        if (!p.value) p.value = global;
        return p;
    }

    template <typename F>
    Scored per_pair(const Split& split, F&& predict) const {
        Scored out(split.pairs.size());
        parallel_for(split.pairs.size(), threads_, [&](std::size_t i) {
            const Prediction p = predict(split.pairs[i]);
            out.raw[i] = *p.value;
            out.fallback[i] = p.from_fallback ? 1 : 0;
        });
        return out;
    }

    Scored run_ni(const Fold& fold, const Split& split) const {
        return per_pair(split, [&](const Pair& pr) {
            return fill(predict_ni(data_.graph(), split.known, pr.user, pr.item, *fold.baseline_fallback),
                        fold.global);
        });
    }

    Scored run_mni(const Fold& fold, const Split& split, double alpha, std::size_t k, bool normalize) const {
        return per_pair(split, [&](const Pair& pr) {
            const auto avg = mni_level_averages(levels_[pr.user], split.known, pr.item);
            if (auto v = combine_mni(avg, alpha, k, normalize)) return Prediction{*v, false};
            return fill(Prediction{fold.baseline_fallback->value(pr.user, pr.item), true}, fold.global);
        });
    }

    Scored run_mni_tuned(Fold& fold, bool normalize) {
        double alpha = cfg_.baseline.alpha_mni;
        std::size_t k = cfg_.baseline.max_level;
        auto& cached = fold.mni_choice[normalize ? 1 : 0];
        if (cfg_.tuning.enabled && !cfg_.tuning.mni_alpha_grid.empty()) {
            if (!cached) {
                const Split& s = fold.inner;
                Fallback fb(cfg_.baseline.fallback, s.known, fold.profile);
                const double global = fb.global_mean();
                std::vector<std::vector<std::optional<double>>> avgs(s.pairs.size());
                parallel_for(s.pairs.size(), threads_, [&](std::size_t i) {
                    avgs[i] = mni_level_averages(levels_[s.pairs[i].user], s.known, s.pairs[i].item);
                });
                double best = std::numeric_limits<double>::infinity();
                for (double a : cfg_.tuning.mni_alpha_grid) {
                    for (std::size_t level = 1; level <= cfg_.tuning.mni_max_level; ++level) {
                        Scored sc(s.pairs.size());
                        for (std::size_t i = 0; i < s.pairs.size(); ++i) {
                            auto v = combine_mni(avgs[i], a, level, normalize);
                            sc.raw[i] = v ? *v : fb.value(s.pairs[i].user, s.pairs[i].item).value_or(global);
                        }
                        const double r = score(s, sc, cfg_.clamp);
                        if (r < best) {
                            best = r;
                            cached = std::make_pair(a, level);
                        }
                    }
                }
            }
            if (cached) std::tie(alpha, k) = *cached;
        }
        return run_mni(fold, fold.outer, alpha, k, normalize);
    }

    Eigen::MatrixXd similarity_matrix(const MethodSpec& spec, const Fold& fold) const {
        const auto n = static_cast<Eigen::Index>(data_.n_users());
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
        for (auto l : spec.kernels) s += kernel(fold, l).values();
        if (spec.average && !spec.kernels.empty()) s /= static_cast<double>(spec.kernels.size());
        return s;
    }

    Scored run_cf(const MethodSpec& spec, const Fold& fold) const {
        const Eigen::MatrixXd sim = similarity_matrix(spec, fold);
        const Similarity f = [&sim](UserIndex a, UserIndex b) {
            return sim(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        };
        return per_pair(fold.outer, [&](const Pair& pr) {
            return fill(predict_cf(f, fold.outer.known, pr.user, pr.item, *fold.baseline_fallback),
                        fold.global);
        });
    }

    Scored run_ucf(const MethodSpec& spec, const Fold& fold) const {
        const bool with_kernel = !spec.kernels.empty();
        const Eigen::MatrixXd sim = with_kernel ? similarity_matrix(spec, fold) : Eigen::MatrixXd();
        const RatingMatrix& profile = *fold.profile;
        return per_pair(fold.outer, [&](const Pair& pr) {
            const Similarity f = [&](UserIndex a, UserIndex b) {
                double s = pearson_similarity(profile, a, b, pr.item);
                if (with_kernel) s += sim(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
                return s;
            };
            return fill(predict_ucf_bias(f, fold.outer.known, profile, pr.user, pr.item,
                                         *fold.baseline_fallback),
                        fold.global);
        });
    }

    // -- kernel methods -------------------------------------------------------

    /// Fills the training Gram block and the (train x test) cross block.
    using GramFn = std::function<void(std::span<const std::size_t>, std::span<const std::size_t>,
                                      Eigen::MatrixXd&, Eigen::MatrixXd&)>;

    static GramFn single_gram(const KernelMatrix& k) {
        return [&k](std::span<const std::size_t> train, std::span<const std::size_t> test,
                    Eigen::MatrixXd& k_train, Eigen::MatrixXd& k_cross) {
            k_train = k.submatrix(train, train);
            k_cross = k.submatrix(train, test);
        };
    }

    struct ItemProblem {
        std::vector<std::size_t> train;
        std::vector<double> y;
        std::vector<std::size_t> test;
    };

    /// nullopt when the item has too few training raters.
    std::optional<ItemProblem> item_problem(const Split& s, ItemIndex w) const {
        const auto raters = s.known.item_ratings(w);
        if (raters.size() < cfg_.min_train) return std::nullopt;
        ItemProblem p;
        for (const auto& r : raters) {
            p.train.push_back(r.user);
            p.y.push_back(r.value);
        }
        for (std::size_t idx : s.pairs_by_item[w]) p.test.push_back(s.pairs[idx].user);
        return p;
    }

    void fill_fallback(const Split& s, ItemIndex w, double global, Scored& out) const {
        for (std::size_t idx : s.pairs_by_item[w]) {
            out.raw[idx] = global;
            out.fallback[idx] = 1;
        }
    }

    Scored run_svr(const Split& s, const GramFn& gram, const SvrConfig& svr, double global) const {
        Scored out(s.pairs.size());
        parallel_for(s.pairs_by_item.size(), threads_, [&](std::size_t w) {
            if (s.pairs_by_item[w].empty()) return;
            const auto p = item_problem(s, w);
            if (!p) return fill_fallback(s, w, global, out);
            Eigen::MatrixXd k_train, k_cross;
            gram(p->train, p->test, k_train, k_cross);
            const SvrModel model = train_svr(k_train, p->y, svr);
            for (std::size_t j = 0; j < p->test.size(); ++j) {
                const std::size_t idx = s.pairs_by_item[w][j];
                out.raw[idx] = predict_svr(
                    model, std::span<const double>(k_cross.col(static_cast<Eigen::Index>(j)).data(),
                                                   p->train.size()),
                    false);
            }
        });
        return out;
    }

    double inner_score(const Fold& fold, const GramFn& gram, const SvrConfig& svr) const {
        const double global = fold.inner.known.global_mean().value_or(fold.global);
        return score(fold.inner, run_svr(fold.inner, gram, svr, global), cfg_.clamp);
    }

    /// Grid over C x epsilon around `base`; returns the best config.
    SvrConfig tune_svr_grid(const Fold& fold, const GramFn& gram, double& best) const {
        SvrConfig chosen = svr_base_;
        for (double c : cfg_.tuning.c_grid) {
            for (double e : cfg_.tuning.epsilon_grid) {
                SvrConfig trial = svr_base_;
                trial.C = c;
                trial.epsilon = e;
                const double r = inner_score(fold, gram, trial);
                if (r < best) {
                    best = r;
                    chosen = trial;
                }
            }
        }
        return chosen;
    }

    const SvrChoice& choice(Fold& fold, KernelLabel l) {
        auto& slot = fold.choices[static_cast<std::size_t>(l)];
        if (slot) return *slot;
        SvrChoice c;
        c.kernel = &kernel(fold, l);
        c.svr = svr_base_;
        if (cfg_.tuning.enabled && !fold.inner.pairs.empty()) {
            double best = std::numeric_limits<double>::infinity();
            const auto vs = variants(fold, l);
            if (!vs.empty()) {
                for (const Variant* v : vs) {
                    const double r = inner_score(fold, single_gram(v->kernel), svr_base_);
                    if (r < best) {
                        best = r;
                        c.kernel = &v->kernel;
                        c.param = v->param;
                    }
                }
            } else {
                best = inner_score(fold, single_gram(*c.kernel), svr_base_);
            }
            c.svr = tune_svr_grid(fold, single_gram(*c.kernel), best);
        }
        slot = c;
        return *slot;
    }

    std::vector<const KernelMatrix*> combined_kernels(Fold& fold) {
        std::vector<const KernelMatrix*> ks;
        for (auto l : kAllKernelLabels) {
            const bool tuned = cfg_.tuning.enabled &&
                               (l == KernelLabel::ImpactDistribution || l == KernelLabel::Action2);
            ks.push_back(tuned ? choice(fold, l).kernel : &kernel(fold, l));
        }
        return ks;
    }

    static void gather(const std::vector<const KernelMatrix*>& ks, std::span<const std::size_t> rows,
                       std::span<const std::size_t> cols, std::vector<Eigen::MatrixXd>& out) {
        out.clear();
        for (const auto* k : ks) out.push_back(k->submatrix(rows, cols));
    }

    Scored run_combined(Fold& fold, std::vector<std::vector<double>>& etas) {
        const auto ks = combined_kernels(fold);
        const std::vector<double> eta0 = cfg_.mkl.center(kKernelCount);
        const int degree = cfg_.mkl.degree;

        if (!fold.combined_svr) {
            SvrConfig svr = svr_base_;
            if (cfg_.tuning.enabled && !fold.inner.pairs.empty()) {
                const GramFn fixed = [&](std::span<const std::size_t> train,
                                         std::span<const std::size_t> test, Eigen::MatrixXd& k_train,
                                         Eigen::MatrixXd& k_cross) {
                    std::vector<Eigen::MatrixXd> blocks;
                    gather(ks, train, train, blocks);
                    k_train = combine_kernels(blocks, eta0, degree);
                    gather(ks, train, test, blocks);
                    k_cross = combine_kernels(blocks, eta0, degree);
                };
                double best = std::numeric_limits<double>::infinity();
                svr = tune_svr_grid(fold, fixed, best);
            }
            fold.combined_svr = svr;
        }
        const SvrConfig& svr = *fold.combined_svr;
        const Split& s = fold.outer;
        Scored out(s.pairs.size());
        const std::size_t n_items = s.pairs_by_item.size();
        std::vector<std::optional<ItemProblem>> problems(n_items);
        for (std::size_t w = 0; w < n_items; ++w) {
            if (s.pairs_by_item[w].empty()) continue;
            problems[w] = item_problem(s, w);
            if (!problems[w]) fill_fallback(s, w, fold.global, out);
        }

        auto predict_item = [&](std::size_t w, const SvrModel& model, std::span<const double> eta) {
            const auto& p = *problems[w];
            std::vector<Eigen::MatrixXd> blocks;
            gather(ks, p.train, p.test, blocks);
            const Eigen::MatrixXd k_cross = combine_kernels(blocks, eta, degree);
            for (std::size_t j = 0; j < p.test.size(); ++j) {
                out.raw[s.pairs_by_item[w][j]] = predict_svr(
                    model, std::span<const double>(k_cross.col(static_cast<Eigen::Index>(j)).data(),
                                                   p.train.size()),
                    false);
            }
        };

        if (cfg_.shared_eta) {
            std::vector<MklTask> tasks;
            std::vector<std::size_t> task_item;
            for (std::size_t w = 0; w < n_items; ++w) {
                if (!problems[w]) continue;
                MklTask t;
                gather(ks, problems[w]->train, problems[w]->train, t.kernels);
                t.y = problems[w]->y;
                tasks.push_back(std::move(t));
                task_item.push_back(w);
            }
            if (tasks.empty()) return out;
            const MklFit fit = fit_nlmkl_shared(tasks, svr, cfg_.mkl);
            for (std::size_t t = 0; t < tasks.size(); ++t) predict_item(task_item[t], fit.models[t], fit.state.eta);
            etas.push_back(fit.state.eta);
            return out;
        }

        std::vector<std::vector<double>> item_eta(n_items);
        parallel_for(n_items, threads_, [&](std::size_t w) {
            if (!problems[w]) return;
            std::vector<Eigen::MatrixXd> blocks;
            gather(ks, problems[w]->train, problems[w]->train, blocks);
            auto [state, model] = fit_nlmkl(std::span<const Eigen::MatrixXd>(blocks), problems[w]->y,
                                            svr, cfg_.mkl);
            predict_item(w, model, state.eta);
            item_eta[w] = std::move(state.eta);
        });
        for (auto& e : item_eta) {
            if (!e.empty()) etas.push_back(std::move(e));
        }
        return out;
    }

    const Dataset& data_;
    const EvaluationConfig& cfg_;
    std::vector<MethodSpec> specs_;
    std::size_t threads_ = 1;
    bool need_kernels_ = false;
    SvrConfig svr_base_;
    KernelBank bank_;
    std::vector<Variant> id_variants_;
    RatingKernels rating_kernels_;
    std::vector<std::vector<std::vector<UserIndex>>> levels_;
};

}  // namespace

EvaluationReport run_cross_validation(const Dataset& dataset, const EvaluationConfig& config,
                                      const ProgressCallback& on_repetition) {
    config.validate();
    if (config.folds > dataset.n_users()) {
        throw ParameterError("more folds (" + std::to_string(config.folds) + ") than users (" +
                             std::to_string(dataset.n_users()) + ")");
    }
    CrossValidation cv(dataset, config);
    return cv.run(on_repetition);
}

// ---------------------------------------------------------------------------
// Report I/O

namespace {

std::string table4_name(KernelLabel l) {
    return l == KernelLabel::Ones ? "ONES" : "K_" + label_str(l);
}

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json report_to_json(const EvaluationReport& report) {
    json j;
    j["config"] = report.config;
    j["repetitions_done"] = report.repetitions_done;
    json methods = json::array();
    for (const auto& m : report.methods) {
        methods.push_back({{"name", m.name},
                           {"rmse_mean", nan_to_null(m.rmse_mean())},
                           {"rmse_std", nan_to_null(m.rmse_std())},
                           {"rmse_per_rep", m.rmse_per_rep},
                           {"rmse_clamped_per_rep", m.rmse_clamped_per_rep},
                           {"rmse_unclamped_per_rep", m.rmse_unclamped_per_rep},
                           {"pairs", m.pairs},
                           {"predicted", m.predicted},
                           {"coverage", m.coverage()},
                           {"seconds", m.seconds}});
    }
    j["methods"] = methods;
    j["eta_average"] = report.eta_average;
    json labels = json::array();
    for (auto l : kAllKernelLabels) labels.push_back(table4_name(l));
    j["eta_labels"] = labels;
    j["eta_fits"] = report.eta_fits;
    json bins = json::array();
    for (const auto& b : report.bins) {
        json rm = json::object();
        for (const auto& [name, v] : b.rmse) rm[name] = v;
        bins.push_back({{"bin", std::string(friend_bin_label(b.bin))},
                        {"users", b.users},
                        {"pairs", b.pairs},
                        {"rmse", rm}});
    }
    j["bins"] = bins;
    return j;
}

EvaluationReport report_from_json(const json& j) {
    try {
        EvaluationReport r;
        r.config = j.at("config");
        r.repetitions_done = j.value("repetitions_done", std::size_t{0});
        for (const auto& m : j.at("methods")) {
            MethodResult mr;
            mr.name = m.at("name").get<std::string>();
            mr.rmse_per_rep = m.at("rmse_per_rep").get<std::vector<double>>();
            mr.rmse_clamped_per_rep = m.value("rmse_clamped_per_rep", std::vector<double>{});
            mr.rmse_unclamped_per_rep = m.value("rmse_unclamped_per_rep", std::vector<double>{});
            mr.pairs = m.value("pairs", std::size_t{0});
            mr.predicted = m.value("predicted", std::size_t{0});
            mr.seconds = m.value("seconds", 0.0);
            r.methods.push_back(std::move(mr));
        }
        const auto eta = j.at("eta_average").get<std::vector<double>>();
        if (eta.size() != kKernelCount) throw ValidationError("eta_average must have 8 entries");
        std::copy(eta.begin(), eta.end(), r.eta_average.begin());
        r.eta_fits = j.value("eta_fits", std::size_t{0});
        for (const auto& b : j.at("bins")) {
            BinRow row;
            const auto label = b.at("bin").get<std::string>();
            bool found = label == friend_bin_label(FriendBin::Zero);
            row.bin = FriendBin::Zero;
            for (auto fb : kReportedFriendBins) {
                if (friend_bin_label(fb) == label) {
                    row.bin = fb;
                    found = true;
                }
            }
            if (!found) throw ValidationError("unknown friend bin '" + label + "'");
            row.users = b.at("users").get<std::size_t>();
            row.pairs = b.at("pairs").get<std::size_t>();
            for (const auto& [name, v] : b.at("rmse").items()) row.rmse[name] = v.get<double>();
            r.bins.push_back(std::move(row));
        }
        return r;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed report: ") + e.what());
    }
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << content;
    if (!f) throw IoError("short write to " + path.string());
}

std::string num(double v) {
    if (!std::isfinite(v)) return "";
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

}  // namespace

void export_report(const EvaluationReport& report, const std::filesystem::path& out_dir) {
    if (report.methods.empty()) throw ParameterError("report has no methods");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    write_file(out_dir / "report.json", report_to_json(report).dump(2) + "\n");

    std::string t3 = "method,rmse_mean,rmse_std\n";
    for (const auto& m : report.methods) t3 += m.name + "," + num(m.rmse_mean()) + "," + num(m.rmse_std()) + "\n";
    write_file(out_dir / "table3.csv", t3);

    std::string t4 = "kernel,average_eta\n";
    for (auto l : kAllKernelLabels) {
        t4 += table4_name(l) + "," + num(report.eta_average[static_cast<std::size_t>(l)]) + "\n";
    }
    write_file(out_dir / "table4.csv", t4);

    std::string f4 = "bin,users,pairs";
    for (const auto& m : report.methods) f4 += "," + m.name;
    f4 += "\n";
    std::vector<const BinRow*> order;
    for (const auto& b : report.bins) {
        if (b.bin != FriendBin::Zero) order.push_back(&b);
    }
    for (const auto& b : report.bins) {
        if (b.bin == FriendBin::Zero) order.push_back(&b);
    }
    for (const BinRow* b : order) {
        f4 += std::string(friend_bin_label(b->bin)) + "," + std::to_string(b->users) + "," +
              std::to_string(b->pairs);
        for (const auto& m : report.methods) {
            const auto it = b->rmse.find(m.name);
            f4 += "," + (it == b->rmse.end() ? std::string() : num(it->second));
        }
        f4 += "\n";
    }
    write_file(out_dir / "fig4.csv", f4);
}

std::string format_summary(const EvaluationReport& report) {
    std::vector<const MethodResult*> sorted;
    for (const auto& m : report.methods) sorted.push_back(&m);
    std::stable_sort(sorted.begin(), sorted.end(), [](const MethodResult* a, const MethodResult* b) {
        return a->rmse_mean() < b->rmse_mean();
    });
    std::ostringstream out;
    out << std::left << std::setw(22) << "method" << std::right << std::setw(10) << "rmse"
        << std::setw(10) << "std" << std::setw(10) << "coverage" << std::setw(10) << "seconds" << "\n";
    out << std::fixed;
    for (const auto* m : sorted) {
        out << std::left << std::setw(22) << m->name << std::right << std::setprecision(4)
            << std::setw(10) << m->rmse_mean() << std::setw(10) << m->rmse_std() << std::setprecision(3)
            << std::setw(10) << m->coverage() << std::setprecision(1) << std::setw(10) << m->seconds
            << "\n";
    }
    return out.str();
}

}  // namespace socialmkl
