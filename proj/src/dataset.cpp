#include "socialmkl/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "socialmkl/error.hpp"

namespace socialmkl {

// ---------------------------------------------------------------------------
// RatingMatrix

RatingMatrix::RatingMatrix(std::size_t n_users, std::size_t n_items,
                           std::vector<RatingEntry> entries) {
    for (const auto& e : entries) {
        if (e.user >= n_users || e.item >= n_items) {
            throw ReferenceError("rating (" + std::to_string(e.user) + "," +
                                 std::to_string(e.item) + ") out of index range");
        }
        if (!(e.value >= kMinRating && e.value <= kMaxRating)) {
            throw RangeError("rating " + std::to_string(e.value) + " outside [1,10]");
        }
    }
    std::sort(entries.begin(), entries.end(), [](const RatingEntry& a, const RatingEntry& b) {
        return a.user != b.user ? a.user < b.user : a.item < b.item;
    });
    for (std::size_t i = 1; i < entries.size(); ++i) {
        if (entries[i].user == entries[i - 1].user && entries[i].item == entries[i - 1].item) {
            throw ParameterError("duplicate rating for user " + std::to_string(entries[i].user) +
                                 " item " + std::to_string(entries[i].item));
        }
    }

    user_offsets_.assign(n_users + 1, 0);
    item_offsets_.assign(n_items + 1, 0);
    for (const auto& e : entries) {
        ++user_offsets_[e.user + 1];
        ++item_offsets_[e.item + 1];
    }
    std::partial_sum(user_offsets_.begin(), user_offsets_.end(), user_offsets_.begin());
    std::partial_sum(item_offsets_.begin(), item_offsets_.end(), item_offsets_.begin());

    by_user_.resize(entries.size());
    by_item_.resize(entries.size());
    std::vector<std::size_t> item_fill(item_offsets_.begin(), item_offsets_.end() - 1);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        by_user_[i] = {e.item, e.value};
        by_item_[item_fill[e.item]++] = {e.user, e.value};
        sum_ += e.value;
    }
}

std::span<const ItemRating> RatingMatrix::user_ratings(UserIndex u) const {
    if (u >= n_users()) throw ReferenceError("unknown user index " + std::to_string(u));
    return {by_user_.data() + user_offsets_[u], user_offsets_[u + 1] - user_offsets_[u]};
}

std::span<const UserRating> RatingMatrix::item_ratings(ItemIndex w) const {
    if (w >= n_items()) throw ReferenceError("unknown item index " + std::to_string(w));
    return {by_item_.data() + item_offsets_[w], item_offsets_[w + 1] - item_offsets_[w]};
}

std::optional<double> RatingMatrix::rating(UserIndex u, ItemIndex w) const {
    const auto row = user_ratings(u);
    auto it = std::lower_bound(row.begin(), row.end(), w,
                               [](const ItemRating& r, ItemIndex item) { return r.item < item; });
    if (it == row.end() || it->item != w) return std::nullopt;
    return it->value;
}

std::optional<double> RatingMatrix::user_mean(UserIndex u) const {
    const auto row = user_ratings(u);
    if (row.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& r : row) s += r.value;
    return s / static_cast<double>(row.size());
}

std::optional<double> RatingMatrix::item_mean(ItemIndex w) const {
    const auto col = item_ratings(w);
    if (col.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& r : col) s += r.value;
    return s / static_cast<double>(col.size());
}

std::optional<double> RatingMatrix::global_mean() const {
    if (by_user_.empty()) return std::nullopt;
    return sum_ / static_cast<double>(by_user_.size());
}

std::vector<RatingEntry> RatingMatrix::entries() const {
    std::vector<RatingEntry> out;
    out.reserve(by_user_.size());
    for (UserIndex u = 0; u < n_users(); ++u) {
        for (const auto& r : user_ratings(u)) out.push_back({u, r.item, r.value});
    }
    return out;
}

RatingMatrix RatingMatrix::restricted_to_users(const std::vector<bool>& keep) const {
    if (keep.size() != n_users()) throw ParameterError("user mask has wrong length");
    std::vector<RatingEntry> kept;
    for (UserIndex u = 0; u < n_users(); ++u) {
        if (!keep[u]) continue;
        for (const auto& r : user_ratings(u)) kept.push_back({u, r.item, r.value});
    }
    return RatingMatrix(n_users(), n_items(), std::move(kept));
}

// ---------------------------------------------------------------------------
// Dataset

namespace {

void check_tokens(const std::vector<TokenSet>& sets, std::size_t n, const char* what) {
    if (sets.size() != n) {
        throw ParameterError(std::string(what) + " must have one entry per user");
    }
    for (const auto& s : sets) {
        if (!std::is_sorted(s.begin(), s.end()) ||
            std::adjacent_find(s.begin(), s.end()) != s.end()) {
            throw ParameterError(std::string(what) + " token sets must be sorted and unique");
        }
    }
}

}  // namespace

Dataset::Dataset(std::vector<std::string> user_ids, std::vector<std::string> item_ids,
                 RatingMatrix ratings, SocialGraph graph, std::vector<TokenSet> demographics,
                 std::vector<TokenSet> claims)
    : user_ids_(std::move(user_ids)),
      item_ids_(std::move(item_ids)),
      ratings_(std::move(ratings)),
      graph_(std::move(graph)),
      demographics_(std::move(demographics)),
      claims_(std::move(claims)) {
    const auto n = user_ids_.size();
    if (ratings_.n_users() != n || ratings_.n_items() != item_ids_.size()) {
        throw ParameterError("rating matrix shape does not match the id lists");
    }
    if (graph_.size() != n) throw ParameterError("graph size does not match user count");
    check_tokens(demographics_, n, "demographics");
    check_tokens(claims_, n, "claims");
    for (UserIndex u = 0; u < n; ++u) {
        if (!user_lookup_.emplace(user_ids_[u], u).second) {
            throw ParameterError("duplicate user id '" + user_ids_[u] + "'");
        }
    }
    for (ItemIndex w = 0; w < item_ids_.size(); ++w) {
        if (!item_lookup_.emplace(item_ids_[w], w).second) {
            throw ParameterError("duplicate item id '" + item_ids_[w] + "'");
        }
    }
}

std::optional<UserIndex> Dataset::find_user(const std::string& id) const {
    auto it = user_lookup_.find(id);
    if (it == user_lookup_.end()) return std::nullopt;
    return it->second;
}

std::optional<ItemIndex> Dataset::find_item(const std::string& id) const {
    auto it = item_lookup_.find(id);
    if (it == item_lookup_.end()) return std::nullopt;
    return it->second;
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_row(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(trim(std::string_view(line).substr(
            start, comma == std::string::npos ? std::string::npos : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return fields;
}

/// Calls `row(fields, line_number)` for every data row after checking the header.
template <typename RowFn>
void read_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
              RowFn&& row) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
            line.erase(0, 3);
        }
        if (trim(line).empty()) continue;
        auto fields = split_row(line);
        if (!header_seen) {
            if (fields != header) {
                std::string expected;
                for (const auto& h : header) expected += (expected.empty() ? "" : ",") + h;
                throw ParseError(path.string(), line_no, "expected header '" + expected + "'");
            }
            header_seen = true;
            continue;
        }
        if (fields.size() != header.size()) {
            throw ParseError(path.string(), line_no,
                             "expected " + std::to_string(header.size()) + " fields, got " +
                                 std::to_string(fields.size()));
        }
        for (const auto& f : fields) {
            if (f.empty()) throw ParseError(path.string(), line_no, "empty field");
        }
        row(fields, line_no);
    }
    if (!header_seen) throw ParseError(path.string(), line_no, "missing header");
}

double parse_rating(const std::string& text, const std::filesystem::path& path, std::size_t line) {
    double value = 0.0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw ParseError(path.string(), line, "rating '" + text + "' is not a number");
    }
    if (!(value >= kMinRating && value <= kMaxRating)) {
        throw RangeError(path.string() + ":" + std::to_string(line) + ": rating " + text +
                         " outside [1,10]");
    }
    return value;
}

class IdTable {
public:
    std::size_t intern(const std::string& id) {
        auto [it, inserted] = lookup_.emplace(id, ids_.size());
        if (inserted) ids_.push_back(id);
        return it->second;
    }
    std::optional<std::size_t> find(const std::string& id) const {
        auto it = lookup_.find(id);
        if (it == lookup_.end()) return std::nullopt;
        return it->second;
    }
    std::size_t size() const { return ids_.size(); }
    std::vector<std::string> take() { return std::move(ids_); }

private:
    std::unordered_map<std::string, std::size_t> lookup_;
    std::vector<std::string> ids_;
};

}  // namespace

Dataset load_dataset(const DatasetPaths& paths, const LoadOptions& options) {
    IdTable users;
    IdTable items;
    std::vector<RatingEntry> entries;
    std::set<std::pair<std::size_t, std::size_t>> seen_pairs;

    read_csv(paths.ratings, {"user_id", "item_id", "rating"},
             [&](const std::vector<std::string>& f, std::size_t line) {
                 const double value = parse_rating(f[2], paths.ratings, line);
                 const auto u = users.intern(f[0]);
                 const auto w = items.intern(f[1]);
                 if (!seen_pairs.emplace(u, w).second) {
                     throw ParseError(paths.ratings.string(), line,
                                      "duplicate rating for (" + f[0] + "," + f[1] + ")");
                 }
                 entries.push_back({u, w, value});
             });

    auto resolve_user = [&](const std::string& id, const std::filesystem::path& path,
                            std::size_t line) -> std::size_t {
        if (options.strict) {
            auto u = users.find(id);
            if (!u) {
                throw ReferenceError(path.string() + ":" + std::to_string(line) +
                                     ": unknown user '" + id + "'");
            }
            return *u;
        }
        return users.intern(id);
    };

    std::vector<std::pair<UserIndex, UserIndex>> edges;
    read_csv(paths.friendships, {"user_id_a", "user_id_b"},
             [&](const std::vector<std::string>& f, std::size_t line) {
                 if (f[0] == f[1]) {
                     throw ParseError(paths.friendships.string(), line,
                                      "self-friendship for '" + f[0] + "'");
                 }
                 const auto a = resolve_user(f[0], paths.friendships, line);
                 const auto b = resolve_user(f[1], paths.friendships, line);
                 edges.emplace_back(a, b);
             });

    std::vector<std::pair<std::size_t, std::string>> demo_tokens;
    if (paths.demographics) {
        read_csv(*paths.demographics, {"user_id", "attribute", "value"},
                 [&](const std::vector<std::string>& f, std::size_t line) {
                     const auto u = resolve_user(f[0], *paths.demographics, line);
                     demo_tokens.emplace_back(u, f[1] + "=" + f[2]);
                 });
    }
    std::vector<std::pair<std::size_t, std::string>> claim_tokens;
    if (paths.claims) {
        read_csv(*paths.claims, {"user_id", "claim"},
                 [&](const std::vector<std::string>& f, std::size_t line) {
                     const auto u = resolve_user(f[0], *paths.claims, line);
                     claim_tokens.emplace_back(u, f[1]);
                 });
    }

    const std::size_t n = users.size();
    auto to_sets = [n](std::vector<std::pair<std::size_t, std::string>>& tokens) {
        std::vector<TokenSet> sets(n);
        for (auto& [u, t] : tokens) sets[u].push_back(std::move(t));
        for (auto& s : sets) {
            std::sort(s.begin(), s.end());
            s.erase(std::unique(s.begin(), s.end()), s.end());
        }
        return sets;
    };

    SocialGraph graph(n, edges);
    auto user_ids = users.take();
    if (options.strict) {
        for (UserIndex u = 0; u < n; ++u) {
            if (graph.degree(u) == 0) {
                throw ValidationError("user '" + user_ids[u] + "' has no friends (strict mode)");
            }
        }
    }
    const std::size_t n_items = items.size();
    return Dataset(std::move(user_ids), items.take(), RatingMatrix(n, n_items, std::move(entries)),
                   std::move(graph), to_sets(demo_tokens), to_sets(claim_tokens));
}

namespace {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    const auto& uid = dataset.user_ids();
    const auto& iid = dataset.item_ids();
    {
        auto out = open_for_write(dir / "ratings.csv");
        out << "user_id,item_id,rating\n";
        for (const auto& e : dataset.ratings().entries()) {
            out << uid[e.user] << ',' << iid[e.item] << ',' << format_double(e.value) << '\n';
        }
    }
    {
        auto out = open_for_write(dir / "friendships.csv");
        out << "user_id_a,user_id_b\n";
        for (auto [a, b] : dataset.graph().edges()) out << uid[a] << ',' << uid[b] << '\n';
    }
    {
        auto out = open_for_write(dir / "demographics.csv");
        out << "user_id,attribute,value\n";
        for (UserIndex u = 0; u < dataset.n_users(); ++u) {
            for (const auto& token : dataset.demographics()[u]) {
                const auto eq = token.find('=');
                out << uid[u] << ',' << token.substr(0, eq) << ','
                    << (eq == std::string::npos ? std::string("1") : token.substr(eq + 1)) << '\n';
            }
        }
    }
    {
        auto out = open_for_write(dir / "claims.csv");
        out << "user_id,claim\n";
        for (UserIndex u = 0; u < dataset.n_users(); ++u) {
            for (const auto& token : dataset.claims()[u]) out << uid[u] << ',' << token << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Folds

std::vector<UserIndex> FoldAssignment::members(std::size_t fold) const {
    std::vector<UserIndex> out;
    for (UserIndex u = 0; u < fold_of.size(); ++u) {
        if (fold_of[u] == fold) out.push_back(u);
    }
    return out;
}

std::vector<std::size_t> FoldAssignment::fold_sizes() const {
    std::vector<std::size_t> sizes(k, 0);
    for (auto f : fold_of) ++sizes[f];
    return sizes;
}

FoldAssignment split_folds(std::size_t n_users, std::size_t k, std::uint64_t seed) {
    if (k < 2 || k > n_users) {
        throw ParameterError("fold count " + std::to_string(k) + " must lie in [2, " +
                             std::to_string(n_users) + "]");
    }
    std::vector<UserIndex> order(n_users);
    std::iota(order.begin(), order.end(), UserIndex{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    FoldAssignment folds;
    folds.k = k;
    folds.seed = seed;
    folds.fold_of.assign(n_users, 0);
    for (std::size_t i = 0; i < n_users; ++i) folds.fold_of[order[i]] = i % k;
    return folds;
}

FoldAssignment split_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
    return split_folds(dataset.n_users(), k, seed);
}

}  // namespace socialmkl
