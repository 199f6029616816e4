// Copyright 2026-present the semid authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "semid/common.hpp"
#include "semid/io.hpp"

namespace semid {

inline constexpr const char* kStoreStage = "embedding_store";

struct CatalogItem {
    std::string item_id;
    std::uint64_t train_popularity = 0;
};

/// The item universe. Dense indices 0..n-1 follow insertion order.
class Catalog {
   public:
    Catalog() = default;

    explicit Catalog(std::vector<CatalogItem> items) : items_(std::move(items)) {
        index_.reserve(items_.size());
        for (std::size_t i = 0; i < items_.size(); ++i) {
            const bool fresh = index_.emplace(items_[i].item_id, i).second;
            SEMID_THROW_IF_NOT(fresh, Errc::duplicate_item, kStoreStage,
                               "duplicate item_id '" + items_[i].item_id + "'");
        }
    }

    std::size_t size() const noexcept {
        return items_.size();
    }
    const CatalogItem& operator[](std::size_t i) const {
        return items_[i];
    }
    const std::vector<CatalogItem>& items() const noexcept {
        return items_;
    }

    std::optional<std::size_t> find(const std::string& item_id) const {
        auto it = index_.find(item_id);
        if (it == index_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::size_t at(const std::string& item_id) const {
        auto idx = find(item_id);
        SEMID_THROW_IF_NOT(idx.has_value(), Errc::missing_item, kStoreStage,
                           "unknown item_id '" + item_id + "'");
        return *idx;
    }

    std::vector<std::uint64_t> popularity() const {
        std::vector<std::uint64_t> p(items_.size());
        for (std::size_t i = 0; i < items_.size(); ++i) {
            p[i] = items_[i].train_popularity;
        }
        return p;
    }

    void set_popularity(const std::vector<std::uint64_t>& pop) {
        SEMID_THROW_IF_NOT(pop.size() == items_.size(), Errc::shape_mismatch, kStoreStage,
                           "popularity vector does not match catalog size");
        for (std::size_t i = 0; i < items_.size(); ++i) {
            items_[i].train_popularity = pop[i];
        }
    }

    /// Identity of the item universe and its order (popularity excluded).
    std::string fingerprint() const {
        std::string s;
        for (const auto& it : items_) {
            s += it.item_id;
            s.push_back('\n');
        }
        return sha256_hex(s).substr(0, 16);
    }

   private:
    std::vector<CatalogItem> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline Catalog load_catalog(const std::filesystem::path& path) {
    const Tsv t = read_tsv(path);
    const auto c_id = t.column("item_id");
    const auto c_pop = t.column("train_popularity");
    std::vector<CatalogItem> items;
    items.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        const long long pop = parse_int(r[c_pop], "train_popularity");
        SEMID_THROW_IF_NOT(pop >= 0, Errc::malformed, kStoreStage,
                           "negative train_popularity for '" + r[c_id] + "'");
        items.push_back({r[c_id], static_cast<std::uint64_t>(pop)});
    }
    return Catalog(std::move(items));
}

inline void save_catalog(const std::filesystem::path& path, const Catalog& c) {
    std::string out = "item_id\ttrain_popularity\n";
    for (const auto& it : c.items()) {
        out += it.item_id + "\t" + std::to_string(it.train_popularity) + "\n";
    }
    write_text_file(path, out);
}

struct EmbeddingMatrix {
    Matrix data;
    std::string aligned_to; // catalog fingerprint, empty until aligned
    bool normalized = false;

    std::size_t rows() const noexcept {
        return data.rows();
    }
    std::size_t dim() const noexcept {
        return data.cols();
    }
    std::span<const float> row(std::size_t i) const noexcept {
        return data.row(i);
    }
};

inline void check_finite(const Matrix& m, std::string_view what) {
    const auto& v = m.values();
    for (std::size_t k = 0; k < v.size(); ++k) {
        SEMID_THROW_IF_NOT(std::isfinite(v[k]), Errc::non_finite, kStoreStage,
                           std::string(what) + ": non-finite entry at row " +
                                   std::to_string(k / std::max<std::size_t>(1, m.cols())));
    }
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path,
                                       std::optional<std::size_t> expected_rows = {}) {
    Matrix m;
    try {
        m = read_matrix(path);
    } catch (const Error& e) {
        throw Error(e.code(), kStoreStage, e.what());
    }
    if (expected_rows) {
        SEMID_THROW_IF_NOT(m.rows() == *expected_rows, Errc::shape_mismatch, kStoreStage,
                           path.string() + ": " + std::to_string(m.rows()) +
                                   " rows, expected " + std::to_string(*expected_rows));
    }
    check_finite(m, path.string());
    return EmbeddingMatrix{std::move(m), {}, false};
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
    write_matrix(path, m.data);
}

inline EmbeddingMatrix l2_normalize(const EmbeddingMatrix& in) {
    EmbeddingMatrix out = in;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.data.row(i);
        const double n = std::sqrt(sq_norm(r));
        SEMID_THROW_IF_NOT(n > 0.0, Errc::zero_norm, kStoreStage,
                           "zero-norm row " + std::to_string(i));
        for (auto& x : r) {
            x = static_cast<float>(x / n);
        }
    }
    out.normalized = true;
    return out;
}

/// Normalizes a single vector; throws on zero norm.
inline std::vector<float> l2_normalized(std::span<const float> v) {
    const double n = std::sqrt(sq_norm(v));
    SEMID_THROW_IF_NOT(n > 0.0, Errc::zero_norm, kStoreStage, "zero-norm vector");
    std::vector<float> out(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) {
        out[j] = static_cast<float>(v[j] / n);
    }
    return out;
}

inline std::vector<std::string> load_manifest(const std::filesystem::path& path) {
    return read_lines(path);
}

inline void save_manifest(const std::filesystem::path& path, const Catalog& c) {
    std::string out;
    for (const auto& it : c.items()) {
        out += it.item_id + "\n";
    }
    write_text_file(path, out);
}

/// Permutes rows from manifest order into catalog dense-index order.
inline EmbeddingMatrix align(const Catalog& catalog, const EmbeddingMatrix& m,
                             const std::vector<std::string>& manifest) {
    SEMID_THROW_IF_NOT(manifest.size() == m.rows(), Errc::shape_mismatch, kStoreStage,
                       "manifest has " + std::to_string(manifest.size()) +
                               " lines but matrix has " + std::to_string(m.rows()) + " rows");
    std::vector<std::ptrdiff_t> source(catalog.size(), -1);
    for (std::size_t r = 0; r < manifest.size(); ++r) {
        const auto idx = catalog.find(manifest[r]);
        SEMID_THROW_IF_NOT(idx.has_value(), Errc::missing_item, kStoreStage,
                           "manifest item '" + manifest[r] + "' not in catalog");
        SEMID_THROW_IF_NOT(source[*idx] < 0, Errc::duplicate_item, kStoreStage,
                           "duplicate manifest item '" + manifest[r] + "'");
        source[*idx] = static_cast<std::ptrdiff_t>(r);
    }
    for (std::size_t i = 0; i < catalog.size(); ++i) {
        SEMID_THROW_IF_NOT(source[i] >= 0, Errc::missing_item, kStoreStage,
                           "catalog item '" + catalog[i].item_id + "' missing from manifest");
    }
    EmbeddingMatrix out{Matrix(catalog.size(), m.dim()), catalog.fingerprint(), m.normalized};
    for (std::size_t i = 0; i < catalog.size(); ++i) {
        const auto src = m.row(static_cast<std::size_t>(source[i]));
        std::copy(src.begin(), src.end(), out.data.row(i).begin());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Interactions

enum class Split { train, test };

inline const char* split_name(Split s) {
    return s == Split::train ? "train" : "test";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") {
        return Split::train;
    }
    if (s == "test") {
        return Split::test;
    }
    throw Error(Errc::malformed, kStoreStage, "split must be train|test, got '" + s + "'");
}

struct Interaction {
    std::string user_id;
    std::size_t item = 0; // catalog dense index
    std::int64_t timestamp = 0;
    Split split = Split::train;
};

/// Interaction log with a dense user index (users sorted by id).
class InteractionLog {
   public:
    InteractionLog() = default;

    InteractionLog(const Catalog& catalog, std::vector<Interaction> triples)
            : triples_(std::move(triples)), n_items_(catalog.size()) {
        std::map<std::string, std::size_t> users;
        for (const auto& t : triples_) {
            SEMID_THROW_IF_NOT(t.item < n_items_, Errc::missing_item, kStoreStage,
                               "interaction item index out of range");
            users.emplace(t.user_id, 0);
        }
        std::size_t u = 0;
        for (auto& [id, idx] : users) {
            idx = u++;
            user_ids_.push_back(id);
        }
        train_.assign(user_ids_.size(), {});
        test_.assign(user_ids_.size(), std::nullopt);
        std::vector<std::int64_t> last_ts(user_ids_.size(), INT64_MIN);
        for (const auto& t : triples_) {
            last_ts[users[t.user_id]] = std::max(last_ts[users[t.user_id]], t.timestamp);
        }
        // train lists keep chronological order; ties keep file order
        std::vector<std::size_t> order(triples_.size());
        for (std::size_t k = 0; k < order.size(); ++k) {
            order[k] = k;
        }
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return triples_[a].timestamp < triples_[b].timestamp;
        });
        for (const std::size_t k : order) {
            const auto& t = triples_[k];
            const std::size_t uu = users[t.user_id];
            if (t.split == Split::test) {
                SEMID_THROW_IF_NOT(!test_[uu].has_value(), Errc::malformed, kStoreStage,
                                   "user '" + t.user_id + "' has more than one test interaction");
                SEMID_THROW_IF_NOT(t.timestamp == last_ts[uu], Errc::malformed, kStoreStage,
                                   "test interaction of user '" + t.user_id +
                                           "' is not chronologically last");
                test_[uu] = t.item;
            } else {
                train_[uu].push_back(t.item);
            }
        }
        for (const auto& t : triples_) {
            const std::size_t uu = users[t.user_id];
            SEMID_THROW_IF_NOT(t.split == Split::test || !test_[uu].has_value() ||
                                       t.timestamp < last_ts[uu],
                               Errc::malformed, kStoreStage,
                               "user '" + t.user_id +
                                       "' has a train interaction tied with the test one");
        }
    }

    std::size_t n_users() const noexcept {
        return user_ids_.size();
    }
    std::size_t n_items() const noexcept {
        return n_items_;
    }
    const std::vector<std::string>& user_ids() const noexcept {
        return user_ids_;
    }
    const std::vector<Interaction>& triples() const noexcept {
        return triples_;
    }
    /// Train items of user u in chronological order (may repeat).
    const std::vector<std::size_t>& train_items(std::size_t u) const {
        return train_[u];
    }
    std::optional<std::size_t> test_item(std::size_t u) const {
        return test_[u];
    }

    std::optional<std::size_t> find_user(const std::string& id) const {
        auto it = std::lower_bound(user_ids_.begin(), user_ids_.end(), id);
        if (it == user_ids_.end() || *it != id) {
            return std::nullopt;
        }
        return static_cast<std::size_t>(it - user_ids_.begin());
    }

    /// Count of train interactions per item.
    std::vector<std::uint64_t> train_popularity() const {
        std::vector<std::uint64_t> p(n_items_, 0);
        for (const auto& items : train_) {
            for (const auto i : items) {
                ++p[i];
            }
        }
        return p;
    }

    /// Distinct observed (user, item) train pairs, sorted.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> train_pairs() const {
        std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
        for (std::size_t u = 0; u < train_.size(); ++u) {
            for (const auto i : train_[u]) {
                out.emplace_back(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(i));
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

   private:
    std::vector<Interaction> triples_;
    std::size_t n_items_ = 0;
    std::vector<std::string> user_ids_;
    std::vector<std::vector<std::size_t>> train_;
    std::vector<std::optional<std::size_t>> test_;
};

/// Marks each user's chronologically last interaction as test (users with a
/// single interaction keep it in train).
inline std::vector<Interaction> chronological_split(std::vector<Interaction> triples) {
    std::map<std::string, std::size_t> last;
    for (std::size_t k = 0; k < triples.size(); ++k) {
        triples[k].split = Split::train;
        auto [it, fresh] = last.emplace(triples[k].user_id, k);
        if (!fresh && triples[k].timestamp >= triples[it->second].timestamp) {
            it->second = k;
        }
    }
    std::map<std::string, std::size_t> counts;
    for (const auto& t : triples) {
        ++counts[t.user_id];
    }
    for (const auto& [user, k] : last) {
        if (counts[user] > 1) {
            triples[k].split = Split::test;
        }
    }
    return triples;
}

inline InteractionLog load_interactions(const std::filesystem::path& path,
                                        const Catalog& catalog) {
    const Tsv t = read_tsv(path);
    const auto c_user = t.column("user_id");
    const auto c_item = t.column("item_id");
    const auto c_ts = t.column("timestamp");
    const auto c_split = t.column("split");
    std::vector<Interaction> triples;
    triples.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        triples.push_back({r[c_user], catalog.at(r[c_item]),
                           parse_int(r[c_ts], "timestamp"), parse_split(r[c_split])});
    }
    return InteractionLog(catalog, std::move(triples));
}

inline void save_interactions(const std::filesystem::path& path, const Catalog& catalog,
                              const InteractionLog& log) {
    std::string out = "user_id\titem_id\ttimestamp\tsplit\n";
    for (const auto& t : log.triples()) {
        out += t.user_id + "\t" + catalog[t.item].item_id + "\t" + std::to_string(t.timestamp) +
                "\t" + split_name(t.split) + "\n";
    }
    write_text_file(path, out);
}

// ---------------------------------------------------------------------------
// Queries

struct QueryRecord {
    std::string query_id;
    std::size_t relevant_item = 0;
    Split split = Split::train;
};

/// Queries plus their embeddings in one or more named spaces (e.g. "search",
/// "multitask"), each row-aligned to record order.
struct QuerySet {
    std::vector<QueryRecord> records;
    std::map<std::string, EmbeddingMatrix> embeddings;

    std::size_t size() const noexcept {
        return records.size();
    }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t q = 0; q < records.size(); ++q) {
            if (records[q].split == s) {
                out.push_back(q);
            }
        }
        return out;
    }

    /// Per item: (train count, test count).
    std::vector<std::pair<std::size_t, std::size_t>> counts_per_item(std::size_t n_items) const {
        std::vector<std::pair<std::size_t, std::size_t>> c(n_items, {0, 0});
        for (const auto& r : records) {
            (r.split == Split::train ? c[r.relevant_item].first : c[r.relevant_item].second)++;
        }
        return c;
    }

    std::optional<std::size_t> find(const std::string& query_id) const {
        for (std::size_t q = 0; q < records.size(); ++q) {
            if (records[q].query_id == query_id) {
                return q;
            }
        }
        return std::nullopt;
    }

    void add_embeddings(const std::string& space, EmbeddingMatrix m) {
        SEMID_THROW_IF_NOT(m.rows() == records.size(), Errc::shape_mismatch, kStoreStage,
                           "query embeddings for '" + space + "' have " +
                                   std::to_string(m.rows()) + " rows, expected " +
                                   std::to_string(records.size()));
        embeddings[space] = std::move(m);
    }
};

inline std::vector<QueryRecord> load_query_records(const std::filesystem::path& path,
                                                   const Catalog& catalog) {
    const Tsv t = read_tsv(path);
    const auto c_q = t.column("query_id");
    const auto c_item = t.column("relevant_item_id");
    const auto c_split = t.column("split");
    std::vector<QueryRecord> out;
    out.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        out.push_back({r[c_q], catalog.at(r[c_item]), parse_split(r[c_split])});
    }
    return out;
}

inline void save_query_records(const std::filesystem::path& path, const Catalog& catalog,
                               const QuerySet& qs) {
    std::string out = "query_id\trelevant_item_id\tsplit\n";
    for (const auto& r : qs.records) {
        out += r.query_id + "\t" + catalog[r.relevant_item].item_id + "\t" +
                split_name(r.split) + "\n";
    }
    write_text_file(path, out);
}

} // namespace semid
