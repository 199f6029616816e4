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

// Semantic ID layouts:
//
//   task-specific / fused   PLAIN:0:c0 PLAIN:1:c1 ... SUFFIX:0:s
//   separate                SEARCH:0:a ... SUFFIX:0:s  REC:0:b ... SUFFIX:0:s'
//   prefix-share            SHARED:0:x SEARCH:0:y REC:0:z SUFFIX:0:s
//
// Suffix tokens disambiguate code collisions and are counted apart from the
// code-token budget.

#include <compare>
#include <memory>
#include <set>

#include "semid/quantizer.hpp"

namespace semid {

inline constexpr const char* kIdStage = "id_space";

enum class Namespace : std::uint8_t { PLAIN, SHARED, SEARCH, REC, SUFFIX };

inline const char* namespace_name(Namespace ns) {
    switch (ns) {
        case Namespace::PLAIN: return "PLAIN";
        case Namespace::SHARED: return "SHARED";
        case Namespace::SEARCH: return "SEARCH";
        case Namespace::REC: return "REC";
        case Namespace::SUFFIX: return "SUFFIX";
    }
    return "?";
}

inline Namespace parse_namespace(const std::string& s) {
    for (auto ns : {Namespace::PLAIN, Namespace::SHARED, Namespace::SEARCH, Namespace::REC,
                    Namespace::SUFFIX}) {
        if (s == namespace_name(ns)) {
            return ns;
        }
    }
    throw Error(Errc::malformed, kIdStage, "unknown token namespace '" + s + "'");
}

struct Token {
    Namespace ns = Namespace::PLAIN;
    std::uint32_t level = 0;
    std::uint32_t codeword = 0;

    bool is_suffix() const noexcept {
        return ns == Namespace::SUFFIX;
    }
    auto operator<=>(const Token&) const = default;

    std::string str() const {
        return std::string(namespace_name(ns)) + ":" + std::to_string(level) + ":" +
                std::to_string(codeword);
    }

    static Token parse(const std::string& s) {
        const auto parts = split(s, ':');
        SEMID_THROW_IF_NOT(parts.size() == 3, Errc::malformed, kIdStage,
                           "token must be NS:level:codeword, got '" + s + "'");
        return {parse_namespace(parts[0]), static_cast<std::uint32_t>(parse_int(parts[1], "level")),
                static_cast<std::uint32_t>(parse_int(parts[2], "codeword"))};
    }
};

inline Token suffix_token(std::uint32_t s) {
    return {Namespace::SUFFIX, 0, s};
}

using SemanticId = std::vector<Token>;

/// Ordered token set. Token ids are positions in sorted order.
class TokenVocab {
   public:
    void add(const Token& t) {
        tokens_.insert(t);
    }
    bool contains(const Token& t) const {
        return tokens_.count(t) != 0;
    }
    std::size_t size() const noexcept {
        return tokens_.size();
    }
    std::size_t suffix_count() const {
        return static_cast<std::size_t>(
                std::count_if(tokens_.begin(), tokens_.end(), [](const Token& t) { return t.is_suffix(); }));
    }
    /// Code tokens only; the figure the token budgets refer to.
    std::size_t code_budget() const {
        return size() - suffix_count();
    }
    std::size_t count(Namespace ns) const {
        return static_cast<std::size_t>(std::count_if(
                tokens_.begin(), tokens_.end(), [ns](const Token& t) { return t.ns == ns; }));
    }
    std::size_t id_of(const Token& t) const {
        auto it = tokens_.find(t);
        SEMID_THROW_IF_NOT(it != tokens_.end(), Errc::unknown_id, kIdStage,
                           "token " + t.str() + " not in vocabulary");
        return static_cast<std::size_t>(std::distance(tokens_.begin(), it));
    }
    const std::set<Token>& tokens() const noexcept {
        return tokens_;
    }
    bool operator==(const TokenVocab&) const = default;

   private:
    std::set<Token> tokens_;
};

enum class Layout { task_specific, separate, prefix_share };

inline const char* layout_name(Layout l) {
    switch (l) {
        case Layout::task_specific: return "task_specific";
        case Layout::separate: return "separate";
        case Layout::prefix_share: return "prefix_share";
    }
    return "?";
}

inline Layout parse_layout(const std::string& s) {
    for (auto l : {Layout::task_specific, Layout::separate, Layout::prefix_share}) {
        if (s == layout_name(l)) {
            return l;
        }
    }
    throw Error(Errc::malformed, kIdStage, "unknown layout '" + s + "'");
}

/// Layout implied by a strategy name.
inline Layout layout_for_strategy(const std::string& strategy) {
    if (strategy == "separate") {
        return Layout::separate;
    }
    if (strategy == "prefix_share") {
        return Layout::prefix_share;
    }
    return Layout::task_specific;
}

struct IdAssignment {
    std::string strategy;
    Layout layout = Layout::task_specific;
    std::vector<SemanticId> ids;
    TokenVocab vocab;
    std::vector<std::string> provenance;

    std::size_t size() const noexcept {
        return ids.size();
    }

    /// Tokens of one namespace segment, including the suffix that closes it.
    /// Only meaningful for Separate; other layouts return the whole ID.
    SemanticId segment(std::size_t item, Namespace ns) const {
        const auto& id = ids.at(item);
        if (layout != Layout::separate) {
            return id;
        }
        SemanticId out;
        bool in = false;
        for (const auto& t : id) {
            if (t.ns == ns) {
                in = true;
            }
            if (in) {
                out.push_back(t);
                if (t.is_suffix()) {
                    break;
                }
            }
        }
        return out;
    }
};

namespace detail {

inline void add_levels(TokenVocab& vocab, Namespace ns, const RQCodebooks& cb) {
    for (std::size_t l = 0; l < cb.n_levels(); ++l) {
        for (std::size_t c = 0; c < cb.level_size(l); ++c) {
            vocab.add({ns, static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(c)});
        }
    }
}

inline void append_codes(SemanticId& id, Namespace ns, const DisambiguatedCode& dc) {
    for (std::size_t l = 0; l < dc.codes.codes.size(); ++l) {
        id.push_back({ns, static_cast<std::uint32_t>(l), dc.codes.codes[l]});
    }
    id.push_back(suffix_token(dc.suffix));
}

inline void check_coverage(std::size_t got, std::size_t n_items, std::string_view what) {
    SEMID_THROW_IF_NOT(got == n_items, Errc::missing_item, kIdStage,
                       std::string(what) + " cover " + std::to_string(got) + " items, catalog has " +
                               std::to_string(n_items));
}

inline void add_used_suffixes(IdAssignment& a) {
    for (const auto& id : a.ids) {
        for (const auto& t : id) {
            if (t.is_suffix()) {
                a.vocab.add(t);
            }
        }
    }
}

} // namespace detail

inline IdAssignment build_task_specific(const RQCodebooks& cb, const std::vector<CodeSequence>& codes,
                                        std::size_t n_items, std::string strategy = "task_specific") {
    detail::check_coverage(codes.size(), n_items, "codes");
    IdAssignment a;
    a.strategy = std::move(strategy);
    a.layout = Layout::task_specific;
    detail::add_levels(a.vocab, Namespace::PLAIN, cb);
    for (const auto& dc : disambiguate(codes)) {
        SemanticId id;
        detail::append_codes(id, Namespace::PLAIN, dc);
        a.ids.push_back(std::move(id));
    }
    detail::add_used_suffixes(a);
    return a;
}

inline IdAssignment build_separate(const RQCodebooks& search_cb,
                                   const std::vector<CodeSequence>& search_codes,
                                   const RQCodebooks& rec_cb, const std::vector<CodeSequence>& rec_codes,
                                   std::size_t n_items) {
    detail::check_coverage(search_codes.size(), n_items, "search codes");
    detail::check_coverage(rec_codes.size(), n_items, "rec codes");
    IdAssignment a;
    a.strategy = "separate";
    a.layout = Layout::separate;
    detail::add_levels(a.vocab, Namespace::SEARCH, search_cb);
    detail::add_levels(a.vocab, Namespace::REC, rec_cb);
    const auto s = disambiguate(search_codes);
    const auto r = disambiguate(rec_codes);
    for (std::size_t i = 0; i < n_items; ++i) {
        SemanticId id;
        detail::append_codes(id, Namespace::SEARCH, s[i]);
        detail::append_codes(id, Namespace::REC, r[i]);
        a.ids.push_back(std::move(id));
    }
    detail::add_used_suffixes(a);
    return a;
}

/// The three single-level k-means codebooks behind a Prefix-share assignment.
struct PrefixShareCodebooks {
    RQCodebooks shared;
    RQCodebooks search;
    RQCodebooks rec;
};

inline RQCodebooks single_level(KMeansModel km, std::size_t d, std::uint64_t seed) {
    RQCodebooks cb;
    cb.kind = QuantizerKind::rq_kmeans;
    cb.d = d;
    cb.seed = seed;
    const double n = static_cast<double>(km.assignment.size());
    cb.level_mse.push_back(n > 0 ? km.inertia / n : 0.0);
    cb.levels.push_back(std::move(km.centroids));
    return cb;
}

/// Prefix-share as a k-means analog: one K-way code on the fused space
/// (SHARED), one on the search space (SEARCH), one on the rec space (REC).
inline std::pair<IdAssignment, PrefixShareCodebooks> build_prefix_share(
        const EmbeddingMatrix& fused, const EmbeddingMatrix& search, const EmbeddingMatrix& rec,
        std::size_t k, std::size_t max_iters, std::uint64_t seed, std::size_t workers = 1) {
    const std::size_t n = fused.rows();
    detail::check_coverage(search.rows(), n, "search embeddings");
    detail::check_coverage(rec.rows(), n, "rec embeddings");
    SEMID_THROW_IF_NOT(fused.aligned_to == search.aligned_to && fused.aligned_to == rec.aligned_to,
                       Errc::misaligned, kIdStage, "prefix-share spaces aligned to different catalogs");
    auto km_shared = kmeans_fit(fused.data, k, max_iters, derive_seed(seed, 101), workers);
    auto km_search = kmeans_fit(search.data, k, max_iters, derive_seed(seed, 102), workers);
    auto km_rec = kmeans_fit(rec.data, k, max_iters, derive_seed(seed, 103), workers);

    std::vector<CodeSequence> triples(n);
    for (std::size_t i = 0; i < n; ++i) {
        triples[i].codes = {km_shared.assignment[i], km_search.assignment[i], km_rec.assignment[i]};
    }
    PrefixShareCodebooks cbs{single_level(std::move(km_shared), fused.dim(), seed),
                             single_level(std::move(km_search), search.dim(), seed),
                             single_level(std::move(km_rec), rec.dim(), seed)};

    IdAssignment a;
    a.strategy = "prefix_share";
    a.layout = Layout::prefix_share;
    detail::add_levels(a.vocab, Namespace::SHARED, cbs.shared);
    detail::add_levels(a.vocab, Namespace::SEARCH, cbs.search);
    detail::add_levels(a.vocab, Namespace::REC, cbs.rec);
    for (const auto& dc : disambiguate(triples)) {
        a.ids.push_back({{Namespace::SHARED, 0, dc.codes.codes[0]},
                         {Namespace::SEARCH, 0, dc.codes.codes[1]},
                         {Namespace::REC, 0, dc.codes.codes[2]},
                         suffix_token(dc.suffix)});
    }
    detail::add_used_suffixes(a);
    return {std::move(a), std::move(cbs)};
}

// ---------------------------------------------------------------------------
// Trie

class IdTrie {
   public:
    static constexpr std::int64_t kNoItem = -1;

    struct Node {
        Token token; // unused on the root
        std::int64_t parent = -1;
        std::uint32_t depth = 0;
        std::vector<std::uint32_t> children; // sorted by token
        std::int64_t item = kNoItem;
        std::uint32_t leaf_count = 0;
    };

    IdTrie() {
        nodes_.emplace_back();
    }

    /// Inserts a path; throws on a duplicate full path.
    void insert(const SemanticId& id, std::size_t item) {
        std::uint32_t cur = 0;
        for (const auto& t : id) {
            auto& ch = nodes_[cur].children;
            auto it = std::lower_bound(ch.begin(), ch.end(), t,
                                       [this](std::uint32_t n, const Token& tok) { return nodes_[n].token < tok; });
            if (it != ch.end() && nodes_[*it].token == t) {
                cur = *it;
                continue;
            }
            SEMID_THROW_IF_NOT(nodes_[cur].item == kNoItem, Errc::internal, kIdStage,
                               "semantic ID extends a complete ID");
            Node n;
            n.token = t;
            n.parent = cur;
            n.depth = nodes_[cur].depth + 1;
            const auto idx = static_cast<std::uint32_t>(nodes_.size());
            const auto pos = it - ch.begin();
            nodes_.push_back(std::move(n));
            auto& ch2 = nodes_[cur].children;
            ch2.insert(ch2.begin() + pos, idx);
            cur = idx;
        }
        SEMID_THROW_IF_NOT(cur != 0 && nodes_[cur].item == kNoItem && nodes_[cur].children.empty(),
                           Errc::internal, kIdStage,
                           "duplicate semantic ID for item " + std::to_string(item));
        nodes_[cur].item = static_cast<std::int64_t>(item);
        rank_.clear();
        leaf_of_.resize(std::max(leaf_of_.size(), item + 1), 0);
        leaf_of_[item] = cur;
        for (std::int64_t n = cur; n >= 0; n = nodes_[static_cast<std::size_t>(n)].parent) {
            ++nodes_[static_cast<std::size_t>(n)].leaf_count;
        }
    }

    const Node& node(std::uint32_t i) const {
        return nodes_[i];
    }
    std::size_t node_count() const noexcept {
        return nodes_.size();
    }
    const Node& root() const {
        return nodes_[0];
    }
    std::size_t leaf_count() const noexcept {
        return nodes_[0].leaf_count;
    }
    /// Trie node of an item's leaf (items must have been inserted).
    std::uint32_t leaf_of(std::size_t item) const {
        return leaf_of_.at(item);
    }

    /// Assigns every node its preorder rank; among nodes of equal depth this is
    /// the lexicographic order of their token paths. Called by the builders.
    void finalize() {
        rank_.assign(nodes_.size(), 0);
        std::uint32_t next = 0;
        std::vector<std::uint32_t> stack{0};
        while (!stack.empty()) {
            const std::uint32_t n = stack.back();
            stack.pop_back();
            rank_[n] = next++;
            const auto& ch = nodes_[n].children;
            for (auto it = ch.rbegin(); it != ch.rend(); ++it) {
                stack.push_back(*it);
            }
        }
    }
    bool finalized() const noexcept {
        return rank_.size() == nodes_.size();
    }
    std::uint32_t lex_rank(std::uint32_t n) const {
        return rank_[n];
    }

    /// Tokens along the path from root to node n.
    SemanticId path(std::uint32_t n) const {
        SemanticId out;
        for (std::int64_t c = n; c > 0; c = nodes_[static_cast<std::size_t>(c)].parent) {
            out.push_back(nodes_[static_cast<std::size_t>(c)].token);
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

   private:
    std::vector<Node> nodes_;
    std::vector<std::uint32_t> leaf_of_;
    std::vector<std::uint32_t> rank_;
};

inline IdTrie build_trie(const IdAssignment& a) {
    IdTrie t;
    for (std::size_t i = 0; i < a.ids.size(); ++i) {
        t.insert(a.ids[i], i);
    }
    t.finalize();
    return t;
}

/// Trie over one namespace segment (Separate decodes each task's segment on
/// its own).
inline IdTrie build_segment_trie(const IdAssignment& a, Namespace ns) {
    IdTrie t;
    for (std::size_t i = 0; i < a.ids.size(); ++i) {
        t.insert(a.segment(i, ns), i);
    }
    t.finalize();
    return t;
}

/// The tries used at decode time: search and rec contexts share one trie
/// except under Separate.
struct TrieSet {
    std::shared_ptr<const IdTrie> search;
    std::shared_ptr<const IdTrie> rec;
};

inline TrieSet build_tries(const IdAssignment& a) {
    if (a.layout == Layout::separate) {
        return {std::make_shared<IdTrie>(build_segment_trie(a, Namespace::SEARCH)),
                std::make_shared<IdTrie>(build_segment_trie(a, Namespace::REC))};
    }
    auto t = std::make_shared<IdTrie>(build_trie(a));
    return {t, t};
}

// ---------------------------------------------------------------------------
// Persistence

inline void save_assignment(const std::filesystem::path& path, const Catalog& catalog,
                            const IdAssignment& a) {
    SEMID_THROW_IF_NOT(a.ids.size() == catalog.size(), Errc::shape_mismatch, kIdStage,
                       "assignment does not cover the catalog");
    std::string out = "item_id\tstrategy\ttokens\tsuffix\n";
    for (std::size_t i = 0; i < a.ids.size(); ++i) {
        std::string toks;
        std::string suf;
        for (const auto& t : a.ids[i]) {
            if (t.is_suffix()) {
                suf += (suf.empty() ? "" : " ") + std::to_string(t.codeword);
            } else {
                toks += (toks.empty() ? "" : " ") + t.str();
            }
        }
        out += catalog[i].item_id + "\t" + a.strategy + "\t" + toks + "\t" + suf + "\n";
    }
    write_text_file(path, out);
}

inline void save_vocab(const std::filesystem::path& path, const IdAssignment& a) {
    std::string out = "token\ttoken_id\n";
    std::size_t id = 0;
    for (const auto& t : a.vocab.tokens()) {
        out += t.str() + "\t" + std::to_string(id++) + "\n";
    }
    write_text_file(path, out);
}

inline IdAssignment load_assignment(const std::filesystem::path& assignment_path,
                                    const std::filesystem::path& vocab_path, const Catalog& catalog) {
    IdAssignment a;
    const Tsv vt = read_tsv(vocab_path);
    const auto c_token = vt.column("token");
    const auto c_tid = vt.column("token_id");
    for (const auto& r : vt.rows) {
        const Token tok = Token::parse(r[c_token]);
        a.vocab.add(tok);
        SEMID_THROW_IF_NOT(a.vocab.id_of(tok) == static_cast<std::size_t>(parse_int(r[c_tid], "token_id")),
                           Errc::malformed, kIdStage, "vocab token ids are not in sorted order");
    }

    const Tsv t = read_tsv(assignment_path);
    const auto c_id = t.column("item_id");
    const auto c_strat = t.column("strategy");
    const auto c_tok = t.column("tokens");
    const auto c_suf = t.column("suffix");
    a.ids.assign(catalog.size(), {});
    std::vector<char> seen(catalog.size(), 0);
    for (const auto& r : t.rows) {
        const std::size_t i = catalog.at(r[c_id]);
        SEMID_THROW_IF_NOT(!seen[i], Errc::duplicate_item, kIdStage, "duplicate item " + r[c_id]);
        seen[i] = 1;
        a.strategy = r[c_strat];
        a.layout = layout_for_strategy(a.strategy);
        std::vector<Token> toks;
        for (const auto& s : split(r[c_tok], ' ')) {
            toks.push_back(Token::parse(s));
        }
        std::vector<std::uint32_t> sufs;
        for (const auto& s : split(r[c_suf], ' ')) {
            sufs.push_back(static_cast<std::uint32_t>(parse_int(s, "suffix")));
        }
        SemanticId id;
        std::size_t next_suffix = 0;
        for (std::size_t k = 0; k < toks.size(); ++k) {
            id.push_back(toks[k]);
            const bool segment_end = a.layout == Layout::separate && k + 1 < toks.size() &&
                    toks[k + 1].ns != toks[k].ns;
            if (segment_end) {
                SEMID_THROW_IF_NOT(next_suffix < sufs.size(), Errc::malformed, kIdStage,
                                   "missing segment suffix for " + r[c_id]);
                id.push_back(suffix_token(sufs[next_suffix++]));
            }
        }
        SEMID_THROW_IF_NOT(next_suffix + 1 == sufs.size(), Errc::malformed, kIdStage,
                           "suffix count mismatch for " + r[c_id]);
        id.push_back(suffix_token(sufs[next_suffix]));
        for (const auto& tok : id) {
            SEMID_THROW_IF_NOT(a.vocab.contains(tok), Errc::unknown_id, kIdStage,
                               "token " + tok.str() + " of " + r[c_id] + " not in vocabulary");
        }
        a.ids[i] = std::move(id);
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        SEMID_THROW_IF_NOT(seen[i], Errc::missing_item, kIdStage,
                           "assignment misses item " + catalog[i].item_id);
    }
    return a;
}

} // namespace semid
