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

// Generative retrieval over a trie of Semantic IDs.
//
// A decoder walks the trie one token at a time. At each node a pluggable
// scorer assigns a score to every child token (higher is better); a path's
// score is the sum of its token scores. The built-in ResidualScorer plays the
// role of a language model's next-token distribution: a child codeword scores
// -||residual - codeword||^2, where residual is the context vector minus the
// codewords already on the path.
//
// diverse_beam_search() splits the beam into groups. Groups expand in order
// at every step and a group's candidate token is penalized by
// diversity_penalty * (times that token was picked by earlier groups at
// this step). Penalties steer selection only; reported scores are the
// unpenalized path scores.

#include <memory>
#include <optional>
#include <unordered_map>

#include "semid/fusion.hpp"
#include "semid/id_space.hpp"

namespace semid {

inline constexpr const char* kRetrievalStage = "retrieval";

struct DecodingConfig {
    std::size_t beam_width = 60;
    std::size_t groups = 30;
    double diversity_penalty = 0.25;
    std::size_t top_k = 30;
    double popularity_blend = 0.0;

    void validate() const {
        SEMID_THROW_IF_NOT(groups >= 1 && beam_width >= groups && beam_width % groups == 0,
                           Errc::invalid_config, kRetrievalStage,
                           "beam_width must be a positive multiple of groups");
        SEMID_THROW_IF_NOT(top_k >= 1 && top_k <= beam_width, Errc::invalid_config,
                           kRetrievalStage, "top_k must lie in [1, beam_width]");
        SEMID_THROW_IF_NOT(diversity_penalty >= 0.0 && popularity_blend >= 0.0,
                           Errc::invalid_config, kRetrievalStage,
                           "diversity_penalty and popularity_blend must be >= 0");
    }

    json describe() const {
        return {{"beam_width", beam_width},
                {"groups", groups},
                {"diversity_penalty", diversity_penalty},
                {"top_k", top_k},
                {"popularity_blend", popularity_blend}};
    }
};

struct Hit {
    std::size_t item = 0;
    double score = 0.0;
    bool operator==(const Hit&) const = default;
};

/// Scores every child of a trie node. out[k] belongs to node.children[k].
class NextTokenScorer {
   public:
    virtual ~NextTokenScorer() = default;
    virtual void score_children(const IdTrie& trie, std::uint32_t node,
                                std::span<double> out) const = 0;
};

/// Which codebook level scores the tokens at a given trie depth, and which
/// context vector ("chain") the residual is taken from.
struct LevelBinding {
    std::shared_ptr<const RQCodebooks> codebooks; // null for suffix positions
    std::size_t level = 0;
    std::size_t chain = 0;

    bool is_suffix() const noexcept {
        return codebooks == nullptr;
    }
};

/// Binding per token position (position p scores children of depth-p nodes).
using ScoringPlan = std::vector<LevelBinding>;

enum class ContextKind { search_query, rec_user };

/// A decoding context: one optional vector per chain (absent when the context
/// has no representation in that chain's space) plus items to exclude.
struct Context {
    ContextKind kind = ContextKind::search_query;
    std::string id;
    std::vector<std::optional<std::vector<float>>> chains;
    std::vector<std::size_t> excluded; // sorted item indices
};

namespace detail {

inline void subtract_codeword(std::vector<double>& residual, const RQCodebooks& cb,
                              std::size_t l, std::uint32_t code) {
    if (cb.kind == QuantizerKind::rq_kmeans) {
        const auto c = cb.levels[l].row(code);
        for (std::size_t j = 0; j < residual.size(); ++j) {
            residual[j] -= c[j];
        }
        return;
    }
    const auto c = cb.codeword(l, code);
    for (std::size_t j = 0; j < residual.size(); ++j) {
        residual[j] -= c[j];
    }
}

inline double residual_sq_dist(const std::vector<double>& residual, const RQCodebooks& cb,
                               std::size_t l, std::uint32_t code) {
    double s = 0.0;
    if (cb.kind == QuantizerKind::rq_kmeans) {
        const auto c = cb.levels[l].row(code);
        for (std::size_t j = 0; j < residual.size(); ++j) {
            const double t = residual[j] - c[j];
            s += t * t;
        }
        return s;
    }
    const float sc = cb.scales[l];
    const std::size_t w = cb.lfq_width();
    for (std::size_t j = 0; j < residual.size(); ++j) {
        const double cj = j < w ? (((code >> j) & 1U) ? sc : -sc) : 0.0;
        const double t = residual[j] - cj;
        s += t * t;
    }
    return s;
}

} // namespace detail

/// The built-in scorer. Children at a code position score
/// -||residual - codeword||^2 (0 when the context lacks that chain). Suffix
/// children score 0, or -popularity_blend * (rank among siblings by train
/// popularity, most popular first) when popularity_blend > 0.
class ResidualScorer final : public NextTokenScorer {
   public:
    ResidualScorer(const Context& ctx, const ScoringPlan& plan,
                   const std::vector<std::uint64_t>* popularity = nullptr,
                   double popularity_blend = 0.0)
            : ctx_(ctx), plan_(plan), popularity_(popularity), blend_(popularity_blend) {}

    void score_children(const IdTrie& trie, std::uint32_t node, std::span<double> out) const override {
        const auto& n = trie.node(node);
        SEMID_THROW_IF_NOT(n.depth < plan_.size(), Errc::dimension_mismatch, kRetrievalStage,
                           "trie is deeper than the scoring plan");
        const LevelBinding& b = plan_[n.depth];
        if (b.is_suffix()) {
            score_suffix(trie, n, out);
            return;
        }
        SEMID_THROW_IF_NOT(b.chain < ctx_.chains.size(), Errc::dimension_mismatch, kRetrievalStage,
                           "context lacks chain " + std::to_string(b.chain));
        const auto& v = ctx_.chains[b.chain];
        if (!v.has_value()) {
            std::fill(out.begin(), out.end(), 0.0);
            return;
        }
        SEMID_THROW_IF_NOT(v->size() == b.codebooks->d, Errc::dimension_mismatch, kRetrievalStage,
                           "context dim " + std::to_string(v->size()) + " vs codebook dim " +
                                   std::to_string(b.codebooks->d));
        std::vector<double> residual(v->begin(), v->end());
        for (std::int64_t c = node; c > 0; c = trie.node(static_cast<std::uint32_t>(c)).parent) {
            const auto& cn = trie.node(static_cast<std::uint32_t>(c));
            const LevelBinding& cb = plan_[cn.depth - 1];
            if (!cb.is_suffix() && cb.chain == b.chain) {
                detail::subtract_codeword(residual, *cb.codebooks, cb.level, cn.token.codeword);
            }
        }
        for (std::size_t k = 0; k < n.children.size(); ++k) {
            const auto& tok = trie.node(n.children[k]).token;
            SEMID_THROW_IF_NOT(tok.level == b.level && tok.codeword < b.codebooks->level_size(b.level),
                               Errc::dimension_mismatch, kRetrievalStage,
                               "token " + tok.str() + " does not fit its codebook level");
            out[k] = -detail::residual_sq_dist(residual, *b.codebooks, b.level, tok.codeword);
        }
    }

   private:
    void score_suffix(const IdTrie& trie, const IdTrie::Node& n, std::span<double> out) const {
        if (blend_ <= 0.0 || popularity_ == nullptr) {
            std::fill(out.begin(), out.end(), 0.0);
            return;
        }
        std::vector<std::size_t> order(n.children.size());
        for (std::size_t k = 0; k < order.size(); ++k) {
            order[k] = k;
        }
        auto item_of = [&](std::size_t k) {
            return static_cast<std::size_t>(trie.node(n.children[k]).item);
        };
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const auto pa = (*popularity_)[item_of(a)];
            const auto pb = (*popularity_)[item_of(b)];
            return pa != pb ? pa > pb : item_of(a) < item_of(b);
        });
        for (std::size_t r = 0; r < order.size(); ++r) {
            out[order[r]] = -blend_ * static_cast<double>(r);
        }
    }

    const Context& ctx_;
    const ScoringPlan& plan_;
    const std::vector<std::uint64_t>* popularity_;
    double blend_;
};

/// Children of `node` with residual scores, as (token, score) pairs.
inline std::vector<std::pair<Token, double>> residual_score_children(const Context& ctx,
                                                                     std::uint32_t node,
                                                                     const ScoringPlan& plan,
                                                                     const IdTrie& trie) {
    const auto& n = trie.node(node);
    SEMID_THROW_IF_NOT(!n.children.empty(), Errc::out_of_range, kRetrievalStage,
                       "node is a leaf");
    std::vector<double> s(n.children.size());
    ResidualScorer(ctx, plan).score_children(trie, node, s);
    std::vector<std::pair<Token, double>> out;
    for (std::size_t k = 0; k < s.size(); ++k) {
        out.emplace_back(trie.node(n.children[k]).token, s[k]);
    }
    return out;
}

namespace detail {

/// Per-node count of excluded leaves; a node is open while it still has an
/// allowed leaf below it.
class Exclusion {
   public:
    Exclusion(const IdTrie& trie, const std::vector<std::size_t>& items) : trie_(trie) {
        for (const auto i : items) {
            close_leaf(trie.leaf_of(i));
        }
    }
    bool open(std::uint32_t n) const {
        if (banned_.empty()) {
            return true;
        }
        auto it = banned_.find(n);
        return it == banned_.end() || it->second < trie_.node(n).leaf_count;
    }
    /// Bans one more leaf (by trie node).
    void close_leaf(std::uint32_t leaf) {
        for (std::int64_t n = leaf; n >= 0; n = trie_.node(static_cast<std::uint32_t>(n)).parent) {
            ++banned_[static_cast<std::uint32_t>(n)];
        }
    }
    std::size_t open_leaves() const {
        auto it = banned_.find(0);
        return trie_.leaf_count() - (it == banned_.end() ? 0 : it->second);
    }

   private:
    const IdTrie& trie_;
    std::unordered_map<std::uint32_t, std::uint32_t> banned_;
};

struct Beam {
    std::uint32_t node = 0;
    double score = 0.0;
};

struct Candidate {
    std::uint32_t node = 0;
    double score = 0.0; // unpenalized path score
    double key = 0.0; // selection key
};

inline void check_trie(const IdTrie& trie) {
    SEMID_THROW_IF_NOT(trie.leaf_count() > 0, Errc::empty_input, kRetrievalStage, "empty trie");
    SEMID_THROW_IF_NOT(trie.finalized(), Errc::internal, kRetrievalStage,
                       "trie must be finalized before decoding");
}

/// Higher key first, then lexicographic token path.
inline bool candidate_before(const IdTrie& trie, const Candidate& a, const Candidate& b) {
    if (a.key != b.key) {
        return a.key > b.key;
    }
    return trie.lex_rank(a.node) < trie.lex_rank(b.node);
}

inline std::uint64_t token_key(const Token& t) {
    return (static_cast<std::uint64_t>(t.ns) << 56) | (static_cast<std::uint64_t>(t.level) << 32) | t.codeword;
}

/// Keeps the best `width` candidates in order.
inline void select_top(const IdTrie& trie, std::vector<Candidate>& cand, std::size_t width) {
    auto cmp = [&](const Candidate& a, const Candidate& b) { return candidate_before(trie, a, b); };
    if (cand.size() > width) {
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(width), cand.end(), cmp);
        cand.resize(width);
    } else {
        std::sort(cand.begin(), cand.end(), cmp);
    }
}

inline std::vector<Hit> rank_pool(std::vector<Hit> pool, std::size_t k) {
    std::sort(pool.begin(), pool.end(), [](const Hit& a, const Hit& b) {
        return a.score != b.score ? a.score > b.score : a.item < b.item;
    });
    std::vector<Hit> out;
    for (const auto& h : pool) {
        if (out.size() == k) {
            break;
        }
        if (std::none_of(out.begin(), out.end(), [&](const Hit& o) { return o.item == h.item; })) {
            out.push_back(h);
        }
    }
    return out;
}

class ChildScoreCache {
   public:
    ChildScoreCache(const IdTrie& trie, const NextTokenScorer& scorer) : trie_(trie), scorer_(scorer) {}
    const std::vector<double>& get(std::uint32_t node) {
        auto it = cache_.find(node);
        if (it != cache_.end()) {
            return it->second;
        }
        std::vector<double> s(trie_.node(node).children.size());
        scorer_.score_children(trie_, node, s);
        return cache_.emplace(node, std::move(s)).first->second;
    }

   private:
    const IdTrie& trie_;
    const NextTokenScorer& scorer_;
    std::unordered_map<std::uint32_t, std::vector<double>> cache_;
};

} // namespace detail

/// Plain beam search of the given width; the reference the diverse variant
/// degenerates to when groups == 1 or diversity_penalty == 0.
inline std::vector<Hit> beam_search(const IdTrie& trie, std::size_t width, std::size_t top_k,
                                    const NextTokenScorer& scorer,
                                    const std::vector<std::size_t>& excluded = {}) {
    detail::check_trie(trie);
    const detail::Exclusion excl(trie, excluded);
    detail::ChildScoreCache cache(trie, scorer);
    std::vector<detail::Beam> beams{{0, 0.0}};
    std::vector<Hit> pool;
    if (!excl.open(0)) {
        return {};
    }
    while (!beams.empty()) {
        std::vector<detail::Candidate> cand;
        for (const auto& b : beams) {
            const auto& ch = trie.node(b.node).children;
            const auto& s = cache.get(b.node);
            for (std::size_t k = 0; k < ch.size(); ++k) {
                if (excl.open(ch[k])) {
                    cand.push_back({ch[k], b.score + s[k], b.score + s[k]});
                }
            }
        }
        detail::select_top(trie, cand, width);
        beams.clear();
        for (const auto& c : cand) {
            const auto& n = trie.node(c.node);
            if (n.item != IdTrie::kNoItem) {
                pool.push_back({static_cast<std::size_t>(n.item), c.score});
            } else {
                beams.push_back({c.node, c.score});
            }
        }
    }
    return detail::rank_pool(std::move(pool), top_k);
}

/// Trie nodes each group kept at each step: steps[step][group].
struct DecodeTrace {
    std::vector<std::vector<std::vector<std::uint32_t>>> steps;
};

/// Diverse beam search over the trie.
///
/// Groups advance in lockstep; group g ranks its candidates by path score minus
/// diversity_penalty times the number of times earlier groups picked the same
/// token at this step. An item is emitted at most once: its leaf closes for
/// every later group and step. If fewer than top_k distinct items come out
/// while more are reachable, the rest is filled by plain beam search of width
/// beam_width over the unemitted items. With one group or no penalty the
/// groups are interchangeable and the result is plain beam search of width
/// beam_width.
inline std::vector<Hit> diverse_beam_search(const IdTrie& trie, const DecodingConfig& cfg,
                                            const NextTokenScorer& scorer,
                                            const std::vector<std::size_t>& excluded = {},
                                            DecodeTrace* trace = nullptr) {
    cfg.validate();
    detail::check_trie(trie);
    if (cfg.groups == 1 || cfg.diversity_penalty == 0.0) {
        return beam_search(trie, cfg.beam_width, cfg.top_k, scorer, excluded);
    }
    detail::Exclusion excl(trie, excluded);
    if (!excl.open(0)) {
        return {};
    }
    detail::ChildScoreCache cache(trie, scorer);
    const std::size_t width = cfg.beam_width / cfg.groups;
    std::vector<std::vector<detail::Beam>> groups(cfg.groups, {{0, 0.0}});
    std::vector<Hit> pool;
    std::vector<detail::Candidate> cand;
    bool active = true;
    while (active) {
        active = false;
        std::vector<std::pair<std::uint64_t, std::size_t>> picked; // sorted; this step, earlier groups
        if (trace != nullptr) {
            trace->steps.emplace_back(groups.size());
        }
        for (std::size_t g = 0; g < groups.size(); ++g) {
            auto& beams = groups[g];
            if (beams.empty()) {
                continue;
            }
            cand.clear();
            for (const auto& b : beams) {
                const auto& ch = trie.node(b.node).children;
                const auto& s = cache.get(b.node);
                for (std::size_t k = 0; k < ch.size(); ++k) {
                    if (!excl.open(ch[k])) {
                        continue;
                    }
                    const double score = b.score + s[k];
                    double key = score;
                    if (cfg.diversity_penalty > 0.0 && !picked.empty()) {
                        const auto tk = detail::token_key(trie.node(ch[k]).token);
                        const auto it = std::lower_bound(picked.begin(), picked.end(),
                                                         std::make_pair(tk, std::size_t{0}));
                        if (it != picked.end() && it->first == tk) {
                            key -= cfg.diversity_penalty * static_cast<double>(it->second);
                        }
                    }
                    cand.push_back({ch[k], score, key});
                }
            }
            detail::select_top(trie, cand, width);
            beams.clear();
            for (const auto& c : cand) {
                const auto& n = trie.node(c.node);
                if (trace != nullptr) {
                    trace->steps.back()[g].push_back(c.node);
                }
                const auto tk = detail::token_key(n.token);
                auto it = std::lower_bound(picked.begin(), picked.end(), std::make_pair(tk, std::size_t{0}));
                if (it == picked.end() || it->first != tk) {
                    picked.insert(it, {tk, 1});
                } else {
                    ++it->second;
                }
                if (n.item != IdTrie::kNoItem) {
                    pool.push_back({static_cast<std::size_t>(n.item), c.score});
                    excl.close_leaf(c.node);
                } else {
                    beams.push_back({c.node, c.score});
                }
            }
            active = active || !beams.empty();
        }
    }
    if (pool.size() < cfg.top_k && excl.open_leaves() > 0) {
        std::vector<std::size_t> done(excluded.begin(), excluded.end());
        for (const auto& h : pool) {
            done.push_back(h.item);
        }
        std::sort(done.begin(), done.end());
        const auto more = beam_search(trie, cfg.beam_width, cfg.top_k - pool.size(), scorer, done);
        pool.insert(pool.end(), more.begin(), more.end());
    }
    return detail::rank_pool(std::move(pool), cfg.top_k);
}

// ---------------------------------------------------------------------------
// Strategy-level index: what decoding needs for one Semantic ID strategy.

/// How a search query reaches a chain's space.
struct QueryRoute {
    enum class Kind { none, passthrough, fusion };
    Kind kind = Kind::none;
    std::string query_space; // QuerySet embedding space to read
    FusionSpec spec; // for Kind::fusion (queries enter as the search source)
};

struct Chain {
    std::string name;
    EmbeddingMatrix items; // item vectors in this chain's space
    QueryRoute route;
};

struct RetrievalIndex {
    IdAssignment assignment;
    TrieSet tries;
    ScoringPlan search_plan;
    ScoringPlan rec_plan;
    std::vector<Chain> chains;
    std::vector<std::uint64_t> popularity;
};

inline Context make_search_context(const RetrievalIndex& index, const QuerySet& queries,
                                   std::size_t q) {
    SEMID_THROW_IF_NOT(q < queries.size(), Errc::unknown_id, kRetrievalStage,
                       "unknown query index " + std::to_string(q));
    Context ctx;
    ctx.kind = ContextKind::search_query;
    ctx.id = queries.records[q].query_id;
    for (const auto& ch : index.chains) {
        if (ch.route.kind == QueryRoute::Kind::none) {
            ctx.chains.emplace_back(std::nullopt);
            continue;
        }
        auto it = queries.embeddings.find(ch.route.query_space);
        SEMID_THROW_IF_NOT(it != queries.embeddings.end(), Errc::unknown_id, kRetrievalStage,
                           "missing projection: no query embeddings for space '" +
                                   ch.route.query_space + "'");
        const auto v = it->second.row(q);
        if (ch.route.kind == QueryRoute::Kind::passthrough) {
            SEMID_THROW_IF_NOT(v.size() == ch.items.dim(), Errc::dimension_mismatch, kRetrievalStage,
                               "query dim does not match chain '" + ch.name + "'");
            ctx.chains.emplace_back(std::vector<float>(v.begin(), v.end()));
        } else {
            ctx.chains.emplace_back(project_context(v, ch.route.spec, SourceSpace::search));
        }
    }
    return ctx;
}

struct RecContextOptions {
    bool exclude_history = true;
    /// Replace the chain named "rec" with this user vector (e.g. an ENMF user
    /// factor) instead of the mean of history items.
    const Matrix* user_factors = nullptr;
};

inline Context make_rec_context(const RetrievalIndex& index, const InteractionLog& log,
                                std::size_t u, const RecContextOptions& opt = {}) {
    SEMID_THROW_IF_NOT(u < log.n_users(), Errc::unknown_id, kRetrievalStage,
                       "unknown user index " + std::to_string(u));
    const auto& hist = log.train_items(u);
    SEMID_THROW_IF_NOT(!hist.empty(), Errc::cold_user, kRetrievalStage,
                       "cold user '" + log.user_ids()[u] + "' has no train interactions");
    Context ctx;
    ctx.kind = ContextKind::rec_user;
    ctx.id = log.user_ids()[u];
    for (const auto& ch : index.chains) {
        if (opt.user_factors != nullptr && ch.name == "rec") {
            const auto r = opt.user_factors->row(u);
            ctx.chains.emplace_back(std::vector<float>(r.begin(), r.end()));
            continue;
        }
        std::vector<double> acc(ch.items.dim(), 0.0);
        for (const auto i : hist) {
            const auto r = ch.items.row(i);
            for (std::size_t j = 0; j < acc.size(); ++j) {
                acc[j] += r[j];
            }
        }
        std::vector<float> mean(acc.size());
        for (std::size_t j = 0; j < acc.size(); ++j) {
            mean[j] = static_cast<float>(acc[j] / static_cast<double>(hist.size()));
        }
        ctx.chains.emplace_back(std::move(mean));
    }
    if (opt.exclude_history) {
        ctx.excluded.assign(hist.begin(), hist.end());
        std::sort(ctx.excluded.begin(), ctx.excluded.end());
        ctx.excluded.erase(std::unique(ctx.excluded.begin(), ctx.excluded.end()), ctx.excluded.end());
    }
    return ctx;
}

inline std::vector<Hit> decode(const RetrievalIndex& index, const Context& ctx,
                               const DecodingConfig& cfg) {
    const bool search = ctx.kind == ContextKind::search_query;
    const IdTrie& trie = search ? *index.tries.search : *index.tries.rec;
    const ScoringPlan& plan = search ? index.search_plan : index.rec_plan;
    const ResidualScorer scorer(ctx, plan, &index.popularity, cfg.popularity_blend);
    return diverse_beam_search(trie, cfg, scorer, ctx.excluded);
}

inline std::vector<Hit> retrieve_search(const RetrievalIndex& index, const QuerySet& queries,
                                        std::size_t q, const DecodingConfig& cfg) {
    return decode(index, make_search_context(index, queries, q), cfg);
}

inline std::vector<Hit> retrieve_rec(const RetrievalIndex& index, const InteractionLog& log,
                                     std::size_t u, const DecodingConfig& cfg,
                                     const RecContextOptions& opt = {}) {
    return decode(index, make_rec_context(index, log, u, opt), cfg);
}

} // namespace semid
