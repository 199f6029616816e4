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

// Semantic ID strategies as recipes over named embedding spaces.
//
//   content, search, rec, multitask   RQ codes of one ingested space
//   fused_concat, fused_svd           RQ codes of a fused search+rec space
//   separate                          SEARCH-tagged search codes + REC-tagged rec codes
//   prefix_share                      k-means analog: shared code on svd_add,
//                                     then one search code and one rec code
//
// Every input space is l2-normalized before use. A built strategy is a
// RetrievalIndex; save_index/load_index persist it as a directory.

#include <map>
#include <memory>

#include "semid/enmf.hpp"
#include "semid/fusion.hpp"
#include "semid/id_space.hpp"
#include "semid/quantizer.hpp"
#include "semid/retrieval.hpp"

namespace semid {

inline constexpr const char* kPipelineStage = "pipeline";

inline const std::vector<std::string>& known_strategies() {
    static const std::vector<std::string> s{"content",      "search",       "rec",
                                            "separate",     "prefix_share", "fused_concat",
                                            "fused_svd",    "multitask"};
    return s;
}

/// Item spaces each strategy reads.
inline std::vector<std::string> required_spaces(const std::string& strategy) {
    if (strategy == "content" || strategy == "search" || strategy == "rec" || strategy == "multitask") {
        return {strategy};
    }
    if (strategy == "separate" || strategy == "prefix_share" || strategy == "fused_concat" ||
        strategy == "fused_svd") {
        return {"search", "rec"};
    }
    throw Error(Errc::invalid_config, kPipelineStage, "unknown strategy '" + strategy + "'");
}

/// Query embedding space used to reach an item space directly, if any.
/// Content-based IDs reuse the search query encoder unless "content" queries exist.
inline std::optional<std::string> query_space_for(const std::string& item_space, const QuerySet& q) {
    if (q.embeddings.count(item_space) != 0U) {
        return item_space;
    }
    if (item_space == "content" && q.embeddings.count("search") != 0U) {
        return std::string("search");
    }
    return std::nullopt;
}

struct QuantizerParams {
    QuantizerKind kind = QuantizerKind::rq_kmeans;
    std::size_t levels = 2;
    std::size_t k = 256;
    std::size_t max_iters = 100;

    json describe() const {
        return {{"kind", quantizer_kind_name(kind)}, {"levels", levels}, {"k", k}, {"max_iters", max_iters}};
    }
};

/// Everything a strategy can be built from.
struct ExperimentData {
    Catalog catalog;
    std::map<std::string, EmbeddingMatrix> spaces; // item spaces by name
    std::shared_ptr<const InteractionLog> log;
    QuerySet queries;

    const EmbeddingMatrix& space(const std::string& name) const {
        auto it = spaces.find(name);
        SEMID_THROW_IF_NOT(it != spaces.end(), Errc::missing_item, kPipelineStage,
                           "item embedding space '" + name + "' was not provided");
        return it->second;
    }
};

struct BuiltStrategy {
    RetrievalIndex index;
    std::vector<std::pair<std::string, std::shared_ptr<const RQCodebooks>>> codebooks; // named
    std::uint64_t seed = 0;
    QuantizerParams quantizer;
};

namespace detail {

inline EmbeddingMatrix unit(const EmbeddingMatrix& m) {
    return m.normalized ? m : l2_normalize(m);
}

struct SpaceCodes {
    std::shared_ptr<const RQCodebooks> cb;
    std::vector<CodeSequence> codes;
};

inline SpaceCodes quantize(const EmbeddingMatrix& m, const QuantizerParams& q, std::uint64_t seed,
                           std::size_t workers) {
    RqFit fit = q.kind == QuantizerKind::rq_kmeans
            ? rq_fit_detailed(m, q.levels, q.k, q.max_iters, seed, workers)
            : rlfq_fit_detailed(m, q.levels);
    fit.codebooks.seed = seed;
    return {std::make_shared<RQCodebooks>(std::move(fit.codebooks)), std::move(fit.codes)};
}

inline void append_levels(ScoringPlan& plan, const std::shared_ptr<const RQCodebooks>& cb,
                          std::size_t chain) {
    for (std::size_t l = 0; l < cb->n_levels(); ++l) {
        plan.push_back({cb, l, chain});
    }
}

inline QueryRoute direct_route(const std::string& item_space, const QuerySet& q) {
    QueryRoute r;
    if (auto qs = query_space_for(item_space, q)) {
        r.kind = QueryRoute::Kind::passthrough;
        r.query_space = *qs;
    }
    return r;
}

inline QueryRoute fusion_route(FusionSpec spec, const QuerySet& q) {
    QueryRoute r;
    if (auto qs = query_space_for("search", q)) {
        r.kind = QueryRoute::Kind::fusion;
        r.query_space = *qs;
        r.spec = std::move(spec);
    }
    return r;
}

} // namespace detail

inline BuiltStrategy build_strategy(const std::string& strategy, const ExperimentData& data,
                                    const QuantizerParams& q, std::uint64_t seed,
                                    std::size_t workers = 1) {
    const std::size_t n = data.catalog.size();
    BuiltStrategy out;
    out.seed = seed;
    out.quantizer = q;
    RetrievalIndex& ix = out.index;
    ix.popularity = data.catalog.popularity();
    const auto spaces = required_spaces(strategy);
    for (const auto& s : spaces) {
        SEMID_THROW_IF_NOT(data.space(s).rows() == n, Errc::shape_mismatch, kPipelineStage,
                           "space '" + s + "' does not cover the catalog");
    }

    if (spaces.size() == 1) {
        const auto m = detail::unit(data.space(strategy));
        auto sc = detail::quantize(m, q, seed, workers);
        ix.assignment = build_task_specific(*sc.cb, sc.codes, n, strategy);
        ix.assignment.provenance = {strategy};
        ix.chains.push_back({strategy, m, detail::direct_route(strategy, data.queries)});
        detail::append_levels(ix.search_plan, sc.cb, 0);
        out.codebooks.emplace_back(strategy, sc.cb);
    } else {
        const auto s = detail::unit(data.space("search"));
        const auto r = detail::unit(data.space("rec"));
        if (strategy == "fused_concat" || strategy == "fused_svd") {
            EmbeddingMatrix fused;
            FusionSpec spec;
            if (strategy == "fused_concat") {
                fused = fuse_concat(s, r);
                spec = concat_spec(s.dim(), r.dim());
            } else {
                std::tie(fused, spec) = fuse_svd_add(s, r);
            }
            auto sc = detail::quantize(fused, q, seed, workers);
            ix.assignment = build_task_specific(*sc.cb, sc.codes, n, strategy);
            ix.assignment.provenance = {"search", "rec", fusion_kind_name(spec.kind)};
            ix.chains.push_back({strategy, fused, detail::fusion_route(spec, data.queries)});
            detail::append_levels(ix.search_plan, sc.cb, 0);
            out.codebooks.emplace_back(strategy, sc.cb);
        } else if (strategy == "separate") {
            auto ss = detail::quantize(s, q, seed, workers);
            auto rr = detail::quantize(r, q, seed, workers);
            ix.assignment = build_separate(*ss.cb, ss.codes, *rr.cb, rr.codes, n);
            ix.assignment.provenance = {"search", "rec"};
            ix.chains.push_back({"search", s, detail::direct_route("search", data.queries)});
            ix.chains.push_back({"rec", r, detail::direct_route("rec", data.queries)});
            detail::append_levels(ix.search_plan, ss.cb, 0);
            detail::append_levels(ix.rec_plan, rr.cb, 1);
            out.codebooks.emplace_back("search", ss.cb);
            out.codebooks.emplace_back("rec", rr.cb);
        } else {
            auto [fused, spec] = fuse_svd_add(s, r);
            auto [a, cbs] = build_prefix_share(fused, s, r, q.k, q.max_iters, seed, workers);
            ix.assignment = std::move(a);
            ix.assignment.provenance = {"search", "rec", "svd_add", "kmeans_analog"};
            auto shared = std::make_shared<const RQCodebooks>(std::move(cbs.shared));
            auto search = std::make_shared<const RQCodebooks>(std::move(cbs.search));
            auto rec = std::make_shared<const RQCodebooks>(std::move(cbs.rec));
            ix.chains.push_back({"shared", fused, detail::fusion_route(spec, data.queries)});
            ix.chains.push_back({"search", s, detail::direct_route("search", data.queries)});
            ix.chains.push_back({"rec", r, detail::direct_route("rec", data.queries)});
            ix.search_plan = {{shared, 0, 0}, {search, 0, 1}, {rec, 0, 2}};
            out.codebooks = {{"shared", shared}, {"search", search}, {"rec", rec}};
        }
    }
    ix.search_plan.push_back({}); // suffix position
    if (ix.rec_plan.empty()) {
        ix.rec_plan = ix.search_plan;
    } else {
        ix.rec_plan.push_back({});
    }
    ix.tries = build_tries(ix.assignment);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence: a directory with assignment.tsv, vocab.tsv, index.json and
// binary codebooks, projectors and chain item matrices.

namespace detail {

inline const char* route_kind_name(QueryRoute::Kind k) {
    switch (k) {
        case QueryRoute::Kind::none: return "none";
        case QueryRoute::Kind::passthrough: return "passthrough";
        case QueryRoute::Kind::fusion: return "fusion";
    }
    return "?";
}

inline json plan_json(const ScoringPlan& plan, const BuiltStrategy& b) {
    json out = json::array();
    for (const auto& lb : plan) {
        if (lb.is_suffix()) {
            out.push_back({{"suffix", true}});
            continue;
        }
        std::string name;
        for (const auto& [nm, cb] : b.codebooks) {
            if (cb == lb.codebooks) {
                name = nm;
            }
        }
        SEMID_THROW_IF_NOT(!name.empty(), Errc::internal, kPipelineStage, "unnamed codebook in plan");
        out.push_back({{"codebook", name}, {"level", lb.level}, {"chain", lb.chain}});
    }
    return out;
}

inline ScoringPlan parse_plan(const json& j,
                              const std::map<std::string, std::shared_ptr<const RQCodebooks>>& cbs) {
    ScoringPlan plan;
    for (const auto& e : j) {
        if (e.value("suffix", false)) {
            plan.push_back({});
            continue;
        }
        auto it = cbs.find(e.at("codebook").get<std::string>());
        SEMID_THROW_IF_NOT(it != cbs.end(), Errc::malformed, kPipelineStage, "plan names an unknown codebook");
        plan.push_back({it->second, e.at("level").get<std::size_t>(), e.at("chain").get<std::size_t>()});
    }
    return plan;
}

} // namespace detail

inline std::vector<std::filesystem::path> save_index(const std::filesystem::path& dir,
                                                     const Catalog& catalog, const BuiltStrategy& b) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    const auto& ix = b.index;
    save_assignment(dir / "assignment.tsv", catalog, ix.assignment);
    save_vocab(dir / "vocab.tsv", ix.assignment);
    written.push_back(dir / "assignment.tsv");
    written.push_back(dir / "vocab.tsv");
    json cbs = json::array();
    for (const auto& [name, cb] : b.codebooks) {
        const auto file = "codebooks_" + name + ".bin";
        save_codebooks(dir / file, *cb);
        written.push_back(dir / file);
        cbs.push_back({{"name", name}, {"file", file}});
    }
    json chains = json::array();
    for (const auto& ch : ix.chains) {
        const auto items_file = "chain_" + ch.name + ".npy";
        write_npy(dir / items_file, ch.items.data);
        written.push_back(dir / items_file);
        json route{{"kind", detail::route_kind_name(ch.route.kind)}, {"query_space", ch.route.query_space}};
        if (ch.route.kind == QueryRoute::Kind::fusion) {
            route["fusion"] = ch.route.spec.describe();
            if (ch.route.spec.projector) {
                const auto pf = "projector_" + ch.name + ".bin";
                save_projector(dir / pf, *ch.route.spec.projector);
                written.push_back(dir / pf);
                route["projector"] = pf;
            }
        }
        chains.push_back({{"name", ch.name},
                          {"items", items_file},
                          {"normalized", ch.items.normalized},
                          {"route", route}});
    }
    json j{{"strategy", ix.assignment.strategy},
           {"layout", layout_name(ix.assignment.layout)},
           {"catalog", catalog.fingerprint()},
           {"seed", b.seed},
           {"quantizer", b.quantizer.describe()},
           {"provenance", ix.assignment.provenance},
           {"code_budget", ix.assignment.vocab.code_budget()},
           {"suffix_tokens", ix.assignment.vocab.suffix_count()},
           {"codebooks", cbs},
           {"chains", chains},
           {"search_plan", detail::plan_json(ix.search_plan, b)},
           {"rec_plan", detail::plan_json(ix.rec_plan, b)}};
    write_text_file(dir / "index.json", j.dump(2) + "\n");
    written.push_back(dir / "index.json");
    return written;
}

inline BuiltStrategy load_index(const std::filesystem::path& dir, const Catalog& catalog) {
    const json j = json::parse(read_text_file(dir / "index.json"));
    SEMID_THROW_IF_NOT(j.at("catalog").get<std::string>() == catalog.fingerprint(), Errc::misaligned,
                       kPipelineStage, "index was built for a different catalog");
    BuiltStrategy b;
    b.seed = j.at("seed").get<std::uint64_t>();
    const auto& qj = j.at("quantizer");
    b.quantizer = {parse_quantizer_kind(qj.at("kind").get<std::string>()), qj.at("levels").get<std::size_t>(),
                   qj.at("k").get<std::size_t>(), qj.at("max_iters").get<std::size_t>()};
    RetrievalIndex& ix = b.index;
    ix.assignment = load_assignment(dir / "assignment.tsv", dir / "vocab.tsv", catalog);
    ix.assignment.provenance = j.at("provenance").get<std::vector<std::string>>();
    std::map<std::string, std::shared_ptr<const RQCodebooks>> cbs;
    for (const auto& c : j.at("codebooks")) {
        auto cb = std::make_shared<const RQCodebooks>(load_codebooks(dir / c.at("file").get<std::string>()));
        cbs[c.at("name").get<std::string>()] = cb;
        b.codebooks.emplace_back(c.at("name").get<std::string>(), cb);
    }
    for (const auto& c : j.at("chains")) {
        Chain ch;
        ch.name = c.at("name").get<std::string>();
        ch.items = EmbeddingMatrix{read_npy(dir / c.at("items").get<std::string>()), catalog.fingerprint(),
                                   c.at("normalized").get<bool>()};
        const auto& r = c.at("route");
        const auto kind = r.at("kind").get<std::string>();
        ch.route.query_space = r.at("query_space").get<std::string>();
        if (kind == "passthrough") {
            ch.route.kind = QueryRoute::Kind::passthrough;
        } else if (kind == "fusion") {
            ch.route.kind = QueryRoute::Kind::fusion;
            const auto& f = r.at("fusion");
            FusionSpec& s = ch.route.spec;
            const auto fk = f.at("kind").get<std::string>();
            s.kind = fk == "concat" ? FusionKind::concat : fk == "svd_add" ? FusionKind::svd_add
                                                                             : FusionKind::passthrough;
            s.d_search = f.at("d_search").get<std::size_t>();
            s.d_rec = f.at("d_rec").get<std::size_t>();
            s.target_dim = f.at("target_dim").get<std::size_t>();
            const auto red = f.value("reduced", std::string("none"));
            s.reduced = red == "search" ? ReducedSide::search : red == "rec" ? ReducedSide::rec : ReducedSide::none;
            if (r.contains("projector")) {
                s.projector = std::make_shared<const SvdProjector>(
                        load_projector(dir / r.at("projector").get<std::string>()));
            }
        }
        ix.chains.push_back(std::move(ch));
    }
    ix.search_plan = detail::parse_plan(j.at("search_plan"), cbs);
    ix.rec_plan = detail::parse_plan(j.at("rec_plan"), cbs);
    ix.popularity = catalog.popularity();
    ix.tries = build_tries(ix.assignment);
    return b;
}

} // namespace semid
