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

// Recall@K, head/torso slices and the strategy x seed experiment grid.
//
// The dataset is fixed; seeds drive the quantizers. Each test query and each
// user with a held-out item is one case. Significance tests pair cases across
// two strategies using each case's recall averaged over seeds, with one
// Bonferroni family per (task, slice) holding every strategy pair.

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <set>

#include "semid/pipeline.hpp"
#include "semid/stats.hpp"

namespace semid {

inline constexpr const char* kEvalStage = "eval";

inline double recall_at_k(std::span<const std::size_t> ranked, const std::set<std::size_t>& relevant,
                          std::size_t k) {
    SEMID_THROW_IF_NOT(k >= 1, Errc::out_of_range, kEvalStage, "k must be >= 1");
    SEMID_THROW_IF_NOT(!relevant.empty(), Errc::empty_input, kEvalStage, "empty relevant set");
    std::size_t hits = 0;
    const std::size_t top = std::min(k, ranked.size());
    std::set<std::size_t> counted;
    for (std::size_t r = 0; r < top; ++r) {
        if (relevant.count(ranked[r]) != 0U && counted.insert(ranked[r]).second) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

struct SliceSpec {
    double head_fraction = 0.01;

    std::size_t head_size(std::size_t n_items) const {
        SEMID_THROW_IF_NOT(head_fraction >= 0.0 && head_fraction <= 1.0, Errc::out_of_range, kEvalStage,
                           "head_fraction must lie in [0, 1]");
        // ceil with a guard against 0.01 * 2000 = 20.000000000000004
        const double raw = head_fraction * static_cast<double>(n_items);
        const double r = std::round(raw);
        const auto h = std::abs(raw - r) < 1e-9 ? static_cast<std::size_t>(r)
                                                : static_cast<std::size_t>(std::ceil(raw));
        return std::min(h, n_items);
    }

    /// is_head[i] for every item: top head_size items by popularity, ties by index.
    std::vector<char> head_mask(std::span<const std::uint64_t> popularity) const {
        std::vector<std::size_t> order(popularity.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return popularity[a] > popularity[b]; });
        std::vector<char> mask(popularity.size(), 0);
        const std::size_t h = head_size(popularity.size());
        for (std::size_t r = 0; r < h; ++r) {
            mask[order[r]] = 1;
        }
        return mask;
    }
};

inline const std::vector<std::string>& slice_names() {
    static const std::vector<std::string> s{"all", "head", "torso"};
    return s;
}

inline const std::vector<std::string>& task_names() {
    static const std::vector<std::string> t{"search", "rec"};
    return t;
}

struct ExperimentConfig {
    std::vector<std::string> strategies = known_strategies();
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    QuantizerParams quantizer;
    DecodingConfig decoding;
    SliceSpec slices;
    bool exclude_history = true;
    double alpha = 0.05;
    std::size_t workers = 1;

    json describe() const {
        return {{"strategies", strategies},
                {"seeds", seeds},
                {"quantizer", quantizer.describe()},
                {"decoding", decoding.describe()},
                {"head_fraction", slices.head_fraction},
                {"exclude_history", exclude_history},
                {"alpha", alpha},
                {"scorer", "residual_distance"},
                {"fused_svd_order", "normalize, reduce, renormalize, add"}};
    }
};

/// One evaluation case: a test query or a user's held-out item.
struct EvalCase {
    std::size_t context = 0; // query index or user index
    std::size_t relevant = 0;
    bool head = false;
};

struct CellResult {
    std::string strategy;
    std::uint64_t seed = 0;
    std::map<std::string, std::vector<double>> hits; // task -> per-case recall
    std::size_t code_budget = 0;
    std::size_t suffix_tokens = 0;
};

struct PairTest {
    std::string a;
    std::string b;
    double mean_diff = 0.0;
    TTestResult test;
    double p_adjusted = 1.0;
    bool significant = false;
};

struct SliceStats {
    std::vector<double> per_seed;
    double mean = 0.0;
    double std = 0.0;
    std::size_t cases = 0;
};

struct ExperimentReport {
    json config;
    std::string fingerprint;
    std::vector<std::string> strategies;
    std::vector<std::uint64_t> seeds;
    // strategy -> task -> slice
    std::map<std::string, std::map<std::string, std::map<std::string, SliceStats>>> recall;
    // task -> slice -> pair tests
    std::map<std::string, std::map<std::string, std::vector<PairTest>>> significance;
    std::map<std::string, std::pair<std::size_t, std::size_t>> budgets; // code, suffix
    double wall_seconds = 0.0;

    const SliceStats& at(const std::string& strategy, const std::string& task,
                         const std::string& slice = "all") const {
        return recall.at(strategy).at(task).at(slice);
    }
};

inline std::vector<EvalCase> search_cases(const ExperimentData& data, const std::vector<char>& head) {
    std::vector<EvalCase> out;
    for (const auto q : data.queries.indices(Split::test)) {
        const auto item = data.queries.records[q].relevant_item;
        out.push_back({q, item, head[item] != 0});
    }
    return out;
}

/// Users with a held-out item and at least one train item.
inline std::vector<EvalCase> rec_cases(const ExperimentData& data, const std::vector<char>& head) {
    std::vector<EvalCase> out;
    for (std::size_t u = 0; u < data.log->n_users(); ++u) {
        const auto t = data.log->test_item(u);
        if (t && !data.log->train_items(u).empty()) {
            out.push_back({u, *t, head[*t] != 0});
        }
    }
    return out;
}

inline std::vector<double> evaluate_cases(const RetrievalIndex& ix, const ExperimentData& data,
                                          const std::vector<EvalCase>& cases, bool search,
                                          const ExperimentConfig& cfg) {
    std::vector<double> hits(cases.size(), 0.0);
    parallel_for(
            cases.size(),
            [&](std::size_t c) {
                const auto& ec = cases[c];
                std::vector<Hit> res;
                if (search) {
                    res = retrieve_search(ix, data.queries, ec.context, cfg.decoding);
                } else {
                    RecContextOptions opt;
                    opt.exclude_history = cfg.exclude_history;
                    res = retrieve_rec(ix, *data.log, ec.context, cfg.decoding, opt);
                }
                std::vector<std::size_t> ranked;
                ranked.reserve(res.size());
                for (const auto& h : res) {
                    ranked.push_back(h.item);
                }
                hits[c] = recall_at_k(ranked, {ec.relevant}, cfg.decoding.top_k);
            },
            cfg.workers);
    return hits;
}

inline CellResult run_cell(const std::string& strategy, std::uint64_t seed, const ExperimentData& data,
                           const std::vector<EvalCase>& scases, const std::vector<EvalCase>& rcases,
                           const ExperimentConfig& cfg) {
    const BuiltStrategy b = build_strategy(strategy, data, cfg.quantizer, seed, cfg.workers);
    CellResult r;
    r.strategy = strategy;
    r.seed = seed;
    r.code_budget = b.index.assignment.vocab.code_budget();
    r.suffix_tokens = b.index.assignment.vocab.suffix_count();
    r.hits["search"] = evaluate_cases(b.index, data, scases, true, cfg);
    r.hits["rec"] = evaluate_cases(b.index, data, rcases, false, cfg);
    return r;
}

namespace detail {

inline std::vector<double> slice_values(const std::vector<double>& hits, const std::vector<EvalCase>& cases,
                                        const std::string& slice) {
    std::vector<double> out;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        if (slice == "all" || (slice == "head") == cases[c].head) {
            out.push_back(hits[c]);
        }
    }
    return out;
}

inline double mean_or_zero(const std::vector<double>& v) {
    return v.empty() ? 0.0 : mean(v);
}

} // namespace detail

/// Aggregates finished cells into a report. Cells may arrive in any order.
inline ExperimentReport assemble_report(const ExperimentConfig& cfg, const ExperimentData& data,
                                        const std::vector<EvalCase>& scases,
                                        const std::vector<EvalCase>& rcases,
                                        const std::vector<CellResult>& cells) {
    ExperimentReport rep;
    rep.config = cfg.describe();
    rep.strategies = cfg.strategies;
    rep.seeds = cfg.seeds;
    const std::map<std::string, const std::vector<EvalCase>*> cases{{"search", &scases}, {"rec", &rcases}};
    auto cell = [&](const std::string& s, std::uint64_t seed) -> const CellResult& {
        for (const auto& c : cells) {
            if (c.strategy == s && c.seed == seed) {
                return c;
            }
        }
        throw Error(Errc::internal, kEvalStage, "missing cell " + s + "/" + std::to_string(seed));
    };

    // per-strategy, per-case recall averaged over seeds
    std::map<std::string, std::map<std::string, std::vector<double>>> case_mean;
    for (const auto& s : cfg.strategies) {
        const auto& first = cell(s, cfg.seeds.front());
        rep.budgets[s] = {first.code_budget, first.suffix_tokens};
        for (const auto& task : task_names()) {
            std::vector<double> acc(cases.at(task)->size(), 0.0);
            for (const auto seed : cfg.seeds) {
                const auto& h = cell(s, seed).hits.at(task);
                for (std::size_t c = 0; c < acc.size(); ++c) {
                    acc[c] += h[c];
                }
            }
            for (auto& x : acc) {
                x /= static_cast<double>(cfg.seeds.size());
            }
            case_mean[s][task] = acc;
            for (const auto& slice : slice_names()) {
                SliceStats st;
                for (const auto seed : cfg.seeds) {
                    const auto v = detail::slice_values(cell(s, seed).hits.at(task), *cases.at(task), slice);
                    st.cases = v.size();
                    st.per_seed.push_back(detail::mean_or_zero(v));
                }
                st.mean = mean(st.per_seed);
                st.std = sample_std(st.per_seed);
                rep.recall[s][task][slice] = st;
            }
        }
    }

    for (const auto& task : task_names()) {
        for (const auto& slice : slice_names()) {
            std::vector<PairTest> tests;
            for (std::size_t i = 0; i < cfg.strategies.size(); ++i) {
                for (std::size_t j = i + 1; j < cfg.strategies.size(); ++j) {
                    const auto& a = cfg.strategies[i];
                    const auto& b = cfg.strategies[j];
                    const auto va = detail::slice_values(case_mean[a][task], *cases.at(task), slice);
                    const auto vb = detail::slice_values(case_mean[b][task], *cases.at(task), slice);
                    if (va.size() < 2) {
                        continue;
                    }
                    PairTest pt{a, b, detail::mean_or_zero(va) - detail::mean_or_zero(vb), paired_t_test(va, vb)};
                    tests.push_back(pt);
                }
            }
            std::vector<double> p;
            for (const auto& t : tests) {
                p.push_back(t.test.p);
            }
            const auto adj = bonferroni(p, tests.size());
            for (std::size_t k = 0; k < tests.size(); ++k) {
                tests[k].p_adjusted = adj[k];
                tests[k].significant = adj[k] < cfg.alpha;
            }
            rep.significance[task][slice] = std::move(tests);
        }
    }

    json fp{{"config", rep.config},
            {"catalog", data.catalog.fingerprint()},
            {"n_items", data.catalog.size()},
            {"n_users", data.log->n_users()},
            {"search_cases", scases.size()},
            {"rec_cases", rcases.size()}};
    rep.fingerprint = sha256_hex(fp.dump()).substr(0, 16);
    return rep;
}

inline ExperimentReport run_experiment(const ExperimentData& data, const ExperimentConfig& cfg) {
    SEMID_THROW_IF_NOT(!cfg.strategies.empty(), Errc::invalid_config, kEvalStage, "no strategies");
    SEMID_THROW_IF_NOT(!cfg.seeds.empty(), Errc::invalid_config, kEvalStage, "no seeds");
    cfg.decoding.validate();
    for (const auto& s : cfg.strategies) {
        for (const auto& sp : required_spaces(s)) {
            data.space(sp);
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto head = cfg.slices.head_mask(data.catalog.popularity());
    const auto scases = search_cases(data, head);
    const auto rcases = rec_cases(data, head);
    // cells run in parallel; leftover workers go inside each cell
    const std::size_t n_cells = cfg.strategies.size() * cfg.seeds.size();
    const std::size_t outer = std::max<std::size_t>(1, std::min(cfg.workers, n_cells));
    ExperimentConfig inner = cfg;
    inner.workers = std::max<std::size_t>(1, cfg.workers / outer);
    std::vector<CellResult> cells(n_cells);
    std::vector<std::optional<Error>> errors(n_cells);
    parallel_for(
            n_cells,
            [&](std::size_t c) {
                const auto& s = cfg.strategies[c / cfg.seeds.size()];
                const auto seed = cfg.seeds[c % cfg.seeds.size()];
                try {
                    cells[c] = run_cell(s, seed, data, scases, rcases, inner);
                } catch (const Error& e) {
                    errors[c] = Error(e.code(), e.stage(), std::string("strategy ") + s + ", seed " +
                                              std::to_string(seed) + ": " + e.what());
                }
            },
            outer);
    for (const auto& e : errors) {
        if (e) {
            throw *e;
        }
    }
    auto rep = assemble_report(cfg, data, scases, rcases, cells);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Report output

inline json report_json(const ExperimentReport& r) {
    json rec = json::object();
    for (const auto& [s, tasks] : r.recall) {
        for (const auto& [task, slices] : tasks) {
            for (const auto& [slice, st] : slices) {
                rec[s][task][slice] = {{"per_seed", st.per_seed},
                                       {"mean", st.mean},
                                       {"std", st.std},
                                       {"cases", st.cases}};
            }
        }
    }
    json sig = json::object();
    for (const auto& [task, slices] : r.significance) {
        for (const auto& [slice, tests] : slices) {
            json arr = json::array();
            for (const auto& t : tests) {
                arr.push_back({{"a", t.a},
                               {"b", t.b},
                               {"mean_diff", t.mean_diff},
                               {"t", std::isfinite(t.test.t) ? json(t.test.t)
                                                             : json(std::isnan(t.test.t) ? "nan"
                                                                    : t.test.t > 0       ? "inf"
                                                                                         : "-inf")},
                               {"df", t.test.df},
                               {"p", t.test.p},
                               {"p_bonferroni", t.p_adjusted},
                               {"m", tests.size()},
                               {"significant", t.significant}});
            }
            sig[task][slice] = arr;
        }
    }
    json budgets = json::object();
    for (const auto& [s, b] : r.budgets) {
        budgets[s] = {{"code_tokens", b.first}, {"suffix_tokens", b.second}};
    }
    return {{"fingerprint", r.fingerprint},
            {"config", r.config},
            {"strategies", r.strategies},
            {"seeds", r.seeds},
            {"metric", "recall@" + std::to_string(r.config.at("decoding").at("top_k").get<std::size_t>())},
            {"recall", rec},
            {"significance", sig},
            {"token_budgets", budgets},
            {"notes",
             {"decoder: residual-distance scorer over the trie of valid IDs stands in for the generative model",
              "prefix_share: k-means analog of the shared/task codebooks"}}};
}

inline std::string report_markdown(const ExperimentReport& r) {
    auto cell = [&](const std::string& s, const std::string& task, const std::string& slice) {
        const auto& st = r.at(s, task, slice);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", st.mean, st.std);
        return std::string(buf);
    };
    const auto k = r.config.at("decoding").at("top_k").get<std::size_t>();
    std::string md = "# Recall@" + std::to_string(k) + " (" + std::to_string(r.seeds.size()) +
            " seeds, fingerprint " + r.fingerprint + ")\n\n";
    md += "| Strategy | Code tokens | Search All | Rec All | Rec Head | Rec Torso |\n";
    md += "|---|---:|---:|---:|---:|---:|\n";
    for (const auto& s : r.strategies) {
        md += "| " + s + " | " + std::to_string(r.budgets.at(s).first) + " | " + cell(s, "search", "all") +
                " | " + cell(s, "rec", "all") + " | " + cell(s, "rec", "head") + " | " +
                cell(s, "rec", "torso") + " |\n";
    }
    for (const auto& task : task_names()) {
        const auto& tests = r.significance.at(task).at("all");
        md += "\n## Paired t-tests, " + task + " (all cases, Bonferroni m = " + std::to_string(tests.size()) +
                ")\n\n";
        if (tests.empty()) {
            md += "No pairs.\n";
            continue;
        }
        md += "| A | B | mean(A-B) | t | p | p adj | significant |\n|---|---|---:|---:|---:|---:|---|\n";
        for (const auto& t : tests) {
            char buf[256];
            std::snprintf(buf, sizeof(buf), "| %s | %s | %+.4f | %.3f | %.3g | %.3g | %s |\n", t.a.c_str(),
                          t.b.c_str(), t.mean_diff, t.test.t, t.test.p, t.p_adjusted,
                          t.significant ? "yes" : "no");
            md += buf;
        }
    }
    return md;
}

} // namespace semid
