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

// Random problem instances shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "convert.hpp"
#include "semid/enmf.hpp"
#include "semid/id_space.hpp"
#include "semid/quantizer.hpp"
#include "semid/retrieval.hpp"

namespace instances {

using namespace semid;
using testutil::emb;

// ENMF

struct EnmfInstance {
    EnmfModel model;
    EnmfData data;
    std::set<std::pair<std::size_t, std::size_t>> observed;
};

EnmfInstance random_enmf_instance(std::mt19937_64& rng, double c_neg = 0.0) {
    const std::size_t nu = 1 + rng() % 20;
    const std::size_t ni = 1 + rng() % 20;
    const std::size_t d = 1 + rng() % 8;
    std::uniform_real_distribution<double> ud(0.05, 1.0);
    if (c_neg <= 0.0) {
        c_neg = ud(rng);
    }
    EnmfInstance in;
    in.model = enmf_init(nu, ni, d, c_neg, rng());
    std::normal_distribution<double> nd(0.0, 0.5);
    for (auto& x : in.model.P.values()) {
        x = static_cast<float>(nd(rng));
    }
    for (auto& x : in.model.Q.values()) {
        x = static_cast<float>(nd(rng));
    }
    for (auto& x : in.model.h) {
        x = static_cast<float>(1.0 + nd(rng));
    }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (std::size_t u = 0; u < nu; ++u) {
        for (std::size_t i = 0; i < ni; ++i) {
            if (rng() % 3 == 0) {
                pairs.emplace_back(u, i);
                in.observed.insert({u, i});
            }
        }
    }
    in.data = EnmfData::from_pairs(nu, ni, pairs);
    return in;
}

double enmf_oracle_loss(const EnmfModel& m, const std::set<std::pair<std::size_t, std::size_t>>& obs) {
    const auto P = testutil::to_mat(m.P);
    const auto Q = testutil::to_mat(m.Q);
    return oracle::enmf_loss(P, Q, oracle::Vec(m.h.begin(), m.h.end()), m.c_neg, obs);
}

// Residual quantizer

RQCodebooks single_level(const oracle::Mat& centroids) {
    RQCodebooks cb;
    cb.d = centroids[0].size();
    cb.levels.push_back(testutil::to_matrix(centroids));
    return cb;
}

// Mean squared error of reconstructing every row from its first `levels` codes.
double prefix_mse(const oracle::Mat& rows, const std::vector<CodeSequence>& codes, const RQCodebooks& cb,
                  std::size_t levels) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        oracle::Vec rec(rows[i].size(), 0.0);
        for (std::size_t l = 0; l < levels; ++l) {
            for (std::size_t j = 0; j < rec.size(); ++j) {
                rec[j] += cb.levels[l](codes[i].codes[l], j);
            }
        }
        s += oracle::sq_dist(rows[i], rec);
    }
    return s / static_cast<double>(rows.size());
}

// Decoding

// A decoding instance: IDs, trie, plan and one context, plus the raw codebooks
// per chain so the oracle can rescore every path from scratch.
struct Instance {
    IdAssignment ids;
    IdTrie trie;
    ScoringPlan plan;
    Context ctx;
    std::vector<std::shared_ptr<const RQCodebooks>> books; // per plan position, null for suffix
};

// Task-specific layout: one chain, L levels, then a suffix.
Instance plain_instance(std::mt19937_64& rng, std::size_t n, std::size_t levels, std::size_t k) {
    Instance in;
    const auto m = emb(oracle::gaussian(n, 6, rng));
    auto fit = rq_fit_detailed(m, levels, k, 30, rng());
    auto cb = std::make_shared<RQCodebooks>(std::move(fit.codebooks));
    in.ids = build_task_specific(*cb, fit.codes, n);
    in.trie = build_trie(in.ids);
    for (std::size_t l = 0; l < levels; ++l) {
        in.plan.push_back({cb, l, 0});
        in.books.push_back(cb);
    }
    in.plan.push_back({});
    in.books.push_back(nullptr);
    const auto v = oracle::gaussian(1, 6, rng)[0];
    in.ctx.chains.emplace_back(std::vector<float>(v.begin(), v.end()));
    return in;
}

// Prefix-share style layout: three single-level chains (shared, search, rec)
// then a suffix; the rec chain is absent from the context when `drop_rec`.
Instance chained_instance(std::mt19937_64& rng, std::size_t n, bool drop_rec) {
    Instance in;
    std::vector<RqFit> fits;
    for (std::size_t c = 0; c < 3; ++c) {
        fits.push_back(rq_fit_detailed(emb(oracle::gaussian(n, 4, rng)), 1, 3 + c, 30, rng()));
    }
    std::vector<CodeSequence> triples(n);
    for (std::size_t i = 0; i < n; ++i) {
        triples[i].codes = {fits[0].codes[i].codes[0], fits[1].codes[i].codes[0], fits[2].codes[i].codes[0]};
    }
    const Namespace ns[3] = {Namespace::SHARED, Namespace::SEARCH, Namespace::REC};
    for (const auto& dc : disambiguate(triples)) {
        SemanticId id;
        for (std::size_t c = 0; c < 3; ++c) {
            id.push_back({ns[c], 0, dc.codes.codes[c]});
        }
        id.push_back(suffix_token(dc.suffix));
        in.ids.ids.push_back(id);
    }
    in.trie = build_trie(in.ids);
    for (std::size_t c = 0; c < 3; ++c) {
        auto cb = std::make_shared<RQCodebooks>(fits[c].codebooks);
        in.plan.push_back({cb, 0, c});
        in.books.push_back(cb);
        const auto v = oracle::gaussian(1, 4, rng)[0];
        if (c == 2 && drop_rec) {
            in.ctx.chains.emplace_back(std::nullopt);
        } else {
            in.ctx.chains.emplace_back(std::vector<float>(v.begin(), v.end()));
        }
    }
    in.plan.push_back({});
    in.books.push_back(nullptr);
    return in;
}

// Summed residual score of an item's full path, computed from the codebooks.
double oracle_path_score(const Instance& in, std::size_t item) {
    const auto& id = in.ids.ids[item];
    std::vector<oracle::Vec> residual;
    for (const auto& c : in.ctx.chains) {
        residual.push_back(c ? oracle::Vec(c->begin(), c->end()) : oracle::Vec{});
    }
    double total = 0.0;
    for (std::size_t p = 0; p < id.size(); ++p) {
        const auto& b = in.plan[p];
        if (b.is_suffix()) {
            continue;
        }
        auto& r = residual[b.chain];
        if (r.empty()) {
            continue;
        }
        const auto row = b.codebooks->levels[b.level].row(id[p].codeword);
        double s = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) {
            const double e = r[j] - row[j];
            s += e * e;
        }
        total -= s;
        for (std::size_t j = 0; j < r.size(); ++j) {
            r[j] -= row[j];
        }
    }
    return total;
}

// Every non-excluded item ranked by path score, ties by item index.
std::vector<std::pair<std::size_t, double>> exhaustive_ranking(const Instance& in,
                                                               const std::set<std::size_t>& excluded = {}) {
    std::vector<std::pair<std::size_t, double>> all;
    for (std::size_t i = 0; i < in.ids.ids.size(); ++i) {
        if (excluded.count(i) == 0U) {
            all.emplace_back(i, oracle_path_score(in, i));
        }
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    return all;
}

DecodingConfig exhaustive_config(std::size_t n) {
    DecodingConfig cfg;
    cfg.beam_width = n;
    cfg.groups = 1;
    cfg.diversity_penalty = 0.0;
    cfg.top_k = n;
    return cfg;
}

} // namespace instances
