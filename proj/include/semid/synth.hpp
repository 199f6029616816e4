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

// Synthetic desk-scale dataset.
//
// Topics are random unit vectors. An item's content vector is its topic plus
// Gaussian spread, normalized. Queries are normalized(content + noise) with
// content_noise as the noise norm; the search space is the normalized mean of
// an item's train queries. Each item also has a collaborative topic, equal to
// its content topic with probability cf_alignment and uniform otherwise. Users
// prefer 1..3 collaborative topics and pick items inside them with power-law
// weights over a per-topic popularity order, plus a cf_noise chance of a
// uniformly random item. The rec space is the ENMF item factors
// trained on the train split, and the multitask space is svd_add(content, rec).

#include "semid/enmf.hpp"
#include "semid/fusion.hpp"
#include "semid/pipeline.hpp"

namespace semid {

inline constexpr const char* kSynthStage = "synth";

struct SynthParams {
    std::size_t n_items = 2000;
    std::size_t n_users = 500;
    std::size_t n_topics = 10;
    std::size_t content_dim = 48;
    double topic_spread = 0.6;
    double content_noise = 0.5;
    double cf_noise = 0.05;
    double cf_alignment = 0.5;
    std::size_t queries_per_item = 20;
    std::size_t interactions_per_user = 20;
    double popularity_exponent = 1.2;
    std::size_t rec_dim = 32;
    std::size_t enmf_epochs = 200;
    double enmf_lr = 0.01;
    std::uint64_t seed = 7;

    void validate() const {
        SEMID_THROW_IF_NOT(n_items >= 1 && n_users >= 1 && n_topics >= 1 && content_dim >= 1 && rec_dim >= 1,
                           Errc::out_of_range, kSynthStage, "counts and dimensions must be >= 1");
        SEMID_THROW_IF_NOT(queries_per_item >= 2 && queries_per_item % 2 == 0, Errc::out_of_range,
                           kSynthStage, "queries_per_item must be even and >= 2 (half train, half test)");
        SEMID_THROW_IF_NOT(interactions_per_user >= 2 && interactions_per_user <= n_items, Errc::out_of_range,
                           kSynthStage, "interactions_per_user must lie in [2, n_items]");
        SEMID_THROW_IF_NOT(topic_spread >= 0.0 && content_noise >= 0.0 && cf_noise >= 0.0 && cf_noise <= 1.0 &&
                                   cf_alignment >= 0.0 && cf_alignment <= 1.0 &&
                                   popularity_exponent >= 0.0,
                           Errc::out_of_range, kSynthStage, "noise and skew parameters out of range");
    }

    json describe() const {
        return {{"n_items", n_items},
                {"n_users", n_users},
                {"n_topics", n_topics},
                {"content_dim", content_dim},
                {"topic_spread", topic_spread},
                {"content_noise", content_noise},
                {"cf_noise", cf_noise},
                {"cf_alignment", cf_alignment},
                {"queries_per_item", queries_per_item},
                {"interactions_per_user", interactions_per_user},
                {"popularity_exponent", popularity_exponent},
                {"rec_dim", rec_dim},
                {"enmf_epochs", enmf_epochs},
                {"enmf_lr", enmf_lr},
                {"seed", seed}};
    }
};

struct SynthDataset {
    ExperimentData data;
    std::vector<Interaction> triples;
    EnmfModel enmf;
    std::vector<std::size_t> item_topic;
};

namespace detail {

inline std::vector<float> gaussian_unit(Rng& rng, std::size_t d) {
    std::vector<float> v(d);
    for (;;) {
        double s = 0.0;
        for (auto& x : v) {
            x = static_cast<float>(rng.normal());
            s += static_cast<double>(x) * x;
        }
        if (s > 0.0) {
            const double inv = 1.0 / std::sqrt(s);
            for (auto& x : v) {
                x = static_cast<float>(x * inv);
            }
            return v;
        }
    }
}

/// normalize(base + sigma * g / sqrt(d)); the noise has expected norm ~sigma.
inline std::vector<float> perturb(std::span<const float> base, double sigma, Rng& rng) {
    const double scale = sigma / std::sqrt(static_cast<double>(base.size()));
    std::vector<float> v(base.begin(), base.end());
    if (sigma > 0.0) {
        for (auto& x : v) {
            x = static_cast<float>(x + scale * rng.normal());
        }
    }
    return l2_normalized(v);
}

inline std::size_t sample_cdf(const std::vector<double>& cdf, Rng& rng) {
    const double u = rng.uniform() * cdf.back();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

inline std::string pad_id(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%06zu", prefix, i);
    return buf;
}

} // namespace detail

inline SynthDataset synth_generate(const SynthParams& p, std::size_t workers = 1) {
    p.validate();
    Rng rng(derive_seed(p.seed, 1));
    const std::size_t d = p.content_dim;

    std::vector<std::vector<float>> topics(p.n_topics);
    for (auto& t : topics) {
        t = detail::gaussian_unit(rng, d);
    }
    std::vector<std::size_t> item_topic(p.n_items);
    Matrix content(p.n_items, d);
    for (std::size_t i = 0; i < p.n_items; ++i) {
        item_topic[i] = i % p.n_topics;
        const auto v = detail::perturb(topics[item_topic[i]], p.topic_spread, rng);
        std::copy(v.begin(), v.end(), content.row(i).begin());
    }

    // queries: first half train, second half test
    Rng qrng(derive_seed(p.seed, 2));
    QuerySet queries;
    const std::size_t half = p.queries_per_item / 2;
    Matrix qm(p.n_items * p.queries_per_item, d);
    Matrix search(p.n_items, d);
    for (std::size_t i = 0; i < p.n_items; ++i) {
        std::vector<double> acc(d, 0.0);
        for (std::size_t k = 0; k < p.queries_per_item; ++k) {
            const std::size_t q = i * p.queries_per_item + k;
            const auto v = detail::perturb(content.row(i), p.content_noise, qrng);
            std::copy(v.begin(), v.end(), qm.row(q).begin());
            const Split s = k < half ? Split::train : Split::test;
            queries.records.push_back({detail::pad_id("q", q), i, s});
            if (s == Split::train) {
                for (std::size_t j = 0; j < d; ++j) {
                    acc[j] += v[j];
                }
            }
        }
        std::vector<float> mean(acc.begin(), acc.end());
        const auto u = l2_normalized(mean);
        std::copy(u.begin(), u.end(), search.row(i).begin());
    }

    // collaborative topic: the content topic with probability cf_alignment
    Rng arng(derive_seed(p.seed, 6));
    std::vector<std::size_t> cf_topic(p.n_items);
    for (std::size_t i = 0; i < p.n_items; ++i) {
        const bool keep = arng.uniform() < p.cf_alignment;
        const auto other = arng.index(p.n_topics);
        cf_topic[i] = keep ? item_topic[i] : other;
    }

    // popularity order inside each collaborative topic
    Rng prng(derive_seed(p.seed, 3));
    std::vector<std::vector<std::size_t>> topic_items(p.n_topics);
    for (std::size_t i = 0; i < p.n_items; ++i) {
        topic_items[cf_topic[i]].push_back(i);
    }
    std::vector<std::vector<double>> topic_cdf(p.n_topics);
    for (std::size_t t = 0; t < p.n_topics; ++t) {
        prng.shuffle(topic_items[t]);
        if (topic_items[t].empty()) {
            topic_items[t].push_back(prng.index(p.n_items));
        }
        double c = 0.0;
        for (std::size_t r = 0; r < topic_items[t].size(); ++r) {
            c += std::pow(static_cast<double>(r + 1), -p.popularity_exponent);
            topic_cdf[t].push_back(c);
        }
    }

    // interactions
    Rng urng(derive_seed(p.seed, 4));
    std::vector<Interaction> triples;
    std::vector<std::string> user_ids(p.n_users);
    for (std::size_t u = 0; u < p.n_users; ++u) {
        user_ids[u] = detail::pad_id("u", u);
        const std::size_t n_pref = 1 + urng.index(std::min<std::size_t>(3, p.n_topics));
        std::vector<std::size_t> pref;
        while (pref.size() < n_pref) {
            const auto t = urng.index(p.n_topics);
            if (std::find(pref.begin(), pref.end(), t) == pref.end()) {
                pref.push_back(t);
            }
        }
        std::vector<char> used(p.n_items, 0);
        std::int64_t ts = 1'000'000;
        for (std::size_t k = 0; k < p.interactions_per_user; ++k) {
            std::size_t item = 0;
            for (int attempt = 0;; ++attempt) {
                if (urng.uniform() < p.cf_noise || attempt > 64) {
                    item = urng.index(p.n_items);
                } else {
                    const auto t = pref[urng.index(pref.size())];
                    item = topic_items[t][detail::sample_cdf(topic_cdf[t], urng)];
                }
                if (!used[item]) {
                    break;
                }
            }
            used[item] = 1;
            ts += 1 + static_cast<std::int64_t>(urng.index(1000));
            triples.push_back({user_ids[u], item, ts, Split::train});
        }
    }
    triples = chronological_split(std::move(triples));

    std::vector<std::uint64_t> pop(p.n_items, 0);
    for (const auto& t : triples) {
        if (t.split == Split::train) {
            ++pop[t.item];
        }
    }
    std::vector<CatalogItem> items(p.n_items);
    for (std::size_t i = 0; i < p.n_items; ++i) {
        items[i] = {detail::pad_id("i", i), pop[i]};
    }

    SynthDataset out{ExperimentData{Catalog(std::move(items)), {}, nullptr, std::move(queries)}, triples, {},
                     std::move(item_topic)};
    ExperimentData& data = out.data;
    const auto fp = data.catalog.fingerprint();
    data.log = std::make_shared<const InteractionLog>(data.catalog, triples);

    EnmfConfig ec;
    ec.d = p.rec_dim;
    ec.epochs = p.enmf_epochs;
    ec.lr = p.enmf_lr;
    ec.optimizer = EnmfOptimizer::adam;
    ec.seed = derive_seed(p.seed, 5);
    ec.workers = workers;
    out.enmf = train_enmf(*data.log, ec);

    EmbeddingMatrix content_m{std::move(content), fp, true};
    EmbeddingMatrix search_m{std::move(search), fp, true};
    EmbeddingMatrix rec_m = l2_normalize(item_embeddings(out.enmf, false, fp));
    auto [mt, spec] = fuse_svd_add(content_m, rec_m);

    EmbeddingMatrix q_search{std::move(qm), "", true};
    Matrix q_mt(q_search.rows(), spec.target_dim);
    for (std::size_t q = 0; q < q_search.rows(); ++q) {
        const auto v = project_context(q_search.row(q), spec, SourceSpace::search);
        std::copy(v.begin(), v.end(), q_mt.row(q).begin());
    }
    data.queries.add_embeddings("search", std::move(q_search));
    data.queries.add_embeddings("multitask", EmbeddingMatrix{std::move(q_mt), "", false});

    data.spaces["content"] = std::move(content_m);
    data.spaces["search"] = std::move(search_m);
    data.spaces["rec"] = std::move(rec_m);
    data.spaces["multitask"] = std::move(mt);
    return out;
}

/// Writes the dataset in the ingest formats plus an experiment config.
/// Returns every file written.
inline std::vector<std::filesystem::path> save_synth(const std::filesystem::path& dir, const SynthDataset& s,
                                                     const SynthParams& p) {
    std::filesystem::create_directories(dir);
    const auto& data = s.data;
    std::vector<std::filesystem::path> w;
    save_catalog(dir / "catalog.tsv", data.catalog);
    save_manifest(dir / "manifest.txt", data.catalog);
    save_interactions(dir / "interactions.tsv", data.catalog, *data.log);
    save_query_records(dir / "queries.tsv", data.catalog, data.queries);
    w.insert(w.end(), {dir / "catalog.tsv", dir / "manifest.txt", dir / "interactions.tsv", dir / "queries.tsv"});
    for (const auto& [name, m] : data.spaces) {
        const auto f = dir / ("emb_" + name + ".npy");
        write_npy(f, m.data);
        w.push_back(f);
    }
    for (const auto& [name, m] : data.queries.embeddings) {
        const auto f = dir / ("query_emb_" + name + ".npy");
        write_npy(f, m.data);
        w.push_back(f);
    }
    save_enmf(dir / "enmf.bin", s.enmf);
    w.push_back(dir / "enmf.bin");

    std::string toml = "# synthetic dataset written by `semid synth`\n";
    toml += "# generator: " + p.describe().dump() + "\n\n";
    toml += "[data]\ncatalog = \"catalog.tsv\"\nmanifest = \"manifest.txt\"\n"
            "interactions = \"interactions.tsv\"\nqueries = \"queries.tsv\"\n\n[data.embeddings]\n";
    for (const auto& [name, m] : data.spaces) {
        toml += name + " = \"emb_" + name + ".npy\"\n";
    }
    toml += "\n[data.query_embeddings]\n";
    for (const auto& [name, m] : data.queries.embeddings) {
        toml += name + " = \"query_emb_" + name + ".npy\"\n";
    }
    toml += "\n[experiment]\nstrategies = [\"search\", \"rec\", \"content\", \"separate\", \"prefix_share\", "
            "\"fused_concat\", \"fused_svd\", \"multitask\"]\nseeds = [1, 2, 3, 4, 5]\n"
            "head_fraction = 0.01\nexclude_history = true\n\n"
            "[quantizer]\nkind = \"rq_kmeans\"\nlevels = 2\nk = 256\nmax_iters = 100\n\n"
            "[decoding]\nbeam_width = 60\ngroups = 30\ndiversity_penalty = 0.25\ntop_k = 30\n"
            "popularity_blend = 0.0\n\n[run]\nout = \"out\"\n";
    write_text_file(dir / "experiment.toml", toml);
    w.push_back(dir / "experiment.toml");
    return w;
}

} // namespace semid
