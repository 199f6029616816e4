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

// Acceptance run: one PASS/FAIL line per criterion.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "instances.hpp"
#include "pipeline_run.hpp"
#include "semid/eval.hpp"
#include "semid/fusion.hpp"
#include "semid/pipeline.hpp"
#include "semid/stats.hpp"
#include "semid/synth.hpp"
#include "stat_vectors.hpp"

using namespace semid;
using namespace instances;

namespace {

// Collects failed checks for one criterion.
class Checks {
   public:
    void expect(bool ok, const std::string& what) {
        ++total_;
        if (!ok && failures_.size() < 5) {
            failures_.push_back(what);
        }
        failed_ += ok ? 0 : 1;
    }
    bool ok() const {
        return failed_ == 0;
    }
    std::string summary() const {
        std::ostringstream s;
        s << (total_ - failed_) << "/" << total_ << " checks";
        for (const auto& f : failures_) {
            s << "; " << f;
        }
        return s.str();
    }
    void note(const std::string& n) {
        notes_ += (notes_.empty() ? "" : ", ") + n;
    }
    const std::string& notes() const {
        return notes_;
    }

   private:
    std::size_t total_ = 0;
    std::size_t failed_ = 0;
    std::vector<std::string> failures_;
    std::string notes_;
};

bool near(double a, double b, double tol) {
    return std::abs(a - b) <= tol;
}

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, x);
    return buf;
}

// 1. k-means vs exhaustive partition, cumulative MSE over levels, encode tie metamorphics
void quantizer_suite(Checks& c) {
    const oracle::Mat pts{{0, 0}, {0, 1}, {10, 0}, {10, 1}};
    const auto best = oracle::best_two_partition(pts);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto m = kmeans_fit(testutil::to_matrix(pts), 2, 100, seed);
        c.expect(near(m.inertia, best.sse, 1e-9), "4-point inertia, seed " + std::to_string(seed));
        auto got = testutil::to_mat(m.centroids);
        std::sort(got.begin(), got.end());
        oracle::Mat want{best.c0, best.c1};
        std::sort(want.begin(), want.end());
        for (std::size_t k = 0; k < 2; ++k) {
            c.expect(oracle::sq_dist(got[k], want[k]) < 1e-12, "4-point centroid");
        }
    }

    std::mt19937_64 rng(101);
    for (int inst = 0; inst < 20; ++inst) {
        const auto rows = oracle::gaussian(200, 8, rng);
        const auto fit = rq_fit_detailed(emb(rows), 3, 4, 100, rng());
        const auto mrows = testutil::to_mat(testutil::to_matrix(rows));
        double prev = prefix_mse(mrows, fit.codes, fit.codebooks, 0);
        for (std::size_t l = 1; l <= 3; ++l) {
            const double now = prefix_mse(mrows, fit.codes, fit.codebooks, l);
            c.expect(now <= prev + 1e-9, "MSE rose at level " + std::to_string(l));
            prev = now;
        }
    }

    c.expect(rq_encode(std::vector<float>{0, 0}, single_level({{9, 9}, {9, 9}, {1, 0}, {9, 9}, {-1, 0}})).codes[0] ==
                     2U,
             "tie to lower index");
    for (int inst = 0; inst < 20; ++inst) {
        const auto cw = oracle::gaussian(12, 4, rng);
        std::vector<std::size_t> perm(cw.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        oracle::Mat permuted(cw.size());
        for (std::size_t k = 0; k < cw.size(); ++k) {
            permuted[perm[k]] = cw[k];
        }
        const auto cb = single_level(cw);
        const auto cbp = single_level(permuted);
        for (int t = 0; t < 10; ++t) {
            const auto v64 = oracle::gaussian(1, 4, rng)[0];
            const std::vector<float> v(v64.begin(), v64.end());
            const auto code = rq_encode(v, cb).codes[0];
            c.expect(rq_encode(v, cbp).codes[0] == perm[code], "permuted codebook");
            auto later = cw;
            later.push_back(cw[code]);
            c.expect(rq_encode(v, single_level(later)).codes[0] == code, "duplicate appended");
            auto earlier = cw;
            earlier.insert(earlier.begin(), cw[code]);
            c.expect(rq_encode(v, single_level(earlier)).codes[0] == 0U, "duplicate prepended");
        }
    }
    c.note("4-point oracle over 10 seeds, 20 RQ instances, 600 metamorphic encodes");
}

// 2. efficient loss vs definition, analytic gradient vs central differences
void enmf_suite(Checks& c) {
    std::mt19937_64 rng(77);
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        const auto in = random_enmf_instance(rng);
        const double want = enmf_oracle_loss(in.model, in.observed);
        const double got = enmf_loss_efficient(in.model, in.data);
        const double rel = std::abs(got - want) / std::max(1.0, std::abs(want));
        worst = std::max(worst, rel);
        c.expect(rel <= 1e-6, "loss instance " + std::to_string(inst));
    }
    c.note("loss rel err " + fmt("%.1e", worst));

    constexpr double kStep = 1e-4;
    double worst_g = 0.0;
    for (int inst = 0; inst < 10; ++inst) {
        const auto in = random_enmf_instance(rng);
        const auto& m = in.model;
        std::vector<std::size_t> users(m.n_users());
        std::iota(users.begin(), users.end(), 0);
        const auto g = enmf_gradient(m, in.data, users);
        auto P = testutil::to_mat(m.P);
        auto Q = testutil::to_mat(m.Q);
        oracle::Vec h(m.h.begin(), m.h.end());
        const auto loss = [&] { return oracle::enmf_loss(P, Q, h, m.c_neg, in.observed); };
        const auto fd = [&](double& x) {
            const double x0 = x;
            x = x0 + kStep;
            const double up = loss();
            x = x0 - kStep;
            const double down = loss();
            x = x0;
            return (up - down) / (2.0 * kStep);
        };
        const auto check = [&](double analytic, double numeric) {
            const double err = std::abs(analytic - numeric);
            worst_g = std::max(worst_g, err / std::max(1e-3, std::abs(numeric)));
            c.expect(err <= 1e-3 * std::abs(numeric) + 1e-6, "gradient entry");
        };
        const std::size_t d = h.size();
        for (std::size_t u = 0; u < P.size(); ++u) {
            for (std::size_t k = 0; k < d; ++k) {
                check(g.dP[u * d + k], fd(P[u][k]));
            }
        }
        for (std::size_t i = 0; i < Q.size(); ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                check(g.dQ[i * d + k], fd(Q[i][k]));
            }
        }
        for (std::size_t k = 0; k < d; ++k) {
            check(g.dh[k], fd(h[k]));
        }
    }
    c.note("gradient rel err " + fmt("%.1e", worst_g));
}

// 3. reconstruction error equals the discarded Gram eigenvalues
void svd_suite(Checks& c) {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
        const std::size_t n = 5 + rng() % 46;
        const std::size_t d = 2 + rng() % 7;
        const std::size_t k = 1 + rng() % (d - 1);
        const auto m = emb(oracle::gaussian(n, d, rng));
        const auto p = fit_truncated_svd(m, k);
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto back = p.back_project(p.project(m.row(i)));
            for (std::size_t j = 0; j < d; ++j) {
                const double e = static_cast<double>(m.data(i, j)) - back[j];
                err += e * e;
            }
        }
        oracle::Vec vals;
        oracle::Mat vecs;
        oracle::jacobi_eigen(oracle::gram(testutil::to_mat(m.data)), vals, vecs);
        const double discarded = std::accumulate(vals.begin() + static_cast<std::ptrdiff_t>(k), vals.end(), 0.0);
        const double rel = std::abs(err - discarded) / discarded;
        worst = std::max(worst, rel);
        c.expect(rel <= 1e-4, "instance " + std::to_string(inst));
    }
    c.note("max rel err " + fmt("%.1e", worst));
}

void expect_ranking(Checks& c, const std::vector<Hit>& hits, const std::vector<std::pair<std::size_t, double>>& want,
                    int inst) {
    c.expect(hits.size() == want.size(), "length, instance " + std::to_string(inst));
    for (std::size_t r = 0; r < std::min(hits.size(), want.size()); ++r) {
        c.expect(hits[r].item == want[r].first &&
                         near(hits[r].score, want[r].second, 1e-6 * std::max(1.0, std::abs(want[r].second))),
                 "instance " + std::to_string(inst) + " rank " + std::to_string(r));
    }
}

// 4. B >= n, G = 1, lambda = 0 reproduces the exhaustive path-score ranking
void decoder_exactness(Checks& c) {
    std::mt19937_64 rng(2718);
    std::size_t max_n = 0;
    for (int inst = 0; inst < 10; ++inst) {
        const std::size_t n = 20 + rng() % 481;
        max_n = std::max(max_n, n);
        const bool chained = inst % 2 == 1;
        const auto in = chained ? chained_instance(rng, n, inst % 4 == 3)
                                : plain_instance(rng, n, 1 + rng() % 3, 3 + rng() % 10);
        std::set<std::size_t> excluded;
        if (chained) {
            for (int k = 0; k < 5; ++k) {
                excluded.insert(rng() % n);
            }
        }
        const std::vector<std::size_t> ex(excluded.begin(), excluded.end());
        const ResidualScorer scorer(in.ctx, in.plan);
        expect_ranking(c, diverse_beam_search(in.trie, exhaustive_config(n), scorer, ex),
                       exhaustive_ranking(in, excluded), inst);
    }
    c.note("10 instances, n <= " + std::to_string(max_n));
}

// 5. G = 1 or lambda = 0 equals plain beam search; huge lambda spreads first tokens
void diverse_degeneracies(Checks& c) {
    std::mt19937_64 rng(5);
    for (int inst = 0; inst < 20; ++inst) {
        const auto in = plain_instance(rng, 300, 2, 8);
        const ResidualScorer scorer(in.ctx, in.plan);
        DecodingConfig cfg;
        cfg.groups = 1;
        cfg.beam_width = 4 + rng() % 20;
        cfg.top_k = 1 + rng() % cfg.beam_width;
        c.expect(diverse_beam_search(in.trie, cfg, scorer) == beam_search(in.trie, cfg.beam_width, cfg.top_k, scorer),
                 "G=1, instance " + std::to_string(inst));
        cfg.groups = 2 + rng() % 5;
        cfg.beam_width = cfg.groups * (1 + rng() % 6);
        cfg.top_k = 1 + rng() % cfg.beam_width;
        cfg.diversity_penalty = 0.0;
        c.expect(diverse_beam_search(in.trie, cfg, scorer) == beam_search(in.trie, cfg.beam_width, cfg.top_k, scorer),
                 "lambda=0, instance " + std::to_string(inst));
    }
    const auto in = plain_instance(rng, 2000, 2, 64);
    c.expect(in.trie.root().children.size() >= 60, "root has >= 60 children");
    const ResidualScorer scorer(in.ctx, in.plan);
    for (const std::size_t width : {1, 2}) {
        DecodingConfig cfg;
        cfg.groups = 30;
        cfg.beam_width = 30 * width;
        cfg.diversity_penalty = 1e6;
        DecodeTrace trace;
        diverse_beam_search(in.trie, cfg, scorer, {}, &trace);
        std::set<Token> first;
        std::size_t picks = 0;
        for (const auto& group : trace.steps.at(0)) {
            for (const auto node : group) {
                first.insert(in.trie.node(node).token);
                ++picks;
            }
        }
        c.expect(picks == cfg.beam_width && first.size() == picks,
                 "distinct first tokens, width " + std::to_string(width));
    }
    c.note("40 degenerate configs match beam search, G=30 distinct first tokens at widths 1 and 2");
}

// 6. 512 / 1024 / 768 code tokens read from the vocabulary
void token_budgets(Checks& c) {
    std::mt19937_64 rng(1);
    const auto search = emb(oracle::gaussian(700, 8, rng));
    const auto rec = emb(oracle::gaussian(700, 6, rng));
    const auto fused = emb(oracle::gaussian(700, 8, rng));
    const auto fs = rq_fit_detailed(search, 2, 256, 30, 1);
    const auto fr = rq_fit_detailed(rec, 2, 256, 30, 2);
    const auto single = build_task_specific(fs.codebooks, fs.codes, 700);
    const auto separate = build_separate(fs.codebooks, fs.codes, fr.codebooks, fr.codes, 700);
    const auto prefix = build_prefix_share(fused, search, rec, 256, 30, 3).first;
    c.expect(single.vocab.code_budget() == 512U, "single space " + std::to_string(single.vocab.code_budget()));
    c.expect(separate.vocab.code_budget() == 1024U, "separate " + std::to_string(separate.vocab.code_budget()));
    c.expect(prefix.vocab.code_budget() == 768U, "prefix-share " + std::to_string(prefix.vocab.code_budget()));
    c.expect(prefix.vocab.count(Namespace::SHARED) == 256U, "prefix-share shared tokens");
    c.note("single " + std::to_string(single.vocab.code_budget()) + ", separate " +
           std::to_string(separate.vocab.code_budget()) + ", prefix-share " +
           std::to_string(prefix.vocab.code_budget()));
}

// 7 and 8 share one run on the default synthetic dataset.
struct GridRun {
    ExperimentReport report;
    double seconds = 0.0;
};

GridRun default_grid(std::size_t workers) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto ds = synth_generate(SynthParams{}, workers);
    ExperimentConfig cfg;
    cfg.strategies = {"search", "rec", "multitask", "fused_svd"};
    cfg.workers = workers;
    GridRun g{run_experiment(ds.data, cfg), 0.0};
    g.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return g;
}

void table1_direction(Checks& c, const GridRun& g) {
    const auto& r = g.report;
    const auto v = [&](const std::string& s, const std::string& task, std::size_t k) {
        return r.at(s, task).per_seed[k];
    };
    const std::size_t seeds = r.seeds.size();
    c.expect(seeds == 5, "five seeds");
    std::map<std::string, std::size_t> wins;
    for (std::size_t k = 0; k < seeds; ++k) {
        wins["search>rec on search"] += v("search", "search", k) > v("rec", "search", k);
        wins["rec>search on rec"] += v("rec", "rec", k) > v("search", "rec", k);
        for (const std::string m : {"multitask", "fused_svd"}) {
            wins[m + " between on search"] +=
                    v("rec", "search", k) < v(m, "search", k) && v(m, "search", k) < v("search", "search", k);
            wins[m + " between on rec"] += v("search", "rec", k) < v(m, "rec", k) && v(m, "rec", k) < v("rec", "rec", k);
        }
    }
    for (const auto& [what, n] : wins) {
        c.expect(n >= 4, what + " in " + std::to_string(n) + "/5 seeds");
    }
    const std::size_t pairs = r.strategies.size() * (r.strategies.size() - 1) / 2;
    for (const auto& task : task_names()) {
        const auto& tests = r.significance.at(task).at("all");
        c.expect(tests.size() == pairs, task + " has every strategy pair");
        for (const auto& t : tests) {
            c.expect(t.p_adjusted == std::min(1.0, static_cast<double>(pairs) * t.test.p) &&
                             t.significant == (t.p_adjusted < 0.05),
                     "Bonferroni on " + t.a + "/" + t.b);
        }
    }
    c.expect(g.seconds < 600.0, "runtime " + fmt("%.0f s", g.seconds));
    std::size_t min_wins = 5;
    for (const auto& [what, n] : wins) {
        min_wins = std::min(min_wins, n);
    }
    c.note("search R@30 " + fmt("%.3f", r.at("search", "search").mean) + " vs rec " +
           fmt("%.3f", r.at("rec", "search").mean) + "; rec R@30 " + fmt("%.3f", r.at("rec", "rec").mean) +
           " vs search " + fmt("%.3f", r.at("search", "rec").mean) + "; every comparison >= " +
           std::to_string(min_wins) + "/5 seeds; grid " + fmt("%.0f s", g.seconds));
}

void head_torso(Checks& c, const GridRun& g) {
    const auto& head = g.report.at("rec", "rec", "head");
    const auto& torso = g.report.at("rec", "rec", "torso");
    std::size_t wins = 0;
    std::string per_seed;
    for (std::size_t k = 0; k < head.per_seed.size(); ++k) {
        wins += head.per_seed[k] > torso.per_seed[k];
        per_seed += (k ? " " : "") + fmt("%.3f", head.per_seed[k]) + "/" + fmt("%.3f", torso.per_seed[k]);
    }
    c.expect(wins >= 4, "head > torso in " + std::to_string(wins) + "/5 seeds");
    c.note("head/torso per seed " + per_seed + " (" + std::to_string(head.cases) + " head users)");
}

// 9. manifest hashes agree across runs and worker counts
void determinism(Checks& c, const std::filesystem::path& work) {
    std::vector<pipeline_run::Result> runs;
    for (const std::size_t w : {1, 1, 3}) {
        runs.push_back(pipeline_run::run_all(work / "pipeline", w));
        for (const auto& f : runs.back().failures) {
            c.expect(false, f);
        }
    }
    for (std::size_t r = 1; r < runs.size(); ++r) {
        c.expect(runs[r].manifest.size() == runs[0].manifest.size(), "stage count");
        for (std::size_t i = 0; i < std::min(runs[r].manifest.size(), runs[0].manifest.size()); ++i) {
            const auto& a = runs[0].manifest[i];
            const auto& b = runs[r].manifest[i];
            c.expect(a.dump() == b.dump(), a.at("command").get<std::string>() + " differs in run " +
                                                   std::to_string(r + 1));
        }
    }
    std::size_t outputs = 0;
    for (const auto& line : runs[0].manifest) {
        outputs += line.at("outputs").size();
    }
    c.note(std::to_string(runs[0].manifest.size()) + " stages, " + std::to_string(outputs) +
           " output hashes, workers 1/1/3");
}

// 10. t-test p-values vs numerical integration; Bonferroni
void statistics(Checks& c) {
    double worst = 0.0;
    for (const auto& d : oracle::fixed_difference_vectors()) {
        const double m = oracle::mean(d);
        double ss = 0.0;
        for (const double x : d) {
            ss += (x - m) * (x - m);
        }
        const double t = m / std::sqrt(ss / static_cast<double>(d.size() - 1)) * std::sqrt(static_cast<double>(d.size()));
        const auto r = paired_t_test(d, std::vector<double>(d.size(), 0.0));
        const double want = oracle::t_two_sided_by_integration(t, static_cast<double>(d.size() - 1));
        worst = std::max(worst, std::abs(r.p - want));
        c.expect(near(r.p, want, 1e-6), "n=" + std::to_string(d.size()));
    }
    c.note("20 vectors, max |dp| " + fmt("%.1e", worst));
    const auto adj = bonferroni(std::vector<double>{0.01, 0.5, 0.0}, 3);
    c.expect(near(adj[0], 0.03, 1e-15) && adj[1] == 1.0 && adj[2] == 0.0, "Bonferroni examples");
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 100; ++k) {
        std::vector<double> p(1 + rng() % 10);
        for (auto& x : p) {
            x = u(rng);
        }
        const auto a = bonferroni(p, p.size() + rng() % 4);
        for (std::size_t i = 0; i < p.size(); ++i) {
            c.expect(a[i] >= p[i] && a[i] <= 1.0, "Bonferroni clamp");
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string work = (std::filesystem::temp_directory_path() / "semid_acceptance").string();
    std::size_t workers = 0;
    std::vector<int> only;
    app.add_option("--work", work, "scratch directory")->capture_default_str();
    app.add_option("--workers", workers, "worker threads (0 = SEMID_THREADS or all cores)");
    app.add_option("--only", only, "run only these criteria");
    CLI11_PARSE(app, argc, argv);
    if (workers == 0) {
        workers = default_workers();
    }
    std::filesystem::create_directories(work);

    std::optional<GridRun> grid;
    const auto need_grid = [&]() -> const GridRun& {
        if (!grid) {
            grid = default_grid(workers);
        }
        return *grid;
    };

    struct Criterion {
        int id;
        std::string name;
        double limit_seconds;
        std::function<void(Checks&)> run;
    };
    const std::vector<Criterion> criteria{
            {1, "quantizer oracle suite", 10, quantizer_suite},
            {2, "ENMF loss and gradient equivalence", 30, enmf_suite},
            {3, "truncated SVD residual identity", 5, svd_suite},
            {4, "decoder matches exhaustive ranking", 30, decoder_exactness},
            {5, "diverse beam degeneracies", 0, diverse_degeneracies},
            {6, "token budgets 512 / 1024 / 768", 0, token_budgets},
            {7, "directional search/rec trade-off", 600, [&](Checks& c) { table1_direction(c, need_grid()); }},
            {8, "rec head beats torso", 0, [&](Checks& c) { head_torso(c, need_grid()); }},
            {9, "bit-identical artifacts across runs and workers", 0, [&](Checks& c) { determinism(c, work); }},
            {10, "t-test p-values and Bonferroni", 0, statistics},
    };

    int failed = 0;
    for (const auto& cr : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), cr.id) == only.end()) {
            continue;
        }
        Checks c;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            cr.run(c);
        } catch (const std::exception& e) {
            c.expect(false, std::string("exception: ") + e.what());
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (cr.limit_seconds > 0 && s > cr.limit_seconds) {
            c.expect(false, "took " + fmt("%.1f s", s) + ", limit " + fmt("%.0f s", cr.limit_seconds));
        }
        const bool ok = c.ok();
        failed += ok ? 0 : 1;
        std::cout << (ok ? "PASS" : "FAIL") << " criterion " << cr.id << ": " << cr.name << " ["
                  << fmt("%.2f s", s) << "] " << (ok ? c.notes() : c.summary()) << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
