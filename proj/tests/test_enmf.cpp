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

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "semid/enmf.hpp"
#include "instances.hpp"
#include "testutil.hpp"

using namespace semid;
using namespace instances;

TEST(Enmf, ZeroFactorsOnePositive) {
    auto m = enmf_init(2, 3, 4, 0.5, 1);
    std::fill(m.P.values().begin(), m.P.values().end(), 0.0F);
    std::fill(m.Q.values().begin(), m.Q.values().end(), 0.0F);
    const auto data = EnmfData::from_pairs(2, 3, {{1, 2}});
    EXPECT_DOUBLE_EQ(enmf_loss_naive(m, data), 1.0);
    EXPECT_DOUBLE_EQ(enmf_loss_efficient(m, data), 1.0);
}

TEST(Enmf, ZeroUsers) {
    const auto m = enmf_init(0, 3, 2, 0.1, 1);
    const auto data = EnmfData::from_pairs(0, 3, {});
    EXPECT_EQ(enmf_loss_naive(m, data), 0.0);
    EXPECT_EQ(enmf_loss_efficient(m, data), 0.0);
}

TEST(Enmf, HandComputedTwoByTwo) {
    auto m = enmf_init(2, 2, 1, 0.5, 1);
    m.P(0, 0) = 1.0F;
    m.P(1, 0) = 2.0F;
    m.Q(0, 0) = 0.5F;
    m.Q(1, 0) = -1.0F;
    m.h[0] = 2.0F;
    // r: (0,0)=1 (0,1)=-2 (1,0)=2 (1,1)=-4; observed (0,0) and (1,1)
    // (1-1)^2 + 0.5*4 + 0.5*4 + (1+4)^2 = 29
    const auto data = EnmfData::from_pairs(2, 2, {{0, 0}, {1, 1}});
    EXPECT_DOUBLE_EQ(enmf_loss_naive(m, data), 29.0);
    EXPECT_NEAR(enmf_loss_efficient(m, data), 29.0, 1e-12);
}

TEST(Enmf, EfficientMatchesDefinition) {
    std::mt19937_64 rng(77);
    for (int inst = 0; inst < 100; ++inst) {
        const auto in = random_enmf_instance(rng);
        const double want = enmf_oracle_loss(in.model, in.observed);
        const double got = enmf_loss_efficient(in.model, in.data);
        EXPECT_NEAR(got, want, 1e-6 * std::max(1.0, std::abs(want))) << "instance " << inst;
    }
}

TEST(Enmf, UnitWeightIsFullSquaredLoss) {
    std::mt19937_64 rng(4);
    const auto in = random_enmf_instance(rng, 1.0);
    double full = 0.0;
    for (std::size_t u = 0; u < in.data.n_users; ++u) {
        for (std::size_t i = 0; i < in.data.n_items; ++i) {
            const double r = in.observed.count({u, i}) ? 1.0 : 0.0;
            const double e = r - in.model.predict(u, i);
            full += e * e;
        }
    }
    EXPECT_NEAR(enmf_loss_efficient(in.model, in.data), full, 1e-9 * full);
}

TEST(Enmf, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(99);
    constexpr double kStep = 1e-4;
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
        const auto check = [](double analytic, double numeric) {
            EXPECT_NEAR(analytic, numeric, 1e-3 * std::abs(numeric) + 1e-6);
        };
        for (std::size_t u = 0; u < P.size(); ++u) {
            for (std::size_t k = 0; k < h.size(); ++k) {
                check(g.dP[u * h.size() + k], fd(P[u][k]));
            }
        }
        for (std::size_t i = 0; i < Q.size(); ++i) {
            for (std::size_t k = 0; k < h.size(); ++k) {
                check(g.dQ[i * h.size() + k], fd(Q[i][k]));
            }
        }
        for (std::size_t k = 0; k < h.size(); ++k) {
            check(g.dh[k], fd(h[k]));
        }
    }
}

TEST(Enmf, EpochsZeroReturnsInit) {
    const auto data = EnmfData::from_pairs(3, 4, {{0, 1}, {2, 3}});
    EnmfConfig cfg;
    cfg.d = 5;
    cfg.epochs = 0;
    cfg.seed = 12;
    const auto m = train_enmf(data, cfg);
    const auto init = enmf_init(3, 4, 5, cfg.c_neg, 12);
    EXPECT_EQ(m.P, init.P);
    EXPECT_EQ(m.Q, init.Q);
    EXPECT_EQ(m.h, init.h);
}

TEST(Enmf, TrainingIsWorkerCountInvariant) {
    std::mt19937_64 rng(8);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (std::uint32_t u = 0; u < 150; ++u) {
        for (int k = 0; k < 6; ++k) {
            pairs.emplace_back(u, static_cast<std::uint32_t>(rng() % 40));
        }
    }
    const auto data = EnmfData::from_pairs(150, 40, pairs);
    EnmfConfig cfg;
    cfg.d = 8;
    cfg.epochs = 5;
    cfg.lr = 0.01;
    cfg.batch_users = 100;
    cfg.seed = 3;
    for (const auto opt : {EnmfOptimizer::gd, EnmfOptimizer::adam}) {
        cfg.optimizer = opt;
        cfg.workers = 1;
        const auto a = train_enmf(data, cfg);
        cfg.workers = 3;
        const auto b = train_enmf(data, cfg);
        EXPECT_EQ(a.P, b.P);
        EXPECT_EQ(a.Q, b.Q);
        EXPECT_EQ(a.h, b.h);
    }
}

TEST(Enmf, TrainingLowersLoss) {
    std::mt19937_64 rng(21);
    const auto in = random_enmf_instance(rng);
    EnmfConfig cfg;
    cfg.d = 4;
    cfg.epochs = 50;
    cfg.lr = 0.01;
    cfg.seed = 2;
    const auto init = enmf_init(in.data.n_users, in.data.n_items, cfg.d, cfg.c_neg, cfg.seed);
    const auto m = train_enmf(in.data, cfg);
    EXPECT_LT(enmf_loss_efficient(m, in.data), enmf_loss_efficient(init, in.data));
}

// Two user blocks over two item blocks; block A is larger, so popularity
// favours A items and fails B users.
TEST(Enmf, BeatsPopularityOnBlockLog) {
    const auto cat = testutil::catalog(10);
    std::vector<Interaction> triples;
    for (std::size_t u = 0; u < 20; ++u) {
        const std::size_t base = u < 14 ? 0 : 5;
        for (std::size_t k = 0; k < 5; ++k) {
            const std::size_t item = base + (u + k) % 5;
            triples.push_back({"u" + std::to_string(100 + u), item, static_cast<std::int64_t>(k), Split::train});
        }
    }
    const InteractionLog log(cat, chronological_split(triples));
    EnmfConfig cfg;
    cfg.d = 8;
    cfg.epochs = 100;
    cfg.lr = 0.01;
    cfg.seed = 5;
    const auto m = train_enmf(log, cfg);
    const auto pop = log.train_popularity();

    const auto recall3 = [&](const std::function<double(std::size_t, std::size_t)>& score) {
        double hits = 0.0;
        for (std::size_t u = 0; u < log.n_users(); ++u) {
            const auto& hist = log.train_items(u);
            std::vector<std::size_t> cand;
            for (std::size_t i = 0; i < 10; ++i) {
                if (std::find(hist.begin(), hist.end(), i) == hist.end()) {
                    cand.push_back(i);
                }
            }
            std::stable_sort(cand.begin(), cand.end(),
                             [&](std::size_t a, std::size_t b) { return score(u, a) > score(u, b); });
            cand.resize(std::min<std::size_t>(3, cand.size()));
            hits += std::find(cand.begin(), cand.end(), *log.test_item(u)) != cand.end() ? 1.0 : 0.0;
        }
        return hits / static_cast<double>(log.n_users());
    };
    const double model = recall3([&](std::size_t u, std::size_t i) { return m.predict(u, i); });
    const double baseline = recall3([&](std::size_t, std::size_t i) { return static_cast<double>(pop[i]); });
    EXPECT_GT(model, baseline);
}

TEST(Enmf, ItemEmbeddings) {
    auto m = enmf_init(1, 1, 2, 0.1, 1);
    m.Q(0, 0) = 0.5F;
    m.Q(0, 1) = -0.5F;
    EXPECT_EQ(testutil::to_mat(item_embeddings(m).data)[0], (oracle::Vec{0.5, -0.5}));
    m.h = {2.0F, 1.0F};
    m.Q(0, 0) = 1.0F;
    m.Q(0, 1) = 1.0F;
    EXPECT_EQ(testutil::to_mat(item_embeddings(m, true).data)[0], (oracle::Vec{2, 1}));
}

TEST(Enmf, InitRejectsBadArguments) {
    EXPECT_SEMID_ERROR(enmf_init(1, 1, 0, 0.1, 1), Errc::out_of_range);
    EXPECT_SEMID_ERROR(enmf_init(1, 1, 2, 0.0, 1), Errc::out_of_range);
    EXPECT_SEMID_ERROR(enmf_init(1, 1, 2, 1.5, 1), Errc::out_of_range);
}

TEST(Enmf, PersistenceRoundTrip) {
    const auto dir = oracle::temp_dir("enmf_io");
    const auto m = enmf_init(4, 6, 3, 0.2, 9);
    save_enmf(dir / "m.bin", m);
    const auto back = load_enmf(dir / "m.bin");
    EXPECT_EQ(back.P, m.P);
    EXPECT_EQ(back.Q, m.Q);
    EXPECT_EQ(back.h, m.h);
    EXPECT_EQ(back.c_neg, m.c_neg);
}
