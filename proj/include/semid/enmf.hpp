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

// Efficient Neural Matrix Factorization over implicit feedback.
//
// Prediction:  r(u,i) = sum_k h_k P_uk Q_ik
// Loss:        sum_u sum_i w_ui (r_ui - r(u,i))^2,  r_ui = 1 on observed train
//              pairs and 0 elsewhere, w_ui = 1 on observed pairs, c_neg elsewhere.
//
// The whole-data loss is never materialized. It is rewritten as
//
//   c_neg * sum_{k,m} h_k h_m (P^T P)_km (Q^T Q)_km
//     + sum_{(u,i) observed} [(1 - c_neg) r^2 - 2 r + 1]
//
// which costs O(|R| d + (n_users + n_items) d^2).

#include <filesystem>

#include "semid/embedding_store.hpp"

namespace semid {

inline constexpr const char* kEnmfStage = "enmf";

struct EnmfModel {
    Matrix P; // n_users x d
    Matrix Q; // n_items x d
    std::vector<float> h; // d
    double c_neg = 0.1;
    std::uint64_t seed = 0;

    std::size_t d() const noexcept {
        return h.size();
    }
    std::size_t n_users() const noexcept {
        return P.rows();
    }
    std::size_t n_items() const noexcept {
        return Q.rows();
    }

    double predict(std::size_t u, std::size_t i) const {
        const auto p = P.row(u);
        const auto q = Q.row(i);
        double s = 0.0;
        for (std::size_t k = 0; k < h.size(); ++k) {
            s += static_cast<double>(h[k]) * p[k] * q[k];
        }
        return s;
    }
};

/// Observed train pairs with the model dimensions they refer to.
struct EnmfData {
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs; // sorted, distinct
    std::vector<std::size_t> user_begin; // CSR offsets into pairs, n_users + 1

    static EnmfData from_pairs(std::size_t n_users, std::size_t n_items,
                               std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs) {
        std::sort(pairs.begin(), pairs.end());
        pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
        EnmfData d{n_users, n_items, std::move(pairs), {}};
        d.user_begin.assign(n_users + 1, 0);
        for (const auto& [u, i] : d.pairs) {
            SEMID_THROW_IF_NOT(u < n_users && i < n_items, Errc::dimension_mismatch, kEnmfStage,
                               "interaction pair out of range");
            ++d.user_begin[u + 1];
        }
        for (std::size_t u = 0; u < n_users; ++u) {
            d.user_begin[u + 1] += d.user_begin[u];
        }
        return d;
    }

    static EnmfData from_log(const InteractionLog& log) {
        return from_pairs(log.n_users(), log.n_items(), log.train_pairs());
    }
};

namespace detail {

inline void check_dims(const EnmfModel& m, const EnmfData& data) {
    SEMID_THROW_IF_NOT(m.n_users() == data.n_users && m.n_items() == data.n_items &&
                               m.P.cols() == m.d() && m.Q.cols() == m.d(),
                       Errc::dimension_mismatch, kEnmfStage,
                       "model dimensions do not match interaction data");
}

// Users are processed in fixed blocks so that every reduction has the same
// summation order for any worker count.
inline constexpr std::size_t kUserBlock = 64;

/// Row-sum of x_r x_r^T over the given rows of m, as a dense d x d matrix.
template <typename RowIter>
std::vector<double> outer_sum(const Matrix& m, RowIter begin, RowIter end, std::size_t workers) {
    const std::size_t d = m.cols();
    const std::size_t n = static_cast<std::size_t>(end - begin);
    const std::size_t nblocks = (n + kUserBlock - 1) / kUserBlock;
    std::vector<std::vector<double>> partial(nblocks, std::vector<double>(d * d, 0.0));
    parallel_for(
            nblocks,
            [&](std::size_t b) {
                auto& acc = partial[b];
                const std::size_t lo = b * kUserBlock;
                const std::size_t hi = std::min(n, lo + kUserBlock);
                for (std::size_t t = lo; t < hi; ++t) {
                    const auto r = m.row(static_cast<std::size_t>(*(begin + static_cast<std::ptrdiff_t>(t))));
                    for (std::size_t a = 0; a < d; ++a) {
                        const double ra = r[a];
                        for (std::size_t c = 0; c < d; ++c) {
                            acc[a * d + c] += ra * r[c];
                        }
                    }
                }
            },
            workers);
    std::vector<double> out(d * d, 0.0);
    for (const auto& p : partial) {
        for (std::size_t k = 0; k < out.size(); ++k) {
            out[k] += p[k];
        }
    }
    return out;
}

inline std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = i;
    }
    return v;
}

} // namespace detail

/// Direct O(n_users * n_items * d) evaluation. Test oracle only.
inline double enmf_loss_naive(const EnmfModel& m, const EnmfData& data) {
    detail::check_dims(m, data);
    double loss = 0.0;
    std::size_t k = 0;
    for (std::size_t u = 0; u < data.n_users; ++u) {
        for (std::size_t i = 0; i < data.n_items; ++i) {
            const bool observed = k < data.pairs.size() && data.pairs[k].first == u &&
                    data.pairs[k].second == i;
            if (observed) {
                ++k;
            }
            const double r = observed ? 1.0 : 0.0;
            const double w = observed ? 1.0 : m.c_neg;
            const double e = r - m.predict(u, i);
            loss += w * e * e;
        }
    }
    return loss;
}

inline double enmf_loss_naive(const EnmfModel& m, const InteractionLog& log) {
    return enmf_loss_naive(m, EnmfData::from_log(log));
}

inline double enmf_loss_efficient(const EnmfModel& m, const EnmfData& data,
                                  std::size_t workers = 1) {
    detail::check_dims(m, data);
    const std::size_t d = m.d();
    const auto users = detail::iota(data.n_users);
    const auto items = detail::iota(data.n_items);
    const auto sp = detail::outer_sum(m.P, users.begin(), users.end(), workers);
    const auto sq = detail::outer_sum(m.Q, items.begin(), items.end(), workers);
    double all = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t c = 0; c < d; ++c) {
            all += static_cast<double>(m.h[a]) * m.h[c] * sp[a * d + c] * sq[a * d + c];
        }
    }
    double observed = 0.0;
    for (const auto& [u, i] : data.pairs) {
        const double r = m.predict(u, i);
        observed += (1.0 - m.c_neg) * r * r - 2.0 * r + 1.0;
    }
    return m.c_neg * all + observed;
}

inline double enmf_loss_efficient(const EnmfModel& m, const InteractionLog& log) {
    return enmf_loss_efficient(m, EnmfData::from_log(log));
}

/// Gradients, row-major and in 64-bit precision.
struct EnmfGradient {
    std::vector<double> dP; // n_users x d
    std::vector<double> dQ; // n_items x d
    std::vector<double> dh;
};

/// Gradient of the efficient loss restricted to `users` (all of them gives the
/// full-loss gradient). Rows of dP outside `users` stay zero.
inline EnmfGradient enmf_gradient(const EnmfModel& m, const EnmfData& data,
                                  const std::vector<std::size_t>& users, std::size_t workers = 1) {
    detail::check_dims(m, data);
    const std::size_t d = m.d();
    const double c0 = m.c_neg;
    const auto items = detail::iota(data.n_items);
    const auto sp = detail::outer_sum(m.P, users.begin(), users.end(), workers);
    const auto sq = detail::outer_sum(m.Q, items.begin(), items.end(), workers);

    // W_q = (h h^T) o Sq, W_p = (h h^T) o Sp
    std::vector<double> wq(d * d);
    std::vector<double> wp(d * d);
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t c = 0; c < d; ++c) {
            const double hh = static_cast<double>(m.h[a]) * m.h[c];
            wq[a * d + c] = hh * sq[a * d + c];
            wp[a * d + c] = hh * sp[a * d + c];
        }
    }

    EnmfGradient g{std::vector<double>(m.n_users() * d, 0.0), {}, std::vector<double>(d, 0.0)};
    for (std::size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            s += static_cast<double>(m.h[c]) * sp[a * d + c] * sq[a * d + c];
        }
        g.dh[a] = 2.0 * c0 * s;
    }

    // Observed-pair terms, accumulated per user block and reduced in block order.
    const std::size_t nblocks = (users.size() + detail::kUserBlock - 1) / detail::kUserBlock;
    struct Partial {
        std::vector<std::pair<std::uint32_t, std::vector<double>>> dq; // item -> grad
        std::vector<double> dh;
    };
    std::vector<Partial> partial(nblocks);
    parallel_for(
            nblocks,
            [&](std::size_t b) {
                Partial& part = partial[b];
                part.dh.assign(d, 0.0);
                const std::size_t lo = b * detail::kUserBlock;
                const std::size_t hi = std::min(users.size(), lo + detail::kUserBlock);
                std::vector<double> dp(d);
                for (std::size_t t = lo; t < hi; ++t) {
                    const std::size_t u = users[t];
                    const auto pu = m.P.row(u);
                    for (std::size_t a = 0; a < d; ++a) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < d; ++c) {
                            s += wq[a * d + c] * pu[c];
                        }
                        dp[a] = 2.0 * c0 * s;
                    }
                    for (std::size_t k = data.user_begin[u]; k < data.user_begin[u + 1]; ++k) {
                        const std::uint32_t i = data.pairs[k].second;
                        const auto qi = m.Q.row(i);
                        const double r = m.predict(u, i);
                        const double fprime = 2.0 * (1.0 - c0) * r - 2.0;
                        std::vector<double> gq(d);
                        for (std::size_t a = 0; a < d; ++a) {
                            dp[a] += fprime * m.h[a] * qi[a];
                            gq[a] = fprime * m.h[a] * pu[a];
                            part.dh[a] += fprime * static_cast<double>(pu[a]) * qi[a];
                        }
                        part.dq.emplace_back(i, std::move(gq));
                    }
                    std::copy(dp.begin(), dp.end(), g.dP.begin() + static_cast<std::ptrdiff_t>(u * d));
                }
            },
            workers);

    std::vector<double> dq(m.n_items() * d, 0.0);
    for (std::size_t i = 0; i < m.n_items(); ++i) {
        const auto qi = m.Q.row(i);
        for (std::size_t a = 0; a < d; ++a) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                s += wp[a * d + c] * qi[c];
            }
            dq[i * d + a] = 2.0 * c0 * s;
        }
    }
    for (const auto& part : partial) {
        for (const auto& [i, gq] : part.dq) {
            for (std::size_t a = 0; a < d; ++a) {
                dq[i * d + a] += gq[a];
            }
        }
        for (std::size_t a = 0; a < d; ++a) {
            g.dh[a] += part.dh[a];
        }
    }
    g.dQ = std::move(dq);
    return g;
}

enum class EnmfOptimizer { gd, adam };

struct EnmfConfig {
    std::size_t d = 256;
    std::size_t epochs = 30;
    double lr = 0.001;
    double c_neg = 0.1;
    std::size_t batch_users = 512;
    std::uint64_t seed = 0;
    EnmfOptimizer optimizer = EnmfOptimizer::gd;
    std::size_t workers = 1;
};

/// Factors ~ U(-0.01, 0.01) from the seed; h starts at 1.
inline EnmfModel enmf_init(std::size_t n_users, std::size_t n_items, std::size_t d,
                           double c_neg, std::uint64_t seed) {
    SEMID_THROW_IF_NOT(d >= 1, Errc::out_of_range, kEnmfStage, "embedding size must be >= 1");
    SEMID_THROW_IF_NOT(c_neg > 0.0 && c_neg <= 1.0, Errc::out_of_range, kEnmfStage,
                       "c_neg must lie in (0, 1]");
    EnmfModel m{Matrix(n_users, d), Matrix(n_items, d), std::vector<float>(d, 1.0F), c_neg, seed};
    Rng rng(seed);
    for (auto& x : m.P.values()) {
        x = static_cast<float>(rng.uniform(-0.01, 0.01));
    }
    for (auto& x : m.Q.values()) {
        x = static_cast<float>(rng.uniform(-0.01, 0.01));
    }
    return m;
}

namespace detail {

struct AdamState {
    std::vector<double> m1;
    std::vector<double> m2;
    std::uint64_t t = 0;
};

inline void apply_update(std::vector<float>& param, std::span<const double> grad, double lr,
                         EnmfOptimizer opt, AdamState& st, std::uint64_t step) {
    if (opt == EnmfOptimizer::gd) {
        for (std::size_t k = 0; k < param.size(); ++k) {
            param[k] = static_cast<float>(param[k] - lr * grad[k]);
        }
        return;
    }
    constexpr double b1 = 0.9;
    constexpr double b2 = 0.999;
    constexpr double eps = 1e-8;
    if (st.m1.empty()) {
        st.m1.assign(param.size(), 0.0);
        st.m2.assign(param.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t k = 0; k < param.size(); ++k) {
        st.m1[k] = b1 * st.m1[k] + (1.0 - b1) * grad[k];
        st.m2[k] = b2 * st.m2[k] + (1.0 - b2) * grad[k] * grad[k];
        const double mh = st.m1[k] / c1;
        const double vh = st.m2[k] / c2;
        param[k] = static_cast<float>(param[k] - lr * mh / (std::sqrt(vh) + eps));
    }
}

} // namespace detail

/// Mini-batch training over user blocks. Users are reshuffled each epoch from
/// the seed; items and h are updated by every batch.
inline EnmfModel train_enmf(const EnmfData& data, const EnmfConfig& cfg) {
    SEMID_THROW_IF_NOT(!data.pairs.empty(), Errc::empty_input, kEnmfStage,
                       "no train interactions");
    SEMID_THROW_IF_NOT(cfg.batch_users >= 1, Errc::out_of_range, kEnmfStage,
                       "batch_users must be >= 1");
    EnmfModel m = enmf_init(data.n_users, data.n_items, cfg.d, cfg.c_neg, cfg.seed);
    Rng rng(derive_seed(cfg.seed, 0xE17F));
    auto order = detail::iota(data.n_users);
    detail::AdamState sp;
    detail::AdamState sq;
    detail::AdamState sh;
    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_users) {
            const std::size_t hi = std::min(order.size(), lo + cfg.batch_users);
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                           order.begin() + static_cast<std::ptrdiff_t>(hi));
            std::sort(batch.begin(), batch.end());
            const EnmfGradient g = enmf_gradient(m, data, batch, cfg.workers);
            ++step;
            // Adam state for P is global; rows outside the batch see zero gradient.
            detail::apply_update(m.P.values(), g.dP, cfg.lr, cfg.optimizer, sp, step);
            detail::apply_update(m.Q.values(), g.dQ, cfg.lr, cfg.optimizer, sq, step);
            detail::apply_update(m.h, g.dh, cfg.lr, cfg.optimizer, sh, step);
        }
    }
    for (const auto& x : m.P.values()) {
        SEMID_THROW_IF_NOT(std::isfinite(x), Errc::non_finite, kEnmfStage,
                           "training diverged (non-finite user factor); lower the learning rate");
    }
    for (const auto& x : m.Q.values()) {
        SEMID_THROW_IF_NOT(std::isfinite(x), Errc::non_finite, kEnmfStage,
                           "training diverged (non-finite item factor); lower the learning rate");
    }
    return m;
}

inline EnmfModel train_enmf(const InteractionLog& log, const EnmfConfig& cfg) {
    return train_enmf(EnmfData::from_log(log), cfg);
}

/// Item factors as an embedding space. With h_scale, row_k is multiplied by h_k.
inline EmbeddingMatrix item_embeddings(const EnmfModel& m, bool h_scale = false,
                                       std::string aligned_to = {}) {
    EmbeddingMatrix out{m.Q, std::move(aligned_to), false};
    if (h_scale) {
        for (std::size_t i = 0; i < out.rows(); ++i) {
            auto r = out.data.row(i);
            for (std::size_t k = 0; k < r.size(); ++k) {
                r[k] *= m.h[k];
            }
        }
    }
    return out;
}

inline void save_enmf(const std::filesystem::path& path, const EnmfModel& m) {
    write_blob(path,
               json{{"n_users", m.n_users()},
                    {"n_items", m.n_items()},
                    {"d", m.d()},
                    {"c_neg", m.c_neg},
                    {"seed", m.seed}},
               {std::span<const float>(m.P.values()), std::span<const float>(m.Q.values()),
                std::span<const float>(m.h)});
}

inline EnmfModel load_enmf(const std::filesystem::path& path) {
    Blob b = read_blob(path);
    const auto nu = b.header.at("n_users").get<std::size_t>();
    const auto ni = b.header.at("n_items").get<std::size_t>();
    const auto d = b.header.at("d").get<std::size_t>();
    EnmfModel m;
    m.P = Matrix(nu, d, b.take(nu * d));
    m.Q = Matrix(ni, d, b.take(ni * d));
    m.h = b.take(d);
    m.c_neg = b.header.at("c_neg").get<double>();
    m.seed = b.header.at("seed").get<std::uint64_t>();
    b.expect_consumed();
    return m;
}

} // namespace semid
