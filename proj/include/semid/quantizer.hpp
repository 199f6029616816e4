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
#include <limits>
#include <map>

#include "semid/embedding_store.hpp"

namespace semid {

inline constexpr const char* kQuantizerStage = "quantizer";

/// Index of the nearest row of `centroids` to v and its squared distance.
/// Ties go to the lowest index.
inline std::pair<std::uint32_t, double> nearest_centroid(std::span<const float> v,
                                                         const Matrix& centroids) {
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.rows(); ++k) {
        const double dk = sq_dist(v, centroids.row(k));
        if (dk < best_d) {
            best_d = dk;
            best = static_cast<std::uint32_t>(k);
        }
    }
    return {best, best_d};
}

struct KMeansModel {
    Matrix centroids; // K x d
    double inertia = 0.0;
    std::uint64_t seed = 0;
    std::size_t requested_k = 0;
    bool clamped = false; // K was reduced to the number of points
    std::vector<std::uint32_t> assignment; // final training assignment
    std::vector<double> inertia_trace; // after every assignment step
    std::size_t iterations = 0;

    std::size_t k() const noexcept {
        return centroids.rows();
    }
};

namespace detail {

inline double assign_all(const Matrix& points, const Matrix& centroids,
                         std::vector<std::uint32_t>& assignment, std::vector<double>& dist,
                         std::size_t workers) {
    parallel_for(
            points.rows(),
            [&](std::size_t i) {
                const auto [c, d] = nearest_centroid(points.row(i), centroids);
                assignment[i] = c;
                dist[i] = d;
            },
            workers);
    double total = 0.0;
    for (const double d : dist) {
        total += d;
    }
    return total;
}

/// k-means++ seeding. When every remaining point coincides with a chosen
/// centroid, the lowest-index unchosen point is taken.
inline Matrix kmeanspp_init(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    Matrix c(k, points.cols());
    std::vector<char> chosen(n, 0);
    std::size_t first = rng.index(n);
    std::copy(points.row(first).begin(), points.row(first).end(), c.row(0).begin());
    chosen[first] = 1;
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) {
        d2[i] = sq_dist(points.row(i), c.row(0));
    }
    for (std::size_t j = 1; j < k; ++j) {
        double total = 0.0;
        for (const double x : d2) {
            total += x;
        }
        std::size_t pick = n;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (d2[i] > 0.0 && acc > target) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) { // rounding at the tail
                for (std::size_t i = n; i-- > 0;) {
                    if (d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
            }
        }
        chosen[pick] = 1;
        std::copy(points.row(pick).begin(), points.row(pick).end(), c.row(j).begin());
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist(points.row(i), c.row(j)));
        }
    }
    return c;
}

inline void update_centroids(const Matrix& points, const std::vector<std::uint32_t>& assignment,
                             Matrix& centroids, std::vector<std::size_t>& counts) {
    const std::size_t d = points.cols();
    std::vector<double> sums(centroids.rows() * d, 0.0);
    counts.assign(centroids.rows(), 0);
    for (std::size_t i = 0; i < points.rows(); ++i) {
        const auto r = points.row(i);
        const std::size_t c = assignment[i];
        ++counts[c];
        for (std::size_t j = 0; j < d; ++j) {
            sums[c * d + j] += r[j];
        }
    }
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
        if (counts[c] == 0) {
            continue;
        }
        auto dst = centroids.row(c);
        for (std::size_t j = 0; j < d; ++j) {
            dst[j] = static_cast<float>(sums[c * d + j] / static_cast<double>(counts[c]));
        }
    }
}

} // namespace detail

/// Lloyd's k-means with k-means++ seeding. Stops at an assignment fixpoint or
/// after max_iters. An empty cluster is re-seeded at the point farthest from
/// its current centroid.
inline KMeansModel kmeans_fit(const Matrix& points, std::size_t k, std::size_t max_iters,
                              std::uint64_t seed, std::size_t workers = 1) {
    SEMID_THROW_IF_NOT(points.rows() >= 1, Errc::empty_input, kQuantizerStage,
                       "k-means needs at least one point");
    SEMID_THROW_IF_NOT(k >= 1, Errc::out_of_range, kQuantizerStage, "K must be >= 1");
    KMeansModel m;
    m.seed = seed;
    m.requested_k = k;
    if (k > points.rows()) {
        k = points.rows();
        m.clamped = true;
    }
    Rng rng(seed);
    m.centroids = detail::kmeanspp_init(points, k, rng);

    const std::size_t n = points.rows();
    std::vector<std::uint32_t> assign(n, 0);
    std::vector<double> dist(n, 0.0);
    double inertia = detail::assign_all(points, m.centroids, assign, dist, workers);
    m.inertia_trace.push_back(inertia);
    std::vector<std::size_t> counts;
    for (std::size_t it = 0; it < max_iters; ++it) {
        detail::update_centroids(points, assign, m.centroids, counts);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) {
                continue;
            }
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double di = sq_dist(points.row(i), m.centroids.row(assign[i]));
                if (di > far_d) {
                    far_d = di;
                    far = i;
                }
            }
            if (far_d <= 0.0) {
                break; // every point sits on a centroid
            }
            std::copy(points.row(far).begin(), points.row(far).end(), m.centroids.row(c).begin());
            assign[far] = static_cast<std::uint32_t>(c);
        }
        std::vector<std::uint32_t> next(n, 0);
        inertia = detail::assign_all(points, m.centroids, next, dist, workers);
        m.inertia_trace.push_back(inertia);
        ++m.iterations;
        const bool stable = next == assign;
        assign = std::move(next);
        if (stable) {
            break;
        }
    }
    m.assignment = std::move(assign);
    m.inertia = inertia;
    return m;
}

// ---------------------------------------------------------------------------
// Residual quantization

enum class QuantizerKind { rq_kmeans, residual_lfq };

inline const char* quantizer_kind_name(QuantizerKind k) {
    return k == QuantizerKind::rq_kmeans ? "rq_kmeans" : "residual_lfq";
}

inline QuantizerKind parse_quantizer_kind(const std::string& s) {
    if (s == "rq_kmeans") {
        return QuantizerKind::rq_kmeans;
    }
    if (s == "residual_lfq") {
        return QuantizerKind::residual_lfq;
    }
    throw Error(Errc::invalid_config, kQuantizerStage,
                "quantizer kind must be rq_kmeans|residual_lfq, got '" + s + "'");
}

/// Bits of an LFQ token: at most this many leading dimensions.
inline constexpr std::size_t kLfqMaxWidth = 16;

struct RQCodebooks {
    QuantizerKind kind = QuantizerKind::rq_kmeans;
    std::size_t d = 0;
    std::uint64_t seed = 0;
    std::vector<Matrix> levels; // rq_kmeans: K_l x d centroids
    std::vector<float> scales; // residual_lfq: one per level
    std::vector<double> level_mse; // cumulative train MSE after each level

    std::size_t n_levels() const noexcept {
        return kind == QuantizerKind::rq_kmeans ? levels.size() : scales.size();
    }

    std::size_t lfq_width() const noexcept {
        return std::min(d, kLfqMaxWidth);
    }

    std::size_t level_size(std::size_t l) const {
        if (kind == QuantizerKind::rq_kmeans) {
            return levels.at(l).rows();
        }
        return std::size_t{1} << lfq_width();
    }

    std::size_t total_codewords() const {
        std::size_t s = 0;
        for (std::size_t l = 0; l < n_levels(); ++l) {
            s += level_size(l);
        }
        return s;
    }

    /// Codeword vector for `code` at level l. For LFQ the token only fixes the
    /// signs of the first lfq_width() dimensions; the rest are zero.
    std::vector<float> codeword(std::size_t l, std::uint32_t code) const {
        SEMID_THROW_IF_NOT(l < n_levels(), Errc::out_of_range, kQuantizerStage,
                           "level " + std::to_string(l) + " out of range");
        SEMID_THROW_IF_NOT(code < level_size(l), Errc::out_of_range, kQuantizerStage,
                           "code " + std::to_string(code) + " out of range at level " +
                                   std::to_string(l));
        if (kind == QuantizerKind::rq_kmeans) {
            const auto r = levels[l].row(code);
            return {r.begin(), r.end()};
        }
        std::vector<float> out(d, 0.0F);
        for (std::size_t j = 0; j < lfq_width(); ++j) {
            out[j] = ((code >> j) & 1U) ? scales[l] : -scales[l];
        }
        return out;
    }
};

struct CodeSequence {
    std::vector<std::uint32_t> codes;
    auto operator<=>(const CodeSequence&) const = default;
};

namespace detail {

/// Applies one level to `residual` in place and returns the code.
inline std::uint32_t encode_level(std::span<float> residual, const RQCodebooks& cb,
                                  std::size_t l) {
    if (cb.kind == QuantizerKind::rq_kmeans) {
        const auto code = nearest_centroid(residual, cb.levels[l]).first;
        const auto c = cb.levels[l].row(code);
        for (std::size_t j = 0; j < residual.size(); ++j) {
            residual[j] -= c[j];
        }
        return code;
    }
    const float s = cb.scales[l];
    std::uint32_t code = 0;
    for (std::size_t j = 0; j < residual.size(); ++j) {
        const bool pos = residual[j] >= 0.0F;
        if (pos && j < cb.lfq_width()) {
            code |= (1U << j);
        }
        residual[j] -= pos ? s : -s;
    }
    return code;
}

inline double mean_sq_norm(const Matrix& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        s += sq_norm(m.row(i));
    }
    return m.rows() == 0 ? 0.0 : s / static_cast<double>(m.rows());
}

} // namespace detail

/// Greedy residual encoding: at each level, nearest codeword (lowest index on
/// ties), subtract, continue.
inline CodeSequence rq_encode(std::span<const float> v, const RQCodebooks& cb) {
    SEMID_THROW_IF_NOT(v.size() == cb.d, Errc::dimension_mismatch, kQuantizerStage,
                       "vector dim " + std::to_string(v.size()) + " vs codebook dim " +
                               std::to_string(cb.d));
    std::vector<float> residual(v.begin(), v.end());
    CodeSequence out;
    out.codes.reserve(cb.n_levels());
    for (std::size_t l = 0; l < cb.n_levels(); ++l) {
        out.codes.push_back(detail::encode_level(residual, cb, l));
    }
    return out;
}

inline std::vector<float> rq_decode(const CodeSequence& codes, const RQCodebooks& cb) {
    SEMID_THROW_IF_NOT(codes.codes.size() == cb.n_levels(), Errc::out_of_range, kQuantizerStage,
                       "code sequence length does not match level count");
    std::vector<double> acc(cb.d, 0.0);
    for (std::size_t l = 0; l < cb.n_levels(); ++l) {
        const auto c = cb.codeword(l, codes.codes[l]);
        for (std::size_t j = 0; j < cb.d; ++j) {
            acc[j] += c[j];
        }
    }
    return {acc.begin(), acc.end()};
}

/// Codebooks plus what fitting produced for the training rows.
struct RqFit {
    RQCodebooks codebooks;
    std::vector<CodeSequence> codes;
    std::vector<double> row_sq_error; // ||row - residual reconstruction||^2 at fit time
};

inline RqFit rq_fit_detailed(const EmbeddingMatrix& m, std::size_t n_levels, std::size_t k,
                             std::size_t max_iters, std::uint64_t seed, std::size_t workers = 1) {
    SEMID_THROW_IF_NOT(m.rows() >= 1, Errc::empty_input, kQuantizerStage,
                       "RQ needs at least one row");
    SEMID_THROW_IF_NOT(n_levels >= 1 && k >= 1, Errc::out_of_range, kQuantizerStage,
                       "L and K must be >= 1");
    RqFit fit;
    fit.codebooks.kind = QuantizerKind::rq_kmeans;
    fit.codebooks.d = m.dim();
    fit.codebooks.seed = seed;
    fit.codes.assign(m.rows(), CodeSequence{});
    Matrix residual = m.data;
    for (std::size_t l = 0; l < n_levels; ++l) {
        KMeansModel km = kmeans_fit(residual, k, max_iters, derive_seed(seed, l), workers);
        fit.codebooks.levels.push_back(std::move(km.centroids));
        parallel_for(
                residual.rows(),
                [&](std::size_t i) {
                    fit.codes[i].codes.push_back(
                            detail::encode_level(residual.row(i), fit.codebooks, l));
                },
                workers);
        fit.codebooks.level_mse.push_back(detail::mean_sq_norm(residual));
    }
    fit.row_sq_error.resize(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        fit.row_sq_error[i] = sq_norm(residual.row(i));
    }
    return fit;
}

inline RQCodebooks rq_fit(const EmbeddingMatrix& m, std::size_t n_levels, std::size_t k,
                          std::size_t max_iters, std::uint64_t seed, std::size_t workers = 1) {
    return rq_fit_detailed(m, n_levels, k, max_iters, seed, workers).codebooks;
}

/// Residual lookup-free quantization. Level scale = mean |residual entry|.
inline RqFit rlfq_fit_detailed(const EmbeddingMatrix& m, std::size_t n_levels) {
    SEMID_THROW_IF_NOT(m.rows() >= 1, Errc::empty_input, kQuantizerStage,
                       "LFQ needs at least one row");
    SEMID_THROW_IF_NOT(n_levels >= 1, Errc::out_of_range, kQuantizerStage, "L must be >= 1");
    RqFit fit;
    fit.codebooks.kind = QuantizerKind::residual_lfq;
    fit.codebooks.d = m.dim();
    fit.codes.assign(m.rows(), CodeSequence{});
    Matrix residual = m.data;
    for (std::size_t l = 0; l < n_levels; ++l) {
        double abs_sum = 0.0;
        for (const float x : residual.values()) {
            abs_sum += std::abs(static_cast<double>(x));
        }
        const auto total = static_cast<double>(residual.values().size());
        fit.codebooks.scales.push_back(static_cast<float>(abs_sum / total));
        for (std::size_t i = 0; i < residual.rows(); ++i) {
            fit.codes[i].codes.push_back(detail::encode_level(residual.row(i), fit.codebooks, l));
        }
        fit.codebooks.level_mse.push_back(detail::mean_sq_norm(residual));
    }
    fit.row_sq_error.resize(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        fit.row_sq_error[i] = sq_norm(residual.row(i));
    }
    return fit;
}

inline RQCodebooks rlfq_fit(const EmbeddingMatrix& m, std::size_t n_levels) {
    return rlfq_fit_detailed(m, n_levels).codebooks;
}

/// One code sequence plus its collision suffix.
struct DisambiguatedCode {
    CodeSequence codes;
    std::uint32_t suffix = 0;
};

/// Items sharing a code sequence get suffixes 0, 1, 2, ... in input order.
inline std::vector<DisambiguatedCode> disambiguate(const std::vector<CodeSequence>& raw) {
    std::map<CodeSequence, std::uint32_t> seen;
    std::vector<DisambiguatedCode> out;
    out.reserve(raw.size());
    for (const auto& c : raw) {
        auto& n = seen[c];
        out.push_back({c, n++});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline void save_codebooks(const std::filesystem::path& path, const RQCodebooks& cb) {
    json ks = json::array();
    for (std::size_t l = 0; l < cb.n_levels(); ++l) {
        ks.push_back(cb.level_size(l));
    }
    json header{{"kind", quantizer_kind_name(cb.kind)},
                {"L", cb.n_levels()},
                {"K", ks},
                {"d", cb.d},
                {"seed", cb.seed},
                {"scales", cb.scales},
                {"level_mse", cb.level_mse}};
    std::vector<std::span<const float>> blocks;
    for (const auto& lv : cb.levels) {
        blocks.emplace_back(lv.values());
    }
    write_blob(path, header, blocks);
}

inline RQCodebooks load_codebooks(const std::filesystem::path& path) {
    Blob b = read_blob(path);
    RQCodebooks cb;
    cb.kind = parse_quantizer_kind(b.header.at("kind").get<std::string>());
    cb.d = b.header.at("d").get<std::size_t>();
    cb.seed = b.header.at("seed").get<std::uint64_t>();
    cb.scales = b.header.at("scales").get<std::vector<float>>();
    cb.level_mse = b.header.at("level_mse").get<std::vector<double>>();
    if (cb.kind == QuantizerKind::rq_kmeans) {
        for (const auto k : b.header.at("K").get<std::vector<std::size_t>>()) {
            cb.levels.emplace_back(k, cb.d, b.take(k * cb.d));
        }
    }
    b.expect_consumed();
    return cb;
}

/// Codes file: item_id, space-separated level tokens, suffix.
inline void save_codes(const std::filesystem::path& path, const Catalog& catalog,
                       const std::vector<DisambiguatedCode>& codes) {
    SEMID_THROW_IF_NOT(codes.size() == catalog.size(), Errc::shape_mismatch, kQuantizerStage,
                       "codes do not cover the catalog");
    std::string out = "item_id\tcodes\tsuffix\n";
    for (std::size_t i = 0; i < codes.size(); ++i) {
        out += catalog[i].item_id + "\t";
        for (std::size_t l = 0; l < codes[i].codes.codes.size(); ++l) {
            if (l) {
                out += " ";
            }
            out += std::to_string(codes[i].codes.codes[l]);
        }
        out += "\t" + std::to_string(codes[i].suffix) + "\n";
    }
    write_text_file(path, out);
}

inline std::vector<DisambiguatedCode> load_codes(const std::filesystem::path& path,
                                                 const Catalog& catalog) {
    const Tsv t = read_tsv(path);
    const auto c_id = t.column("item_id");
    const auto c_codes = t.column("codes");
    const auto c_suffix = t.column("suffix");
    std::vector<DisambiguatedCode> out(catalog.size());
    std::vector<char> seen(catalog.size(), 0);
    for (const auto& r : t.rows) {
        const std::size_t i = catalog.at(r[c_id]);
        SEMID_THROW_IF_NOT(!seen[i], Errc::duplicate_item, kQuantizerStage,
                           "duplicate item in codes file: " + r[c_id]);
        seen[i] = 1;
        for (const auto& tok : split(r[c_codes], ' ')) {
            out[i].codes.codes.push_back(static_cast<std::uint32_t>(parse_int(tok, "code")));
        }
        out[i].suffix = static_cast<std::uint32_t>(parse_int(r[c_suffix], "suffix"));
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        SEMID_THROW_IF_NOT(seen[i], Errc::missing_item, kQuantizerStage,
                           "codes file misses item " + catalog[i].item_id);
    }
    return out;
}

} // namespace semid
