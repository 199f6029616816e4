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

// Cross-task embedding spaces built from a search space and a rec space:
//
//   concat   [normalize(a) ; normalize(b)]
//   svd_add  normalize -> reduce the wider space with truncated SVD
//            -> re-normalize the reduced side -> add
//   passthrough  an externally trained joint space, used as-is
//
// project_context() places a query or user vector that lives in only one
// of the source spaces into the fused space.

#include <Eigen/Dense>

#include <memory>

#include "semid/embedding_store.hpp"

namespace semid {

inline constexpr const char* kFusionStage = "fusion";

struct SvdProjector {
    Matrix basis; // d_in x d_out, orthonormal columns
    std::vector<double> singular_values; // d_out, non-increasing
    std::string fitted_on;

    std::size_t d_in() const noexcept {
        return basis.rows();
    }
    std::size_t d_out() const noexcept {
        return basis.cols();
    }

    std::vector<float> project(std::span<const float> v) const {
        SEMID_THROW_IF_NOT(v.size() == d_in(), Errc::dimension_mismatch, kFusionStage,
                           "projector expects dim " + std::to_string(d_in()) + ", got " +
                                   std::to_string(v.size()));
        std::vector<double> acc(d_out(), 0.0);
        for (std::size_t j = 0; j < d_in(); ++j) {
            const auto brow = basis.row(j);
            for (std::size_t k = 0; k < d_out(); ++k) {
                acc[k] += static_cast<double>(v[j]) * brow[k];
            }
        }
        return {acc.begin(), acc.end()};
    }

    EmbeddingMatrix project(const EmbeddingMatrix& m) const {
        EmbeddingMatrix out{Matrix(m.rows(), d_out()), m.aligned_to, false};
        for (std::size_t i = 0; i < m.rows(); ++i) {
            const auto p = project(m.row(i));
            std::copy(p.begin(), p.end(), out.data.row(i).begin());
        }
        return out;
    }

    std::vector<float> back_project(std::span<const float> z) const {
        std::vector<float> out(d_in());
        for (std::size_t j = 0; j < d_in(); ++j) {
            out[j] = static_cast<float>(dot(basis.row(j), z));
        }
        return out;
    }
};

/// Top-d_out right singular subspace of m via the d x d Gram matrix.
/// Each basis column is signed so its largest-magnitude entry is positive.
inline SvdProjector fit_truncated_svd(const EmbeddingMatrix& m, std::size_t d_out) {
    const std::size_t d = m.dim();
    SEMID_THROW_IF_NOT(d_out >= 1 && d_out <= d, Errc::out_of_range, kFusionStage,
                       "d_out must lie in [1, " + std::to_string(d) + "], got " +
                               std::to_string(d_out));
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d),
                                                 static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        for (std::size_t a = 0; a < d; ++a) {
            const double ra = r[a];
            for (std::size_t b = a; b < d; ++b) {
                gram(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += ra * r[b];
            }
        }
    }
    gram = gram.selfadjointView<Eigen::Upper>();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    SEMID_THROW_IF_NOT(eig.info() == Eigen::Success, Errc::internal, kFusionStage,
                       "Gram eigendecomposition failed");

    SvdProjector p;
    p.basis = Matrix(d, d_out);
    p.singular_values.resize(d_out);
    p.fitted_on = m.aligned_to;
    const auto& vals = eig.eigenvalues(); // ascending
    const auto& vecs = eig.eigenvectors();
    for (std::size_t k = 0; k < d_out; ++k) {
        const auto col = static_cast<Eigen::Index>(d - 1 - k);
        p.singular_values[k] = std::sqrt(std::max(0.0, vals(col)));
        Eigen::Index arg = 0;
        for (Eigen::Index j = 1; j < static_cast<Eigen::Index>(d); ++j) {
            if (std::abs(vecs(j, col)) > std::abs(vecs(arg, col))) {
                arg = j;
            }
        }
        const double sign = vecs(arg, col) < 0.0 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < d; ++j) {
            p.basis(j, k) = static_cast<float>(sign * vecs(static_cast<Eigen::Index>(j), col));
        }
    }
    return p;
}

inline void save_projector(const std::filesystem::path& path, const SvdProjector& p) {
    std::vector<float> sv(p.singular_values.begin(), p.singular_values.end());
    write_blob(path,
               json{{"d_in", p.d_in()}, {"d_out", p.d_out()}, {"fingerprint", p.fitted_on}},
               {std::span<const float>(p.basis.values()), std::span<const float>(sv)});
}

inline SvdProjector load_projector(const std::filesystem::path& path) {
    Blob b = read_blob(path);
    const auto d_in = b.header.at("d_in").get<std::size_t>();
    const auto d_out = b.header.at("d_out").get<std::size_t>();
    SvdProjector p;
    p.basis = Matrix(d_in, d_out, b.take(d_in * d_out));
    const auto sv = b.take(d_out);
    p.singular_values.assign(sv.begin(), sv.end());
    p.fitted_on = b.header.at("fingerprint").get<std::string>();
    b.expect_consumed();
    return p;
}

enum class FusionKind { concat, svd_add, passthrough };

inline const char* fusion_kind_name(FusionKind k) {
    switch (k) {
        case FusionKind::concat: return "concat";
        case FusionKind::svd_add: return "svd_add";
        case FusionKind::passthrough: return "passthrough";
    }
    return "?";
}

/// Which source space a context vector comes from.
enum class SourceSpace { search, rec };

enum class ReducedSide { none, search, rec };

struct FusionSpec {
    FusionKind kind = FusionKind::passthrough;
    std::size_t d_search = 0;
    std::size_t d_rec = 0;
    std::size_t target_dim = 0;
    ReducedSide reduced = ReducedSide::none;
    std::shared_ptr<const SvdProjector> projector; // set when reduced != none

    json describe() const {
        json j{{"kind", fusion_kind_name(kind)},
               {"d_search", d_search},
               {"d_rec", d_rec},
               {"target_dim", target_dim}};
        if (kind == FusionKind::svd_add) {
            j["reduced"] = reduced == ReducedSide::search ? "search"
                    : reduced == ReducedSide::rec          ? "rec"
                                                           : "none";
            j["order"] = "normalize,reduce,renormalize,add";
        }
        return j;
    }
};

namespace detail {

inline void require_same_catalog(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    SEMID_THROW_IF_NOT(a.rows() == b.rows() && a.aligned_to == b.aligned_to,
                       Errc::misaligned, kFusionStage,
                       "inputs are aligned to different catalogs");
}

} // namespace detail

inline EmbeddingMatrix fuse_concat(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    detail::require_same_catalog(a, b);
    SEMID_THROW_IF_NOT(a.normalized && b.normalized, Errc::unnormalized, kFusionStage,
                       "fuse_concat needs l2-normalized inputs");
    EmbeddingMatrix out{Matrix(a.rows(), a.dim() + b.dim()), a.aligned_to, false};
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.data.row(i);
        std::copy(a.row(i).begin(), a.row(i).end(), dst.begin());
        std::copy(b.row(i).begin(), b.row(i).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.dim()));
    }
    return out;
}

inline FusionSpec concat_spec(std::size_t d_search, std::size_t d_rec) {
    FusionSpec s;
    s.kind = FusionKind::concat;
    s.d_search = d_search;
    s.d_rec = d_rec;
    s.target_dim = d_search + d_rec;
    return s;
}

inline FusionSpec passthrough_spec(std::size_t dim) {
    FusionSpec s;
    s.kind = FusionKind::passthrough;
    s.d_search = dim;
    s.d_rec = dim;
    s.target_dim = dim;
    return s;
}

/// Fused_SVD. `a` is the search-side space, `b` the rec-side space.
inline std::pair<EmbeddingMatrix, FusionSpec> fuse_svd_add(const EmbeddingMatrix& a,
                                                           const EmbeddingMatrix& b) {
    detail::require_same_catalog(a, b);
    EmbeddingMatrix an = a.normalized ? a : l2_normalize(a);
    EmbeddingMatrix bn = b.normalized ? b : l2_normalize(b);

    FusionSpec spec;
    spec.kind = FusionKind::svd_add;
    spec.d_search = a.dim();
    spec.d_rec = b.dim();
    spec.target_dim = std::min(a.dim(), b.dim());
    if (a.dim() > b.dim()) {
        auto proj = std::make_shared<SvdProjector>(fit_truncated_svd(an, spec.target_dim));
        an = l2_normalize(proj->project(an));
        spec.reduced = ReducedSide::search;
        spec.projector = std::move(proj);
    } else if (b.dim() > a.dim()) {
        auto proj = std::make_shared<SvdProjector>(fit_truncated_svd(bn, spec.target_dim));
        bn = l2_normalize(proj->project(bn));
        spec.reduced = ReducedSide::rec;
        spec.projector = std::move(proj);
    }
    EmbeddingMatrix out{Matrix(a.rows(), spec.target_dim), a.aligned_to, false};
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.data.row(i);
        const auto ra = an.row(i);
        const auto rb = bn.row(i);
        for (std::size_t j = 0; j < spec.target_dim; ++j) {
            dst[j] = ra[j] + rb[j];
        }
    }
    return {std::move(out), std::move(spec)};
}

/// Places a single-space context vector into the fused space.
inline std::vector<float> project_context(std::span<const float> v, const FusionSpec& spec,
                                          SourceSpace from) {
    if (spec.kind == FusionKind::passthrough) {
        SEMID_THROW_IF_NOT(v.size() == spec.target_dim, Errc::dimension_mismatch, kFusionStage,
                           "context dim " + std::to_string(v.size()) +
                                   " does not match passthrough dim " +
                                   std::to_string(spec.target_dim));
        return {v.begin(), v.end()};
    }
    const std::size_t expect = from == SourceSpace::search ? spec.d_search : spec.d_rec;
    SEMID_THROW_IF_NOT(v.size() == expect, Errc::dimension_mismatch, kFusionStage,
                       "context dim " + std::to_string(v.size()) +
                               " matches no declared source space");
    auto unit = l2_normalized(v);
    if (spec.kind == FusionKind::concat) {
        std::vector<float> out(spec.target_dim, 0.0F);
        const std::size_t off = from == SourceSpace::search ? 0 : spec.d_search;
        std::copy(unit.begin(), unit.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
        return out;
    }
    const bool reduce = (from == SourceSpace::search && spec.reduced == ReducedSide::search) ||
            (from == SourceSpace::rec && spec.reduced == ReducedSide::rec);
    if (reduce) {
        return l2_normalized(spec.projector->project(unit));
    }
    return unit;
}

} // namespace semid
