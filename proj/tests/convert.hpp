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

// Conversions between oracle matrices and library types.

#include <string>
#include <vector>

#include "oracles.hpp"
#include "semid/common.hpp"
#include "semid/embedding_store.hpp"

namespace testutil {

inline semid::Matrix to_matrix(const oracle::Mat& m) {
    semid::Matrix out(m.size(), m.empty() ? 0 : m[0].size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < m[i].size(); ++j) {
            out(i, j) = static_cast<float>(m[i][j]);
        }
    }
    return out;
}

inline oracle::Mat to_mat(const semid::Matrix& m) {
    oracle::Mat out(m.rows(), oracle::Vec(m.cols()));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out[i][j] = m(i, j);
        }
    }
    return out;
}

inline semid::EmbeddingMatrix emb(const oracle::Mat& m, std::string aligned_to = "cat") {
    return {to_matrix(m), std::move(aligned_to), false};
}

inline semid::Catalog catalog(std::size_t n) {
    std::vector<semid::CatalogItem> items;
    for (std::size_t i = 0; i < n; ++i) {
        items.push_back({"i" + std::to_string(i), 0});
    }
    return semid::Catalog(std::move(items));
}

} // namespace testutil
