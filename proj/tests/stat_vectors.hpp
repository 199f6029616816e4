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

// Twenty fixed difference vectors for the paired t-test checks.

#include <random>
#include <vector>

namespace oracle {

inline std::vector<std::vector<double>> fixed_difference_vectors() {
    std::vector<std::vector<double>> out;
    out.push_back({1, -1, 2, 0, 1, 3, -1, 2, 1, 0});
    out.push_back({0.5, -0.25});
    out.push_back({0.1, 0.2, 0.15, -0.05, 0.3});
    out.push_back({-2, -1.5, -3, -0.5, -2.5, -1});
    out.push_back({1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    std::mt19937_64 rng(20240917);
    std::normal_distribution<double> nd(0.0, 1.0);
    const std::size_t sizes[] = {3, 4, 7, 10, 15, 20, 30, 50, 80, 120, 200, 350, 600, 1000, 2000};
    for (std::size_t k = 0; k < 15; ++k) {
        const double shift = 0.08 * static_cast<double>(k % 6);
        std::vector<double> v(sizes[k]);
        for (auto& x : v) {
            x = shift + nd(rng);
        }
        out.push_back(v);
    }
    return out;
}

} // namespace oracle
