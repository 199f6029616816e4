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

// Reference computations used only by tests. Written from the definitions,
// in plain double arithmetic, without calling into the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>; // row-major, rows of equal length

inline std::filesystem::path temp_dir(const std::string& name) {
    std::filesystem::path base;
    if (const char* env = std::getenv("SEMID_TEST_TMP")) {
        base = env;
    } else {
        base = std::filesystem::temp_directory_path() / "semid_tests";
    }
    auto p = base / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline double sq_dist(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        s += (a[j] - b[j]) * (a[j] - b[j]);
    }
    return s;
}

/// Minimum within-cluster sum of squares over every split of pts into two
/// non-empty groups. Returns the SSE and the two centroids.
struct TwoPartition {
    double sse = std::numeric_limits<double>::infinity();
    Vec c0;
    Vec c1;
};

inline TwoPartition best_two_partition(const Mat& pts) {
    const std::size_t n = pts.size();
    const std::size_t d = pts[0].size();
    TwoPartition best;
    for (std::uint64_t mask = 1; mask + 1 < (std::uint64_t{1} << n); ++mask) {
        Vec c[2] = {Vec(d, 0.0), Vec(d, 0.0)};
        double cnt[2] = {0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            const int g = (mask >> i) & 1U;
            cnt[g] += 1;
            for (std::size_t j = 0; j < d; ++j) {
                c[g][j] += pts[i][j];
            }
        }
        for (int g = 0; g < 2; ++g) {
            for (auto& x : c[g]) {
                x /= cnt[g];
            }
        }
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sse += sq_dist(pts[i], c[(mask >> i) & 1U]);
        }
        if (sse < best.sse) {
            best = {sse, c[0], c[1]};
        }
    }
    return best;
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Eigenvalues are
/// returned in decreasing order; vecs[k] is the eigenvector of vals[k].
inline void jacobi_eigen(Mat a, Vec& vals, Mat& vecs) {
    const std::size_t n = a.size();
    Mat v(n, Vec(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        v[i][i] = 1.0;
    }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                off += a[p][q] * a[p][q];
            }
        }
        if (off < 1e-30) {
            break;
        }
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) {
                    continue;
                }
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                        (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p];
                    const double akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k];
                    const double aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k][p];
                    const double vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });
    vals.assign(n, 0.0);
    vecs.assign(n, Vec(n, 0.0));
    for (std::size_t k = 0; k < n; ++k) {
        vals[k] = a[order[k]][order[k]];
        for (std::size_t i = 0; i < n; ++i) {
            vecs[k][i] = v[i][order[k]];
        }
    }
}

inline Mat gram(const Mat& m) {
    const std::size_t d = m[0].size();
    Mat g(d, Vec(d, 0.0));
    for (const auto& r : m) {
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) {
                g[a][b] += r[a] * r[b];
            }
        }
    }
    return g;
}

/// Whole-data weighted squared loss straight from its definition:
/// sum over observed (u,i) of (1 - r)^2 plus c_neg * r^2 over the rest,
/// with r = sum_k h_k p_uk q_ik.
inline double enmf_loss(const Mat& P, const Mat& Q, const Vec& h, double c_neg,
                        const std::set<std::pair<std::size_t, std::size_t>>& observed) {
    double loss = 0.0;
    for (std::size_t u = 0; u < P.size(); ++u) {
        for (std::size_t i = 0; i < Q.size(); ++i) {
            double r = 0.0;
            for (std::size_t k = 0; k < h.size(); ++k) {
                r += h[k] * P[u][k] * Q[i][k];
            }
            if (observed.count({u, i}) != 0U) {
                loss += (1.0 - r) * (1.0 - r);
            } else {
                loss += c_neg * r * r;
            }
        }
    }
    return loss;
}

/// Adaptive Simpson quadrature.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol, int depth = 50) {
    const auto simpson = [&](double l, double r, double fl, double fm, double fr) {
        return (r - l) / 6.0 * (fl + 4.0 * fm + fr);
    };
    std::function<double(double, double, double, double, double, double, double, int)> rec =
            [&](double l, double r, double fl, double fm, double fr, double whole, double eps, int dep) {
                const double m = 0.5 * (l + r);
                const double lm = 0.5 * (l + m);
                const double rm = 0.5 * (m + r);
                const double flm = f(lm);
                const double frm = f(rm);
                const double left = simpson(l, m, fl, flm, fm);
                const double right = simpson(m, r, fm, frm, fr);
                if (dep <= 0 || std::abs(left + right - whole) <= 15.0 * eps) {
                    return left + right + (left + right - whole) / 15.0;
                }
                return rec(l, m, fl, flm, fm, left, eps / 2.0, dep - 1) +
                        rec(m, r, fm, frm, fr, right, eps / 2.0, dep - 1);
            };
    const double fa = f(a);
    const double fb = f(b);
    const double fm = f(0.5 * (a + b));
    return rec(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, depth);
}

/// P(|T| >= |t|) for Student's t with nu dof by integrating the density.
inline double t_two_sided_by_integration(double t, double nu) {
    const double c = std::exp(std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0)) /
            std::sqrt(nu * M_PI);
    const auto f = [&](double x) { return c * std::pow(1.0 + x * x / nu, -(nu + 1.0) / 2.0); };
    // integrate the centre piecewise so every panel is smooth and short
    const double at = std::abs(t);
    double centre = 0.0;
    const int pieces = std::max(1, static_cast<int>(std::ceil(at)));
    for (int k = 0; k < pieces; ++k) {
        centre += adaptive_simpson(f, at * k / pieces, at * (k + 1) / pieces, 1e-14);
    }
    return std::max(0.0, 1.0 - 2.0 * centre);
}

inline double mean(const Vec& v) {
    double s = 0.0;
    for (const double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

/// Random matrix with entries ~ N(0, 1).
inline Mat gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Mat m(rows, Vec(cols));
    for (auto& r : m) {
        for (auto& x : r) {
            x = nd(rng);
        }
    }
    return m;
}

} // namespace oracle
