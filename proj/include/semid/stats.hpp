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

// Paired t-test and Bonferroni correction.
//
// The two-sided p-value of a t statistic with nu degrees of freedom is
// I_x(nu/2, 1/2) with x = nu / (nu + t^2), where I is the regularized
// incomplete beta function. I is evaluated with the modified Lentz continued
// fraction, switching to the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) when x is
// past the mean so the fraction converges quickly.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "semid/common.hpp"

namespace semid {

inline constexpr const char* kStatsStage = "stats";

namespace detail {

inline double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) {
        d = kTiny;
    }
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        d = std::abs(d) < kTiny ? kTiny : d;
        c = 1.0 + aa / c;
        c = std::abs(c) < kTiny ? kTiny : c;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        d = std::abs(d) < kTiny ? kTiny : d;
        c = 1.0 + aa / c;
        c = std::abs(c) < kTiny ? kTiny : c;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) {
            return h;
        }
    }
    throw Error(Errc::internal, kStatsStage, "incomplete beta continued fraction did not converge");
}

} // namespace detail

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
inline double incomplete_beta(double a, double b, double x) {
    SEMID_THROW_IF_NOT(a > 0.0 && b > 0.0 && x >= 0.0 && x <= 1.0, Errc::out_of_range,
                       kStatsStage, "incomplete_beta argument out of range");
    if (x == 0.0 || x == 1.0) {
        return x;
    }
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * detail::beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-sided tail probability P(|T| >= |t|) for Student's t with nu dof.
inline double student_t_two_sided(double t, double nu) {
    SEMID_THROW_IF_NOT(nu > 0.0, Errc::out_of_range, kStatsStage, "degrees of freedom must be > 0");
    if (std::isinf(t)) {
        return 0.0;
    }
    return incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
}

inline double mean(std::span<const double> v) {
    SEMID_THROW_IF_NOT(!v.empty(), Errc::empty_input, kStatsStage, "mean of empty list");
    double s = 0.0;
    for (const double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
inline double sample_std(std::span<const double> v) {
    if (v.size() < 2) {
        return 0.0;
    }
    const double m = mean(v);
    double s = 0.0;
    for (const double x : v) {
        s += (x - m) * (x - m);
    }
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct TTestResult {
    double t = 0.0; // nan for all-zero differences, +-inf for zero variance
    double p = 1.0;
    std::size_t df = 0;
};

/// Paired t-test on a - b.
/// All-zero differences give p = 1; zero variance with nonzero mean gives p = 0.
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    SEMID_THROW_IF_NOT(a.size() == b.size(), Errc::shape_mismatch, kStatsStage,
                       "paired samples differ in length: " + std::to_string(a.size()) + " vs " +
                               std::to_string(b.size()));
    SEMID_THROW_IF_NOT(a.size() >= 2, Errc::out_of_range, kStatsStage,
                       "paired t-test needs at least 2 cases");
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff[i] = a[i] - b[i];
    }
    TTestResult r;
    r.df = diff.size() - 1;
    const double m = mean(diff);
    const double sd = sample_std(diff);
    const bool all_zero = std::all_of(diff.begin(), diff.end(), [](double d) { return d == 0.0; });
    if (all_zero) {
        r.t = std::numeric_limits<double>::quiet_NaN();
        r.p = 1.0;
        return r;
    }
    if (sd == 0.0) {
        r.t = m > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        return r;
    }
    r.t = m / (sd / std::sqrt(static_cast<double>(diff.size())));
    r.p = student_t_two_sided(r.t, static_cast<double>(r.df));
    return r;
}

inline std::vector<double> bonferroni(std::span<const double> p, std::size_t m) {
    SEMID_THROW_IF_NOT(m >= p.size(), Errc::out_of_range, kStatsStage,
                       "Bonferroni m must be >= the number of comparisons");
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        out[i] = std::min(1.0, static_cast<double>(m) * p[i]);
    }
    return out;
}

} // namespace semid
