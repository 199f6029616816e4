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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace semid {

enum class Errc {
    shape_mismatch,
    non_finite,
    malformed,
    zero_norm,
    missing_item,
    duplicate_item,
    misaligned,
    unnormalized,
    out_of_range,
    empty_input,
    dimension_mismatch,
    cold_user,
    unknown_id,
    invalid_config,
    io,
    internal,
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::shape_mismatch: return "shape_mismatch";
        case Errc::non_finite: return "non_finite";
        case Errc::malformed: return "malformed";
        case Errc::zero_norm: return "zero_norm";
        case Errc::missing_item: return "missing_item";
        case Errc::duplicate_item: return "duplicate_item";
        case Errc::misaligned: return "misaligned";
        case Errc::unnormalized: return "unnormalized";
        case Errc::out_of_range: return "out_of_range";
        case Errc::empty_input: return "empty_input";
        case Errc::dimension_mismatch: return "dimension_mismatch";
        case Errc::cold_user: return "cold_user";
        case Errc::unknown_id: return "unknown_id";
        case Errc::invalid_config: return "invalid_config";
        case Errc::io: return "io";
        case Errc::internal: return "internal";
    }
    return "unknown";
}

/// Every failure in the library is reported as an Error tagged with the
/// pipeline stage that raised it, so the CLI can print "[stage] message".
class Error : public std::runtime_error {
   public:
    Error(Errc code, std::string stage, const std::string& msg)
            : std::runtime_error("[" + stage + "] " + msg),
              code_(code),
              stage_(std::move(stage)) {}

    Errc code() const noexcept {
        return code_;
    }
    const std::string& stage() const noexcept {
        return stage_;
    }

   private:
    Errc code_;
    std::string stage_;
};

#define SEMID_THROW_IF_NOT(cond, code, stage, msg)            \
    do {                                                      \
        if (!(cond)) {                                        \
            throw ::semid::Error((code), (stage), (msg));     \
        }                                                     \
    } while (false)

/// Dense row-major float32 matrix. Rows are items (or queries/users).
class Matrix {
   public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0F)
            : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
            : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw Error(Errc::shape_mismatch, "matrix",
                        "buffer size does not match rows*cols");
        }
    }

    std::size_t rows() const noexcept {
        return rows_;
    }
    std::size_t cols() const noexcept {
        return cols_;
    }
    bool empty() const noexcept {
        return rows_ == 0;
    }

    std::span<float> row(std::size_t i) noexcept {
        return {data_.data() + i * cols_, cols_};
    }
    std::span<const float> row(std::size_t i) const noexcept {
        return {data_.data() + i * cols_, cols_};
    }

    float& operator()(std::size_t i, std::size_t j) noexcept {
        return data_[i * cols_ + j];
    }
    float operator()(std::size_t i, std::size_t j) const noexcept {
        return data_[i * cols_ + j];
    }

    std::vector<float>& values() noexcept {
        return data_;
    }
    const std::vector<float>& values() const noexcept {
        return data_;
    }

    bool operator==(const Matrix&) const = default;

   private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

inline double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        s += static_cast<double>(a[j]) * static_cast<double>(b[j]);
    }
    return s;
}

inline double sq_norm(std::span<const float> a) {
    return dot(a, a);
}

/// Squared Euclidean distance with 64-bit accumulation.
inline double sq_dist(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double t = static_cast<double>(a[j]) - static_cast<double>(b[j]);
        s += t * t;
    }
    return s;
}

/// Seeded PRNG over std::mt19937_64. Distributions are computed here rather
/// than with <random>'s, whose outputs vary between standard libraries.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() noexcept {
        return engine_();
    }

    /// Uniform in [0, 1).
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept {
        return lo + (hi - lo) * uniform();
    }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) noexcept {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n));
    }

    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

   private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Derive an independent stream seed from a base seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    Rng r(base ^ (tag * 0xD1B54A32D192ED03ULL));
    return r.next_u64();
}

/// Worker count: SEMID_THREADS if set and positive, else hardware concurrency.
inline std::size_t default_workers() {
    if (const char* env = std::getenv("SEMID_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) {
            return static_cast<std::size_t>(v);
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Runs fn(i) for every i in [0, n) across `workers` threads. Each index is
/// visited exactly once; callers write only to per-index slots, which keeps
/// results independent of the worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t workers = 0) {
    if (workers == 0) {
        workers = default_workers();
    }
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                const std::size_t lo = w * chunk;
                const std::size_t hi = std::min(n, lo + chunk);
                for (std::size_t i = lo; i < hi; ++i) {
                    fn(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace semid
