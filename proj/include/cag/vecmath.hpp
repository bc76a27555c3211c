// Copyright 2026 The CAG Authors
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
#include <cstring>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cag/error.hpp"

namespace cag {

/// A finite real vector of fixed dimension. Query-side embeddings are kept in
/// double precision; corpus storage uses EmbeddingMatrix (32-bit rows).
class Embedding {
public:
    Embedding() = default;

    explicit Embedding(std::vector<double> values) : values_(std::move(values)) { validate(); }

    Embedding(std::initializer_list<double> values) : values_(values) { validate(); }

    std::size_t dim() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    double norm() const {
        double sum = 0.0;
        for (double v : values_) sum += v * v;
        return std::sqrt(sum);
    }

    bool is_zero() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
    }

    Embedding scaled(double s) const {
        std::vector<double> out(values_);
        for (double& v : out) v *= s;
        return Embedding(std::move(out));
    }

    friend bool operator==(const Embedding&, const Embedding&) = default;

private:
    void validate() const {
        if (values_.empty()) throw Error(ErrorCode::InvalidArgument, "embedding must have dim >= 1");
        for (double v : values_) {
            if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "embedding has a non-finite component");
        }
    }

    std::vector<double> values_;
};

inline double clamp_unit(double x) noexcept { return std::clamp(x, -1.0, 1.0); }

inline Embedding normalize(const Embedding& v) {
    const double n = v.norm();
    if (n == 0.0) throw Error(ErrorCode::ZeroVector, "cannot normalize the zero vector");
    std::vector<double> out(v.values().begin(), v.values().end());
    for (double& x : out) x /= n;
    return Embedding(std::move(out));
}

inline double cosine(const Embedding& a, const Embedding& b) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "dim " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
    return clamp_unit(dot / (std::sqrt(na) * std::sqrt(nb)));
}

namespace detail {

// Mixed-precision dot: 32-bit storage, 64-bit accumulation. Four independent
// accumulators let the compiler vectorize without reassociation flags.
inline double dot(const float* a, const double* b, std::size_t n) noexcept {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += static_cast<double>(a[i]) * b[i];
        s1 += static_cast<double>(a[i + 1]) * b[i + 1];
        s2 += static_cast<double>(a[i + 2]) * b[i + 2];
        s3 += static_cast<double>(a[i + 3]) * b[i + 3];
    }
    for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
    return (s0 + s1) + (s2 + s3);
}

inline double dot(const float* a, const float* b, std::size_t n) noexcept {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        s1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
        s2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
        s3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
    }
    for (; i < n; ++i) s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return (s0 + s1) + (s2 + s3);
}

#if defined(__x86_64__) && defined(__GNUC__) && !defined(__clang__) && !defined(CAG_NO_DISPATCH)
// AVX2 does not imply FMA, so both clones round identically.
#define CAG_KERNEL_CLONES __attribute__((target_clones("avx2", "default")))
#else
#define CAG_KERNEL_CLONES
#endif

typedef double Lanes4 __attribute__((vector_size(32)));

// One pass over a float row against four unit queries stored interleaved
// (element k of lane b at q[4 * k + b]). Each lane keeps four partial sums
// over k mod 4, combined in a fixed order, so a query gets the same rounding
// whichever lane or block it lands in.
CAG_KERNEL_CLONES inline void dot4_interleaved(const float* row, const double* q, std::size_t n,
                                               double out[4]) noexcept {
    Lanes4 a = {0.0, 0.0, 0.0, 0.0}, b = a, c = a, d = a;
    Lanes4 x0, x1, x2, x3;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        std::memcpy(&x0, q + 4 * i, sizeof x0);
        std::memcpy(&x1, q + 4 * i + 4, sizeof x1);
        std::memcpy(&x2, q + 4 * i + 8, sizeof x2);
        std::memcpy(&x3, q + 4 * i + 12, sizeof x3);
        a += static_cast<double>(row[i]) * x0;
        b += static_cast<double>(row[i + 1]) * x1;
        c += static_cast<double>(row[i + 2]) * x2;
        d += static_cast<double>(row[i + 3]) * x3;
    }
    for (; i < n; ++i) {
        std::memcpy(&x0, q + 4 * i, sizeof x0);
        a += static_cast<double>(row[i]) * x0;
    }
    const Lanes4 s = (a + b) + (c + d);
    for (int k = 0; k < 4; ++k) out[k] = s[k];
}

}  // namespace detail

/// Row-major store of unit-normalized embeddings in 32-bit storage.
///
/// Each row is normalized once when it is added. Rounding to float leaves the
/// stored norm within ~1e-7 of one, so the exact inverse norm of the stored row
/// is kept alongside it; similarities are then exact cosines of the stored
/// vectors and no norm is recomputed on the query path.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;
    explicit EmbeddingMatrix(std::size_t dim) : dim_(dim) {}

    static EmbeddingMatrix from_rows(std::span<const Embedding> rows) {
        if (rows.empty()) return EmbeddingMatrix();
        EmbeddingMatrix m(rows.front().dim());
        m.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            try {
                m.append(rows[i]);
            } catch (const Error& e) {
                throw Error(e.code(), "row " + std::to_string(i) + ": " + e.what());
            }
        }
        return m;
    }

    void reserve(std::size_t n) {
        data_.reserve(n * dim_);
        inv_norms_.reserve(n);
    }

    void append(const Embedding& v) { append(v.values()); }

    void append(std::span<const double> v) {
        if (dim_ == 0) dim_ = v.size();
        if (v.size() != dim_) {
            throw Error(ErrorCode::DimensionMismatch,
                        "expected dim " + std::to_string(dim_) + ", got " + std::to_string(v.size()));
        }
        double sq = 0.0;
        for (double x : v) sq += x * x;
        if (sq == 0.0) throw Error(ErrorCode::ZeroVector, "zero embedding");
        const double n = std::sqrt(sq);
        const std::size_t offset = data_.size();
        data_.resize(offset + dim_);
        for (std::size_t i = 0; i < dim_; ++i) data_[offset + i] = static_cast<float>(v[i] / n);
        append_stored_norm(offset);
    }

    /// Adds a row that is already normalized 32-bit storage (index loading).
    void append_raw(std::span<const float> v) {
        if (dim_ == 0) dim_ = v.size();
        if (v.size() != dim_) {
            throw Error(ErrorCode::DimensionMismatch,
                        "expected dim " + std::to_string(dim_) + ", got " + std::to_string(v.size()));
        }
        const std::size_t offset = data_.size();
        data_.insert(data_.end(), v.begin(), v.end());
        append_stored_norm(offset);
    }

    std::size_t rows() const noexcept { return inv_norms_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    bool empty() const noexcept { return inv_norms_.empty(); }

    std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    std::span<const float> data() const noexcept { return data_; }
    double inv_norm(std::size_t i) const { return inv_norms_[i]; }

    Embedding embedding(std::size_t i) const {
        auto r = row(i);
        return Embedding(std::vector<double>(r.begin(), r.end()));
    }

    /// Cosine between stored row i and a query that is already unit length.
    double similarity_unit(std::size_t i, const double* unit_query) const noexcept {
        return clamp_unit(detail::dot(data_.data() + i * dim_, unit_query, dim_) * inv_norms_[i]);
    }

    /// Cosine between stored row i of this matrix and stored row j of other.
    double similarity(std::size_t i, const EmbeddingMatrix& other, std::size_t j) const noexcept {
        return clamp_unit(detail::dot(data_.data() + i * dim_, other.data_.data() + j * dim_, dim_) *
                          inv_norms_[i] * other.inv_norms_[j]);
    }

    friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

private:
    void append_stored_norm(std::size_t offset) {
        const double sq = detail::dot(data_.data() + offset, data_.data() + offset, dim_);
        if (sq == 0.0) {
            data_.resize(offset);
            throw Error(ErrorCode::ZeroVector, "zero embedding");
        }
        inv_norms_.push_back(1.0 / std::sqrt(sq));
    }

    std::size_t dim_ = 0;
    std::vector<float> data_;
    std::vector<double> inv_norms_;
};

/// Dense contexts x queries cosine table.
class SimilarityMatrix {
public:
    SimilarityMatrix() = default;
    SimilarityMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), entries_(rows * cols, 0.0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    double at(std::size_t i, std::size_t j) const { return entries_[i * cols_ + j]; }
    double& at(std::size_t i, std::size_t j) { return entries_[i * cols_ + j]; }
    std::span<const double> entries() const noexcept { return entries_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> entries_;
};

namespace detail {

inline void require_same_dim(std::span<const Embedding> vs, std::size_t dim, const char* what) {
    for (std::size_t i = 0; i < vs.size(); ++i) {
        if (vs[i].dim() != dim) {
            throw Error(ErrorCode::DimensionMismatch, std::string(what) + " " + std::to_string(i) + " has dim " +
                                                          std::to_string(vs[i].dim()) + ", expected " +
                                                          std::to_string(dim));
        }
    }
}

inline std::vector<double> unit_rows(std::span<const Embedding> vs, const char* what) {
    const std::size_t dim = vs.empty() ? 0 : vs.front().dim();
    std::vector<double> out(vs.size() * dim);
    for (std::size_t i = 0; i < vs.size(); ++i) {
        const double n = vs[i].norm();
        if (n == 0.0) throw Error(ErrorCode::ZeroVector, std::string(what) + " " + std::to_string(i) + " is zero");
        for (std::size_t k = 0; k < dim; ++k) out[i * dim + k] = vs[i][k] / n;
    }
    return out;
}

}  // namespace detail

inline SimilarityMatrix similarity_matrix(std::span<const Embedding> contexts, std::span<const Embedding> queries) {
    if (contexts.empty() || queries.empty()) return SimilarityMatrix(contexts.size(), queries.size());
    const std::size_t dim = contexts.front().dim();
    detail::require_same_dim(contexts, dim, "context");
    detail::require_same_dim(queries, dim, "query");
    const auto c = detail::unit_rows(contexts, "context");
    const auto q = detail::unit_rows(queries, "query");
    SimilarityMatrix out(contexts.size(), queries.size());
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        const double* ci = c.data() + i * dim;
        for (std::size_t j = 0; j < queries.size(); ++j) {
            const double* qj = q.data() + j * dim;
            double s = 0.0;
            for (std::size_t k = 0; k < dim; ++k) s += ci[k] * qj[k];
            out.at(i, j) = clamp_unit(s);
        }
    }
    return out;
}

struct MaxSimilarity {
    double score = 0.0;
    std::size_t index = 0;
};

/// Highest cosine over the stored rows; ties resolve to the smallest index.
inline MaxSimilarity max_similarity(const EmbeddingMatrix& contexts, const Embedding& query) {
    if (contexts.empty()) throw Error(ErrorCode::EmptyCorpus, "no contexts to compare against");
    if (query.dim() != contexts.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "query dim " + std::to_string(query.dim()) + " vs corpus dim " +
                                                      std::to_string(contexts.dim()));
    }
    const Embedding unit = normalize(query);
    MaxSimilarity best{contexts.similarity_unit(0, unit.values().data()), 0};
    for (std::size_t i = 1; i < contexts.rows(); ++i) {
        const double s = contexts.similarity_unit(i, unit.values().data());
        if (s > best.score) best = {s, i};
    }
    return best;
}

inline MaxSimilarity max_similarity(const Embedding& query, std::span<const Embedding> contexts) {
    if (contexts.empty()) throw Error(ErrorCode::EmptyCorpus, "no contexts to compare against");
    return max_similarity(EmbeddingMatrix::from_rows(contexts), query);
}

/// Maximum similarity for many queries at once. Queries are normalized up
/// front and swept against each stored row four at a time, so each context
/// row is loaded once per block. A query's result does not depend on its
/// position in the batch.
inline std::vector<MaxSimilarity> max_similarity_batch(const EmbeddingMatrix& contexts,
                                                       std::span<const Embedding> queries) {
    std::vector<MaxSimilarity> out(queries.size());
    if (queries.empty()) return out;
    if (contexts.empty()) throw Error(ErrorCode::EmptyCorpus, "no contexts to compare against");
    const std::size_t dim = contexts.dim();
    detail::require_same_dim(queries, dim, "query");
    const auto unit = detail::unit_rows(queries, "query");
    const std::size_t n = contexts.rows();

    // Queries are packed four to a block; contexts are visited in tiles small
    // enough to stay in cache while every block passes over them. Rows are
    // still seen in ascending order for each query, so ties resolve as in a
    // plain scan.
    const std::size_t n_blocks = (queries.size() + 3) / 4;
    std::vector<double> blocks(n_blocks * 4 * dim);
    for (std::size_t j = 0; j < n_blocks; ++j) {
        const std::size_t lanes = std::min<std::size_t>(4, queries.size() - 4 * j);
        double* block = blocks.data() + j * 4 * dim;
        for (std::size_t b = 0; b < 4; ++b) {
            // Short tail blocks repeat the last query in the spare lanes.
            const double* q = unit.data() + (4 * j + std::min(b, lanes - 1)) * dim;
            for (std::size_t k = 0; k < dim; ++k) block[4 * k + b] = q[k];
        }
    }
    std::vector<MaxSimilarity> best(n_blocks * 4);
    const std::size_t tile = std::max<std::size_t>(1, (64 * 1024) / (dim * sizeof(float)));
    for (std::size_t lo = 0; lo < n; lo += tile) {
        const std::size_t hi = std::min(n, lo + tile);
        for (std::size_t j = 0; j < n_blocks; ++j) {
            const double* block = blocks.data() + j * 4 * dim;
            MaxSimilarity* lane_best = best.data() + 4 * j;
            for (std::size_t i = lo; i < hi; ++i) {
                double d[4];
                detail::dot4_interleaved(contexts.row(i).data(), block, dim, d);
                for (int b = 0; b < 4; ++b) {
                    const double s = clamp_unit(d[b] * contexts.inv_norm(i));
                    if (i == 0 || s > lane_best[b].score) lane_best[b] = {s, i};
                }
            }
        }
    }
    std::copy(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(queries.size()), out.begin());
    return out;
}

}  // namespace cag
