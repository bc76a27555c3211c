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
#include <chrono>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cag/corpus.hpp"
#include "cag/distribution.hpp"
#include "cag/error.hpp"
#include "cag/vecmath.hpp"

namespace cag {

struct GateConfig {
    /// Default reads the lower 5% tail of the positive pair distribution, so
    /// 95% of known-answerable pseudo-queries sit above the cutoff.
    PolicySpec policy = PolicySpec::percentile(5.0);
    double threshold = 0.0;
    SampleLabel distribution_source = SampleLabel::Positive;
};

struct GateDecision {
    bool retrieve = false;
    double score = 0.0;
    double cutoff = 0.0;
    double margin = 0.0;
    std::string best_context_id;
    std::size_t best_context_index = 0;
    std::chrono::nanoseconds elapsed{0};
};

/// Retrieve-or-answer classifier over a fitted corpus.
///
/// All distribution work happens in build(): the policy value is evaluated
/// once and the cutoff P(D) - T is frozen. classify() is then a single sweep
/// of dot products against the stored context rows followed by one
/// comparison, with no locking.
class Gate {
public:
    static Gate build(std::shared_ptr<const CorpusIndex> index, const GateConfig& config) {
        if (!index) throw Error(ErrorCode::UnfittedIndex, "no index");
        if (!index->fitted) throw Error(ErrorCode::UnfittedIndex, "index has no fitted distributions");
        if (!std::isfinite(config.threshold)) throw Error(ErrorCode::InvalidArgument, "threshold must be finite");
        if (index->contexts.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no contexts");
        PairSampleSet scratch;
        const PairSampleSet& samples = index->samples(config.distribution_source, scratch);
        if (samples.empty()) {
            throw Error(ErrorCode::EmptySamples,
                        "no " + std::string(to_string(config.distribution_source)) + " samples to derive a cutoff");
        }
        Gate g;
        g.index_ = std::move(index);
        g.config_ = config;
        g.policy_value_ = policy_value(samples, config.policy);
        g.cutoff_ = g.policy_value_ - config.threshold;
        if (samples.count() < 20) {
            g.warnings_.push_back("cutoff derived from only " + std::to_string(samples.count()) +
                                  " samples; statistically unreliable");
        }
        return g;
    }

    /// Same gate with a different threshold; reuses the stored policy value.
    Gate with_threshold(double threshold) const {
        if (!std::isfinite(threshold)) throw Error(ErrorCode::InvalidArgument, "threshold must be finite");
        Gate g = *this;
        g.config_.threshold = threshold;
        g.cutoff_ = policy_value_ - threshold;
        return g;
    }

    GateDecision classify(const Embedding& query) const {
        const auto start = std::chrono::steady_clock::now();
        check_query(query, 0);
        const auto best = max_similarity_batch(index_->context_vectors, std::span<const Embedding>(&query, 1)).front();
        GateDecision d = decide(best);
        d.elapsed = std::chrono::steady_clock::now() - start;
        return d;
    }

    /// Elementwise classify(); work is split across up to `threads` workers
    /// (0 = hardware concurrency). Output order matches input order.
    std::vector<GateDecision> classify_batch(std::span<const Embedding> queries, unsigned threads = 0) const {
        std::vector<GateDecision> out(queries.size());
        if (queries.empty()) return out;
        for (std::size_t i = 0; i < queries.size(); ++i) check_query(queries[i], i);

        if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
        const std::size_t chunk = 256;
        const std::size_t n_chunks = (queries.size() + chunk - 1) / chunk;
        threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_chunks));

        auto work = [&](std::size_t first_chunk, std::size_t stride) {
            for (std::size_t c = first_chunk; c < n_chunks; c += stride) {
                const auto start = std::chrono::steady_clock::now();
                const std::size_t lo = c * chunk;
                const std::size_t hi = std::min(queries.size(), lo + chunk);
                auto best = max_similarity_batch(index_->context_vectors, queries.subspan(lo, hi - lo));
                const auto per_query = (std::chrono::steady_clock::now() - start) / static_cast<long>(hi - lo);
                for (std::size_t i = lo; i < hi; ++i) {
                    out[i] = decide(best[i - lo]);
                    out[i].elapsed = per_query;
                }
            }
        };
        if (threads <= 1) {
            work(0, 1);
        } else {
            std::vector<std::jthread> pool;
            for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
        }
        return out;
    }

    double cutoff() const noexcept { return cutoff_; }
    double policy_value_cached() const noexcept { return policy_value_; }
    const GateConfig& config() const noexcept { return config_; }
    const CorpusIndex& index() const noexcept { return *index_; }
    const std::shared_ptr<const CorpusIndex>& index_ptr() const noexcept { return index_; }
    const std::vector<std::string>& warnings() const noexcept { return warnings_; }

private:
    Gate() = default;

    void check_query(const Embedding& q, std::size_t i) const {
        if (q.dim() != index_->dim) {
            throw Error(ErrorCode::DimensionMismatch, "query " + std::to_string(i) + " has dim " +
                                                          std::to_string(q.dim()) + ", corpus dim is " +
                                                          std::to_string(index_->dim));
        }
        if (q.is_zero()) throw Error(ErrorCode::ZeroVector, "query " + std::to_string(i) + " is the zero vector");
    }

    GateDecision decide(const MaxSimilarity& best) const {
        GateDecision d;
        d.score = best.score;
        d.cutoff = cutoff_;
        d.margin = best.score - cutoff_;
        d.retrieve = best.score > cutoff_;
        d.best_context_index = best.index;
        d.best_context_id = index_->contexts[best.index].id;
        return d;
    }

    std::shared_ptr<const CorpusIndex> index_;
    GateConfig config_;
    double policy_value_ = 0.0;
    double cutoff_ = 0.0;
    std::vector<std::string> warnings_;
};

inline Gate build_gate(std::shared_ptr<const CorpusIndex> index, const GateConfig& config = {}) {
    return Gate::build(std::move(index), config);
}

/// Rejects a query-time embedder whose fingerprint differs from the one the
/// index was built with; cosines across embedding models are meaningless.
inline void check_fingerprint(const CorpusIndex& index, const std::string& fingerprint) {
    if (fingerprint != index.embedder_fingerprint) {
        throw Error(ErrorCode::FingerprintMismatch,
                    "query embedder '" + fingerprint + "' differs from index embedder '" +
                        index.embedder_fingerprint + "'");
    }
}

}  // namespace cag
