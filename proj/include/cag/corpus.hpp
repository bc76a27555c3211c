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
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cag/distribution.hpp"
#include "cag/error.hpp"
#include "cag/vecmath.hpp"

namespace cag {

// ---------------------------------------------------------------------------
// Corpus file records
// ---------------------------------------------------------------------------

struct PseudoQueryEntry {
    std::string id;  // empty: derived as "<context id>/q<j>"
    std::string text;
    std::optional<Embedding> embedding;
};

/// One line of a corpus file: a context plus its generated pseudo-queries.
struct CorpusEntry {
    std::string id;
    std::string topic;
    std::string text;
    std::optional<Embedding> embedding;
    std::vector<PseudoQueryEntry> pseudo_queries;
};

namespace detail {

inline std::optional<Embedding> parse_embedding_field(const nlohmann::json& obj, std::size_t line) {
    auto it = obj.find("embedding");
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_array()) throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": embedding must be an array");
    std::vector<double> values;
    values.reserve(it->size());
    for (const auto& x : *it) {
        if (!x.is_number()) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": embedding entries must be numbers");
        }
        values.push_back(x.get<double>());
    }
    try {
        return Embedding(std::move(values));
    } catch (const Error& e) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + e.what());
    }
}

inline std::string required_string(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": missing string field '" + key + "'");
    }
    return it->get<std::string>();
}

}  // namespace detail

inline CorpusEntry parse_corpus_line(const std::string& line, std::size_t line_no) {
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object()) throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected an object");
    CorpusEntry entry;
    entry.id = detail::required_string(obj, "id", line_no);
    entry.topic = obj.value("topic", std::string());
    entry.text = detail::required_string(obj, "text", line_no);
    if (entry.id.empty()) throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": empty id");
    if (entry.text.empty()) throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": empty text");
    entry.embedding = detail::parse_embedding_field(obj, line_no);
    if (auto it = obj.find("pseudo_queries"); it != obj.end() && !it->is_null()) {
        if (!it->is_array()) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": pseudo_queries must be an array");
        }
        for (const auto& pq : *it) {
            PseudoQueryEntry q;
            if (pq.is_string()) {
                q.text = pq.get<std::string>();
            } else if (pq.is_object()) {
                q.text = detail::required_string(pq, "text", line_no);
                q.id = pq.value("id", std::string());
                q.embedding = detail::parse_embedding_field(pq, line_no);
            } else {
                throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": malformed pseudo-query");
            }
            if (q.text.empty()) {
                throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": empty pseudo-query text");
            }
            entry.pseudo_queries.push_back(std::move(q));
        }
    }
    return entry;
}

/// Reads a line-delimited corpus. Blank lines are skipped.
inline std::vector<CorpusEntry> parse_corpus(std::istream& in) {
    std::vector<CorpusEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(parse_corpus_line(line, line_no));
    }
    return out;
}

inline nlohmann::json to_json(const CorpusEntry& e) {
    nlohmann::json obj{{"id", e.id}, {"topic", e.topic}, {"text", e.text}};
    if (e.embedding) obj["embedding"] = std::vector<double>(e.embedding->values().begin(), e.embedding->values().end());
    auto pqs = nlohmann::json::array();
    for (const auto& q : e.pseudo_queries) {
        nlohmann::json p{{"text", q.text}};
        if (!q.id.empty()) p["id"] = q.id;
        if (q.embedding) p["embedding"] = std::vector<double>(q.embedding->values().begin(), q.embedding->values().end());
        pqs.push_back(std::move(p));
    }
    obj["pseudo_queries"] = std::move(pqs);
    return obj;
}

// ---------------------------------------------------------------------------
// Index
// ---------------------------------------------------------------------------

struct ContextRecord {
    std::string id;
    std::string topic;
    std::string text;
    std::vector<std::string> pseudo_query_ids;

    friend bool operator==(const ContextRecord&, const ContextRecord&) = default;
};

struct PseudoQueryRecord {
    std::string id;
    std::string parent_context_id;
    std::size_t parent = 0;  // row of the parent in CorpusIndex::contexts
    std::string text;

    friend bool operator==(const PseudoQueryRecord&, const PseudoQueryRecord&) = default;
};

/// How foreign (context, pseudo-query) pairs are chosen as negatives.
struct NegativePairStrategy {
    enum class Kind : std::uint8_t { AllCross = 0, CrossTopic = 1, Sampled = 2 };

    Kind kind = Kind::CrossTopic;
    std::uint64_t sample_count = 0;
    std::uint64_t seed = 0;

    static NegativePairStrategy all_cross() { return {Kind::AllCross, 0, 0}; }
    static NegativePairStrategy cross_topic() { return {Kind::CrossTopic, 0, 0}; }
    static NegativePairStrategy sampled(std::uint64_t n, std::uint64_t seed) { return {Kind::Sampled, n, seed}; }

    /// all-cross | cross-topic | sampled:N[:SEED]
    static NegativePairStrategy parse(const std::string& s) {
        if (s == "all-cross") return all_cross();
        if (s == "cross-topic") return cross_topic();
        if (s.rfind("sampled:", 0) == 0) {
            const std::string rest = s.substr(8);
            const auto colon = rest.find(':');
            try {
                std::size_t used = 0;
                const std::string n_str = rest.substr(0, colon);
                const auto n = std::stoull(n_str, &used);
                if (used != n_str.size() || n == 0) throw std::invalid_argument(s);
                std::uint64_t seed = 0;
                if (colon != std::string::npos) {
                    const std::string seed_str = rest.substr(colon + 1);
                    seed = std::stoull(seed_str, &used);
                    if (used != seed_str.size()) throw std::invalid_argument(s);
                }
                return sampled(n, seed);
            } catch (const std::logic_error&) {
            }
        }
        throw Error(ErrorCode::InvalidArgument, "unknown negative strategy '" + s + "'");
    }

    std::string to_string() const {
        switch (kind) {
            case Kind::AllCross: return "all-cross";
            case Kind::CrossTopic: return "cross-topic";
            case Kind::Sampled: return "sampled:" + std::to_string(sample_count) + ":" + std::to_string(seed);
        }
        return "unknown";
    }

    friend bool operator==(const NegativePairStrategy&, const NegativePairStrategy&) = default;
};

/// Cached P(D) for a configured policy and distribution source.
struct CutoffCache {
    PolicySpec policy = PolicySpec::minimum();
    SampleLabel source = SampleLabel::Positive;
    double value = 0.0;

    friend bool operator==(const CutoffCache&, const CutoffCache&) = default;
};

/// Validated corpus: records, their unit-normalized embeddings, and (after
/// fitting) the positive and negative similarity samples. Immutable once
/// fitted; share it through std::shared_ptr<const CorpusIndex>.
struct CorpusIndex {
    std::size_t dim = 0;
    std::string embedder_fingerprint;
    std::vector<ContextRecord> contexts;
    std::vector<PseudoQueryRecord> pseudo_queries;
    EmbeddingMatrix context_vectors;
    EmbeddingMatrix query_vectors;

    bool fitted = false;
    NegativePairStrategy negative_strategy;
    PairSampleSet positive_samples{SampleLabel::Positive, {}};
    PairSampleSet negative_samples{SampleLabel::Negative, {}};
    std::optional<CutoffCache> cutoff_cache;

    /// Contexts without pseudo-queries stay retrievable but are left out of fitting.
    bool excluded_from_fit(std::size_t context) const { return contexts[context].pseudo_query_ids.empty(); }

    std::optional<std::size_t> find_context(const std::string& id) const {
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            if (contexts[i].id == id) return i;
        }
        return std::nullopt;
    }

    const PairSampleSet& samples(SampleLabel source, PairSampleSet& scratch) const {
        switch (source) {
            case SampleLabel::Positive: return positive_samples;
            case SampleLabel::Negative: return negative_samples;
            case SampleLabel::Combined:
                scratch = PairSampleSet::merged(SampleLabel::Combined, positive_samples, negative_samples);
                return scratch;
        }
        return positive_samples;
    }

    /// Checks referential integrity and dimension bookkeeping.
    void validate() const {
        if (context_vectors.rows() != contexts.size() || query_vectors.rows() != pseudo_queries.size()) {
            throw Error(ErrorCode::CorruptIndex, "record and embedding counts disagree");
        }
        if ((!contexts.empty() && context_vectors.dim() != dim) ||
            (!pseudo_queries.empty() && query_vectors.dim() != dim)) {
            throw Error(ErrorCode::DimensionMismatch, "stored embedding dim disagrees with corpus dim");
        }
        std::unordered_map<std::string, std::size_t> ctx_ids;
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            if (!ctx_ids.emplace(contexts[i].id, i).second) {
                throw Error(ErrorCode::DuplicateId, "context id '" + contexts[i].id + "'");
            }
        }
        std::unordered_map<std::string, std::size_t> pq_ids;
        for (std::size_t j = 0; j < pseudo_queries.size(); ++j) {
            const auto& pq = pseudo_queries[j];
            if (!pq_ids.emplace(pq.id, j).second) throw Error(ErrorCode::DuplicateId, "pseudo-query id '" + pq.id + "'");
            auto it = ctx_ids.find(pq.parent_context_id);
            if (it == ctx_ids.end() || it->second != pq.parent) {
                throw Error(ErrorCode::ReferentialIntegrity, "pseudo-query '" + pq.id + "' has no parent context");
            }
        }
        for (const auto& c : contexts) {
            for (const auto& id : c.pseudo_query_ids) {
                auto it = pq_ids.find(id);
                if (it == pq_ids.end() || pseudo_queries[it->second].parent_context_id != c.id) {
                    throw Error(ErrorCode::ReferentialIntegrity,
                                "context '" + c.id + "' lists pseudo-query '" + id + "' that does not point back");
                }
            }
        }
    }

    friend bool operator==(const CorpusIndex&, const CorpusIndex&) = default;
};

using EmbeddingProvider = std::function<std::vector<Embedding>(const std::vector<std::string>& texts)>;

struct IngestOptions {
    /// Fill records that carry no inline embedding. Looked up first in
    /// `precomputed` (by record id), then through `embedder`.
    bool embed_missing = false;
    std::unordered_map<std::string, Embedding> precomputed;
    EmbeddingProvider embedder;
    /// Recorded as "<embedder_name>:<dim>".
    std::string embedder_name = "precomputed";
};

/// Validates a parsed corpus and builds an unfitted index.
inline CorpusIndex ingest(const std::vector<CorpusEntry>& entries, const IngestOptions& options = {}) {
    struct Slot {
        std::string id;
        std::string text;
        const std::optional<Embedding>* inline_embedding;
    };
    std::vector<Slot> ctx_slots;
    std::vector<Slot> pq_slots;
    CorpusIndex index;

    std::unordered_set<std::string> ctx_ids;
    std::unordered_set<std::string> pq_ids;
    for (const auto& e : entries) {
        if (!ctx_ids.insert(e.id).second) throw Error(ErrorCode::DuplicateId, "context id '" + e.id + "'");
        ContextRecord c{e.id, e.topic, e.text, {}};
        for (std::size_t j = 0; j < e.pseudo_queries.size(); ++j) {
            const auto& q = e.pseudo_queries[j];
            std::string qid = q.id.empty() ? e.id + "/q" + std::to_string(j) : q.id;
            if (!pq_ids.insert(qid).second) throw Error(ErrorCode::DuplicateId, "pseudo-query id '" + qid + "'");
            c.pseudo_query_ids.push_back(qid);
            index.pseudo_queries.push_back({qid, e.id, index.contexts.size(), q.text});
            pq_slots.push_back({qid, q.text, &q.embedding});
        }
        index.contexts.push_back(std::move(c));
        ctx_slots.push_back({e.id, e.text, &e.embedding});
    }
    if (index.contexts.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no records");

    // Resolve embeddings: inline, then precomputed, then the embedder.
    std::vector<std::optional<Embedding>> resolved(ctx_slots.size() + pq_slots.size());
    std::vector<std::size_t> to_embed;
    auto resolve = [&](const Slot& slot, std::size_t k) {
        if (*slot.inline_embedding) {
            resolved[k] = **slot.inline_embedding;
            return;
        }
        if (options.embed_missing) {
            if (auto it = options.precomputed.find(slot.id); it != options.precomputed.end()) {
                resolved[k] = it->second;
                return;
            }
            if (options.embedder) {
                to_embed.push_back(k);
                return;
            }
        }
        throw Error(ErrorCode::MissingEmbedding, "record '" + slot.id + "' has no embedding");
    };
    for (std::size_t i = 0; i < ctx_slots.size(); ++i) resolve(ctx_slots[i], i);
    for (std::size_t j = 0; j < pq_slots.size(); ++j) resolve(pq_slots[j], ctx_slots.size() + j);

    if (!to_embed.empty()) {
        std::vector<std::string> texts;
        texts.reserve(to_embed.size());
        for (auto k : to_embed) {
            texts.push_back(k < ctx_slots.size() ? ctx_slots[k].text : pq_slots[k - ctx_slots.size()].text);
        }
        auto embedded = options.embedder(texts);
        if (embedded.size() != texts.size()) {
            throw Error(ErrorCode::MalformedResponse, "embedder returned " + std::to_string(embedded.size()) +
                                                          " vectors for " + std::to_string(texts.size()) + " texts");
        }
        for (std::size_t n = 0; n < to_embed.size(); ++n) resolved[to_embed[n]] = std::move(embedded[n]);
    }

    index.dim = resolved.front()->dim();
    index.context_vectors = EmbeddingMatrix(index.dim);
    index.query_vectors = EmbeddingMatrix(index.dim);
    auto add = [&](EmbeddingMatrix& m, const Slot& slot, const Embedding& v) {
        if (v.dim() != index.dim) {
            throw Error(ErrorCode::DimensionMismatch, "record '" + slot.id + "' has dim " + std::to_string(v.dim()) +
                                                          ", corpus dim is " + std::to_string(index.dim));
        }
        if (v.is_zero()) throw Error(ErrorCode::ZeroVector, "record '" + slot.id + "' has a zero embedding");
        m.append(v);
    };
    for (std::size_t i = 0; i < ctx_slots.size(); ++i) add(index.context_vectors, ctx_slots[i], *resolved[i]);
    for (std::size_t j = 0; j < pq_slots.size(); ++j) {
        add(index.query_vectors, pq_slots[j], *resolved[ctx_slots.size() + j]);
    }
    index.embedder_fingerprint = options.embedder_name + ":" + std::to_string(index.dim);
    index.validate();
    return index;
}

inline CorpusIndex ingest(std::istream& in, const IngestOptions& options = {}) {
    return ingest(parse_corpus(in), options);
}

struct FitOptions {
    /// Percentile estimates below this many positive pairs are meaningless.
    std::size_t min_positive_samples = 20;
};

struct FitReport {
    std::vector<std::string> warnings;
};

/// Computes positive samples over every (context, own pseudo-query) pair and
/// negative samples over the foreign pairs chosen by `strategy`.
inline CorpusIndex fit_distributions(CorpusIndex index, const NegativePairStrategy& strategy,
                                     const FitOptions& options = {}, FitReport* fit_report = nullptr) {
    if (index.contexts.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no contexts");

    std::vector<std::size_t> fitted_contexts;
    for (std::size_t i = 0; i < index.contexts.size(); ++i) {
        if (index.excluded_from_fit(i)) {
            if (fit_report) {
                fit_report->warnings.push_back("context '" + index.contexts[i].id +
                                               "' has no pseudo-queries; excluded from fitting");
            }
        } else {
            fitted_contexts.push_back(i);
        }
    }
    if (fitted_contexts.empty()) throw Error(ErrorCode::EmptyCorpus, "no context has pseudo-queries");

    const auto& C = index.context_vectors;
    const auto& Q = index.query_vectors;

    std::vector<double> positive;
    positive.reserve(Q.rows());
    for (std::size_t j = 0; j < Q.rows(); ++j) positive.push_back(C.similarity(index.pseudo_queries[j].parent, Q, j));
    if (positive.size() < options.min_positive_samples) {
        throw Error(ErrorCode::InsufficientSamples, std::to_string(positive.size()) + " positive pairs, need at least " +
                                                        std::to_string(options.min_positive_samples));
    }

    std::vector<double> negative;
    switch (strategy.kind) {
        case NegativePairStrategy::Kind::AllCross:
        case NegativePairStrategy::Kind::CrossTopic: {
            const bool topic_filter = strategy.kind == NegativePairStrategy::Kind::CrossTopic;
            for (auto i : fitted_contexts) {
                for (std::size_t j = 0; j < Q.rows(); ++j) {
                    const auto parent = index.pseudo_queries[j].parent;
                    if (parent == i) continue;
                    if (topic_filter && index.contexts[parent].topic == index.contexts[i].topic) continue;
                    negative.push_back(C.similarity(i, Q, j));
                }
            }
            break;
        }
        case NegativePairStrategy::Kind::Sampled: {
            // Cross pairs enumerated context-major; pair p of context slot s is
            // the p-th pseudo-query whose parent is not that context.
            std::vector<std::uint64_t> prefix{0};
            for (auto i : fitted_contexts) {
                prefix.push_back(prefix.back() + (Q.rows() - index.contexts[i].pseudo_query_ids.size()));
            }
            const std::uint64_t pool = prefix.back();
            std::vector<std::uint64_t> picks;
            if (strategy.sample_count >= pool) {
                picks.resize(pool);
                for (std::uint64_t p = 0; p < pool; ++p) picks[p] = p;
            } else {
                // Floyd's algorithm: sample_count distinct values from [0, pool).
                std::mt19937_64 rng(strategy.seed);
                std::unordered_set<std::uint64_t> chosen;
                chosen.reserve(strategy.sample_count * 2);
                for (std::uint64_t r = pool - strategy.sample_count; r < pool; ++r) {
                    const std::uint64_t t = std::uniform_int_distribution<std::uint64_t>(0, r)(rng);
                    if (!chosen.insert(t).second) chosen.insert(r);
                }
                picks.assign(chosen.begin(), chosen.end());
                std::sort(picks.begin(), picks.end());
            }
            // Pseudo-queries of a context are contiguous rows in ingest order.
            std::vector<std::size_t> first_row(index.contexts.size(), 0);
            for (std::size_t j = Q.rows(); j-- > 0;) first_row[index.pseudo_queries[j].parent] = j;
            negative.reserve(picks.size());
            std::size_t slot = 0;
            for (auto p : picks) {
                while (prefix[slot + 1] <= p) ++slot;
                const std::size_t i = fitted_contexts[slot];
                std::uint64_t offset = p - prefix[slot];
                const std::size_t own_first = first_row[i];
                const std::size_t own_count = index.contexts[i].pseudo_query_ids.size();
                std::size_t j = offset < own_first ? offset : offset + own_count;
                negative.push_back(C.similarity(i, Q, j));
            }
            break;
        }
    }

    index.positive_samples = PairSampleSet(SampleLabel::Positive, std::move(positive));
    index.negative_samples = PairSampleSet(SampleLabel::Negative, std::move(negative));
    index.negative_strategy = strategy;
    index.fitted = true;
    index.cutoff_cache.reset();
    if (fit_report && index.negative_samples.empty()) {
        fit_report->warnings.push_back("negative strategy " + strategy.to_string() + " selected no pairs");
    }
    return index;
}

/// Stores policy_value(samples(source), policy) on the index.
inline void cache_cutoff(CorpusIndex& index, const PolicySpec& policy, SampleLabel source) {
    if (!index.fitted) throw Error(ErrorCode::UnfittedIndex, "index has no fitted distributions");
    PairSampleSet scratch;
    index.cutoff_cache = CutoffCache{policy, source, policy_value(index.samples(source, scratch), policy)};
}

}  // namespace cag
