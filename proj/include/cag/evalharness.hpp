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

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cag/corpus.hpp"
#include "cag/distribution.hpp"
#include "cag/error.hpp"
#include "cag/gate.hpp"
#include "cag/vecmath.hpp"

namespace cag {

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

/// Parameters of a synthetic multi-topic corpus.
///
/// Directions are drawn by normalized Gaussian perturbation:
///
///     sample(mu) = normalize(mu + z / sqrt(kappa)),   z ~ N(0, I / dim)
///
/// so ||z|| is close to one and cos(sample, mu) is close to
/// 1 / sqrt(1 + 1 / kappa). Topic centroids are uniform on the sphere, placed
/// by rejection so every pair is at least cross_topic_min_angle apart.
/// Contexts are sample(centroid); each pseudo-query and each in-domain test
/// query is sample(context). Out-of-domain queries are uniform directions at
/// least cross_topic_min_angle from every centroid.
struct SyntheticSpec {
    std::size_t topics = 17;
    std::size_t contexts_per_topic = 10;
    std::size_t pseudo_queries_per_context = 3;
    std::size_t dim = 64;
    double intra_topic_concentration = 4.0;
    double cross_topic_min_angle = 75.0;  // degrees
    std::size_t in_domain_queries = 170;
    std::size_t out_of_domain_queries = 170;
    std::uint64_t seed = 42;
    /// Rejection attempts per placed centroid or out-of-domain query.
    std::size_t max_attempts = 20000;

    void validate() const {
        if (topics < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 topics");
        if (dim < 8) throw Error(ErrorCode::InvalidArgument, "dim must be at least 8");
        if (contexts_per_topic == 0 || pseudo_queries_per_context == 0) {
            throw Error(ErrorCode::InvalidArgument, "contexts and pseudo-queries per context must be positive");
        }
        if (!(intra_topic_concentration > 0.0)) throw Error(ErrorCode::InvalidArgument, "concentration must be > 0");
        if (!(cross_topic_min_angle >= 0.0 && cross_topic_min_angle <= 180.0)) {
            throw Error(ErrorCode::InvalidArgument, "angle must lie in [0, 180] degrees");
        }
    }
};

struct LabeledQuery {
    std::string text;
    std::optional<Embedding> embedding;
    bool label = false;  // true: retrieval is the right call
};

struct SyntheticData {
    std::vector<CorpusEntry> corpus;
    std::vector<LabeledQuery> queries;
    std::vector<Embedding> centroids;
};

namespace detail {

inline std::vector<double> gaussian_direction(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(dim);
    double sq = 0.0;
    do {
        sq = 0.0;
        for (auto& x : v) {
            x = n(rng);
            sq += x * x;
        }
    } while (sq == 0.0);
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& x : v) x *= inv;
    return v;
}

inline Embedding perturb(std::mt19937_64& rng, const Embedding& mu, double kappa) {
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(mu.dim())));
    const double scale = 1.0 / std::sqrt(kappa);
    std::vector<double> v(mu.values().begin(), mu.values().end());
    for (auto& x : v) x += scale * n(rng);
    return normalize(Embedding(std::move(v)));
}

inline double dot_unit(const Embedding& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const double max_cos = std::cos(spec.cross_topic_min_angle * std::numbers::pi / 180.0);

    SyntheticData out;
    for (std::size_t t = 0; t < spec.topics; ++t) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
            auto cand = detail::gaussian_direction(rng, spec.dim);
            bool ok = true;
            for (const auto& c : out.centroids) {
                if (detail::dot_unit(c, cand) > max_cos) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                out.centroids.emplace_back(std::move(cand));
                placed = true;
            }
        }
        if (!placed) {
            char msg[200];
            std::snprintf(msg, sizeof msg,
                          "placed only %zu of %zu centroids at >= %.1f degrees in dim %zu "
                          "(%zu rejection attempts for the next one)",
                          out.centroids.size(), spec.topics, spec.cross_topic_min_angle, spec.dim, spec.max_attempts);
            throw Error(ErrorCode::InfeasibleSpec, msg);
        }
    }

    std::vector<Embedding> contexts;
    for (std::size_t t = 0; t < spec.topics; ++t) {
        for (std::size_t c = 0; c < spec.contexts_per_topic; ++c) {
            CorpusEntry e;
            e.id = "t" + std::to_string(t) + "-c" + std::to_string(c);
            e.topic = "topic-" + std::to_string(t);
            e.text = "synthetic context " + std::to_string(c) + " of topic " + std::to_string(t);
            e.embedding = detail::perturb(rng, out.centroids[t], spec.intra_topic_concentration);
            for (std::size_t q = 0; q < spec.pseudo_queries_per_context; ++q) {
                PseudoQueryEntry pq;
                pq.text = "synthetic question " + std::to_string(q) + " about " + e.id;
                pq.embedding = detail::perturb(rng, *e.embedding, spec.intra_topic_concentration);
                e.pseudo_queries.push_back(std::move(pq));
            }
            contexts.push_back(*e.embedding);
            out.corpus.push_back(std::move(e));
        }
    }

    std::uniform_int_distribution<std::size_t> pick(0, contexts.size() - 1);
    for (std::size_t i = 0; i < spec.in_domain_queries; ++i) {
        const auto c = pick(rng);
        out.queries.push_back({"in-domain query " + std::to_string(i) + " near " + out.corpus[c].id,
                               detail::perturb(rng, contexts[c], spec.intra_topic_concentration), true});
    }
    for (std::size_t i = 0; i < spec.out_of_domain_queries; ++i) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
            auto cand = detail::gaussian_direction(rng, spec.dim);
            bool ok = true;
            for (const auto& c : out.centroids) {
                if (detail::dot_unit(c, cand) > max_cos) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                out.queries.push_back({"out-of-domain query " + std::to_string(i), Embedding(std::move(cand)), false});
                placed = true;
            }
        }
        if (!placed) {
            throw Error(ErrorCode::InfeasibleSpec, "no direction at >= " + std::to_string(spec.cross_topic_min_angle) +
                                                       " degrees from every centroid");
        }
    }
    return out;
}

inline void write_corpus(const std::string& path, const std::vector<CorpusEntry>& corpus) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
    for (const auto& e : corpus) out << to_json(e).dump() << '\n';
    if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Labeled queries
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const LabeledQuery& q) {
    nlohmann::json j{{"label", q.label}};
    if (!q.text.empty()) j["text"] = q.text;
    if (q.embedding) j["embedding"] = std::vector<double>(q.embedding->values().begin(), q.embedding->values().end());
    return j;
}

inline void write_labeled_queries(const std::string& path, const std::vector<LabeledQuery>& queries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
    for (const auto& q : queries) out << to_json(q).dump() << '\n';
    if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

/// Line-delimited {"text" and/or "embedding", "label": bool} records.
inline std::vector<LabeledQuery> load_labeled_queries(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
    std::vector<LabeledQuery> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            LabeledQuery q;
            q.label = j.at("label").get<bool>();
            q.text = j.value("text", std::string());
            if (j.contains("embedding")) q.embedding = Embedding(j["embedding"].get<std::vector<double>>());
            if (q.text.empty() && !q.embedding) throw Error(ErrorCode::ParseError, "record needs text or embedding");
            out.push_back(std::move(q));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(n) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(n) + ": " + e.what());
        }
    }
    if (out.empty()) throw Error(ErrorCode::ParseError, "'" + path + "' holds no labeled queries");
    return out;
}

/// Questions from a SQuAD-format JSON file, labeled as out-of-domain.
inline std::vector<LabeledQuery> load_squad_questions(const std::string& path, std::size_t limit = 0) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
    std::vector<LabeledQuery> out;
    try {
        const auto doc = nlohmann::json::parse(in);
        for (const auto& article : doc.at("data")) {
            for (const auto& para : article.at("paragraphs")) {
                for (const auto& qa : para.at("qas")) {
                    out.push_back({qa.at("question").get<std::string>(), std::nullopt, false});
                    if (limit && out.size() >= limit) return out;
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("SQuAD file: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct RoutingMetrics {
    std::size_t n = 0;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0;
    std::optional<double> precision;  // undefined when nothing was routed to retrieval
    std::optional<double> recall;     // undefined when no query is labeled positive
    std::optional<double> auc;        // undefined with a single class
    bool single_class = false;

    nlohmann::json to_json() const {
        auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
        return nlohmann::json{{"n", n},         {"tp", tp},
                              {"fp", fp},       {"fn", fn},
                              {"tn", tn},       {"accuracy", accuracy},
                              {"precision", opt(precision)}, {"recall", opt(recall)},
                              {"auc", opt(auc)}, {"single_class", single_class}};
    }
};

inline RoutingMetrics score_decisions(const std::vector<GateDecision>& decisions, const std::vector<bool>& labels) {
    if (decisions.empty()) throw Error(ErrorCode::EmptyQuerySet, "no queries to evaluate");
    RoutingMetrics m;
    m.n = decisions.size();
    std::vector<double> pos_scores, neg_scores;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        const bool predicted = decisions[i].retrieve;
        if (labels[i]) {
            (predicted ? m.tp : m.fn)++;
            pos_scores.push_back(decisions[i].score);
        } else {
            (predicted ? m.fp : m.tn)++;
            neg_scores.push_back(decisions[i].score);
        }
    }
    m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.n);
    if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    if (m.tp + m.fn > 0) m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    m.single_class = pos_scores.empty() || neg_scores.empty();
    if (!m.single_class) {
        m.auc = separation_auc(PairSampleSet(SampleLabel::Positive, std::move(pos_scores)),
                               PairSampleSet(SampleLabel::Negative, std::move(neg_scores)),
                               std::numeric_limits<std::uint64_t>::max());
    }
    return m;
}

namespace detail {

inline std::vector<Embedding> query_embeddings(const std::vector<LabeledQuery>& queries,
                                               const EmbeddingProvider& embedder) {
    std::vector<Embedding> out(queries.size());
    std::vector<std::string> texts;
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (queries[i].embedding) {
            out[i] = *queries[i].embedding;
        } else {
            texts.push_back(queries[i].text);
            slots.push_back(i);
        }
    }
    if (!texts.empty()) {
        if (!embedder) throw Error(ErrorCode::MissingEmbedding, "query '" + texts.front() + "' has no embedding");
        auto embedded = embedder(texts);
        for (std::size_t k = 0; k < slots.size(); ++k) out[slots[k]] = std::move(embedded.at(k));
    }
    return out;
}

inline std::vector<bool> labels_of(const std::vector<LabeledQuery>& queries) {
    std::vector<bool> labels;
    for (const auto& q : queries) labels.push_back(q.label);
    return labels;
}

}  // namespace detail

inline RoutingMetrics evaluate_gate(const Gate& gate, const std::vector<LabeledQuery>& queries,
                                    const EmbeddingProvider& embedder = nullptr) {
    if (queries.empty()) throw Error(ErrorCode::EmptyQuerySet, "no queries to evaluate");
    const auto embeddings = detail::query_embeddings(queries, embedder);
    return score_decisions(gate.classify_batch(embeddings), detail::labels_of(queries));
}

struct SweepRow {
    PolicySpec policy;
    double threshold = 0.0;
    double cutoff = 0.0;
    RoutingMetrics metrics;
};

/// One RoutingMetrics row per (policy, threshold) cell, policies outermost.
inline std::vector<SweepRow> sweep(std::shared_ptr<const CorpusIndex> index, const std::vector<LabeledQuery>& queries,
                                   const std::vector<PolicySpec>& policies, const std::vector<double>& thresholds,
                                   SampleLabel source = SampleLabel::Positive,
                                   const EmbeddingProvider& embedder = nullptr) {
    if (policies.empty() || thresholds.empty()) throw Error(ErrorCode::InvalidArgument, "empty sweep grid");
    if (queries.empty()) throw Error(ErrorCode::EmptyQuerySet, "no queries to evaluate");
    const auto embeddings = detail::query_embeddings(queries, embedder);
    const auto labels = detail::labels_of(queries);
    std::vector<SweepRow> rows;
    for (const auto& policy : policies) {
        const Gate base = build_gate(index, GateConfig{policy, 0.0, source});
        for (double t : thresholds) {
            const Gate g = base.with_threshold(t);
            rows.push_back({policy, t, g.cutoff(), score_decisions(g.classify_batch(embeddings), labels)});
        }
    }
    return rows;
}

inline std::string sweep_table(const std::vector<SweepRow>& rows) {
    auto fmt = [](const std::optional<double>& v) {
        char b[16];
        if (!v) return std::string("       n/a");
        std::snprintf(b, sizeof b, "%10.4f", *v);
        return std::string(b);
    };
    std::string out;
    char line[200];
    std::snprintf(line, sizeof line, "%-10s %8s %8s %10s %10s %10s %10s\n", "policy", "T", "cutoff", "accuracy",
                  "precision", "recall", "auc");
    out += line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-10s %8.3f %8.4f %10.4f %s %s %s\n", r.policy.to_string().c_str(),
                      r.threshold, r.cutoff, r.metrics.accuracy, fmt(r.metrics.precision).c_str(),
                      fmt(r.metrics.recall).c_str(), fmt(r.metrics.auc).c_str());
        out += line;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Replication on the published benchmark
// ---------------------------------------------------------------------------

/// Published positive/negative statistics for the 17-topic benchmark with
/// all-mpnet-base-v2 embeddings (rows: minimum, p5, q1, mean, median, q3,
/// p95, maximum).
struct PublishedReference {
    static constexpr DistributionSummary positive{0.110, 0.554, 0.662, 0.705, 0.716, 0.762, 0.836, 0.912, 0};
    static constexpr DistributionSummary negative{-0.193, -0.052, -0.000, 0.047, 0.039, 0.086, 0.219, 0.654, 0};
    static constexpr double dominance = 0.987;
    static constexpr double tolerance = 0.05;
};

struct ReplicationReport {
    AnalysisReport computed;

    nlohmann::json to_json() const {
        auto deltas = [](const DistributionSummary& c, const DistributionSummary& p) {
            return nlohmann::json{{"minimum", c.minimum - p.minimum}, {"p5", c.p5 - p.p5},
                                  {"q1", c.q1 - p.q1},                {"mean", c.mean - p.mean},
                                  {"median", c.median - p.median},    {"q3", c.q3 - p.q3},
                                  {"p95", c.p95 - p.p95},             {"maximum", c.maximum - p.maximum}};
        };
        auto j = computed.to_json();
        j["published"] = {{"positive", cag::to_json(PublishedReference::positive)},
                          {"negative", cag::to_json(PublishedReference::negative)},
                          {"dominance", PublishedReference::dominance}};
        j["deltas"] = {{"positive", deltas(computed.positive, PublishedReference::positive)},
                       {"negative", deltas(computed.negative, PublishedReference::negative)},
                       {"auc", computed.separation.auc - PublishedReference::dominance}};
        j["tolerance"] = PublishedReference::tolerance;
        return j;
    }

    std::string to_table() const {
        struct Row {
            const char* name;
            double DistributionSummary::*field;
        };
        static constexpr Row rows[] = {
            {"Minimum", &DistributionSummary::minimum},  {"5th Percentile", &DistributionSummary::p5},
            {"1st Quartile", &DistributionSummary::q1},  {"Mean", &DistributionSummary::mean},
            {"Median", &DistributionSummary::median},    {"3rd Quartile", &DistributionSummary::q3},
            {"95th Percentile", &DistributionSummary::p95}, {"Maximum", &DistributionSummary::maximum},
        };
        const auto& pp = PublishedReference::positive;
        const auto& pn = PublishedReference::negative;
        std::string out;
        char line[200];
        std::snprintf(line, sizeof line, "%-16s %9s %9s %8s | %9s %9s %8s\n", "Policy", "pos", "pos(pub)", "delta",
                      "neg", "neg(pub)", "delta");
        out += line;
        for (const auto& r : rows) {
            const double cp = computed.positive.*r.field, cn = computed.negative.*r.field;
            std::snprintf(line, sizeof line, "%-16s %9.3f %9.3f %+8.3f%s| %9.3f %9.3f %+8.3f%s\n", r.name, cp,
                          pp.*r.field, cp - pp.*r.field,
                          std::abs(cp - pp.*r.field) <= PublishedReference::tolerance ? " " : "*", cn, pn.*r.field,
                          cn - pn.*r.field, std::abs(cn - pn.*r.field) <= PublishedReference::tolerance ? "" : "*");
            out += line;
        }
        std::snprintf(line, sizeof line, "Dominance AUC %.4f vs published ~%.3f (delta %+.4f)\n",
                      computed.separation.auc, PublishedReference::dominance,
                      computed.separation.auc - PublishedReference::dominance);
        out += line;
        out += "* outside the informative tolerance of +/-0.05\n";
        return out;
    }
};

namespace detail {

inline std::string first_string(const nlohmann::json& row, std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
        if (auto it = row.find(k); it != row.end() && it->is_string()) return it->get<std::string>();
    }
    return {};
}

}  // namespace detail

/// Maps published-benchmark rows (JSON array or JSON lines) onto corpus
/// entries. Recognized keys: context|Context|passage, topic|category|field|
/// domain|subject, and questions as an array (questions|pseudo_queries), as
/// numbered fields (question_1.., question1..), or one question per row with
/// rows grouped by identical context text.
inline std::vector<CorpusEntry> load_crsb(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    std::vector<nlohmann::json> rows;
    try {
        const auto first = text.find_first_not_of(" \t\r\n");
        if (first != std::string::npos && text[first] == '[') {
            for (auto& r : nlohmann::json::parse(text)) rows.push_back(std::move(r));
        } else {
            std::istringstream lines(text);
            std::string line;
            while (std::getline(lines, line)) {
                if (line.find_first_not_of(" \t\r") != std::string::npos) rows.push_back(nlohmann::json::parse(line));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("benchmark file: ") + e.what());
    }

    std::vector<CorpusEntry> out;
    std::map<std::string, std::size_t> by_context;
    for (const auto& row : rows) {
        const std::string context = detail::first_string(row, {"context", "Context", "passage"});
        if (context.empty()) throw Error(ErrorCode::ParseError, "benchmark row without a context field");
        auto [it, inserted] = by_context.emplace(context, out.size());
        if (inserted) {
            CorpusEntry e;
            e.id = "crsb-" + std::to_string(out.size());
            e.topic = detail::first_string(row, {"topic", "category", "field", "domain", "subject"});
            e.text = context;
            out.push_back(std::move(e));
        }
        auto& entry = out[it->second];
        auto add = [&](const nlohmann::json& q) {
            if (q.is_string() && !q.get<std::string>().empty()) entry.pseudo_queries.push_back({"", q.get<std::string>(), {}});
        };
        for (const char* k : {"questions", "pseudo_queries"}) {
            if (auto a = row.find(k); a != row.end() && a->is_array()) {
                for (const auto& q : *a) add(q);
            }
        }
        for (int n = 1; n <= 10; ++n) {
            for (const auto& k : {"question_" + std::to_string(n), "question" + std::to_string(n)}) {
                if (auto q = row.find(k); q != row.end()) add(*q);
            }
        }
        for (const char* k : {"question", "Question", "query"}) {
            if (auto q = row.find(k); q != row.end()) add(*q);
        }
    }
    return out;
}

/// Embeds the published benchmark, fits with `strategy` and compares the
/// result against the published statistics.
inline ReplicationReport crsb_replication(const std::vector<CorpusEntry>& entries, const EmbeddingProvider& embedder,
                                          const std::string& embedder_name,
                                          const NegativePairStrategy& strategy = NegativePairStrategy::cross_topic()) {
    IngestOptions opts;
    opts.embed_missing = true;
    opts.embedder = embedder;
    opts.embedder_name = embedder_name;
    auto index = fit_distributions(ingest(entries, opts), strategy);
    return ReplicationReport{report(index.positive_samples, index.negative_samples)};
}

}  // namespace cag
