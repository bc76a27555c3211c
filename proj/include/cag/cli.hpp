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

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "cag/clients.hpp"
#include "cag/config.hpp"
#include "cag/corpus.hpp"
#include "cag/distribution.hpp"
#include "cag/evalharness.hpp"
#include "cag/gate.hpp"
#include "cag/index_io.hpp"
#include "cag/router.hpp"
#include "cag/service.hpp"

namespace cag::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kParse = 2, kNetwork = 3, kValidation = 4 };

inline int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return kUsage;
        case ErrorCode::ParseError:
        case ErrorCode::IoError:
        case ErrorCode::CorruptIndex:
        case ErrorCode::VersionUnsupported: return kParse;
        case ErrorCode::AuthError:
        case ErrorCode::TimeoutError:
        case ErrorCode::ProviderError:
        case ErrorCode::InconsistentDim:
        case ErrorCode::MalformedResponse:
        case ErrorCode::TransformerFailure:
        case ErrorCode::BindError: return kNetwork;
        default: return kValidation;
    }
}

namespace detail {

struct Io {
    std::ostream& out;
    std::ostream& err;
};

/// A flag whose value, when given, overrides a config key.
struct Binding {
    CLI::Option* option;
    std::string key;
    std::string value;
};

class Bindings {
public:
    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        auto b = std::make_unique<Binding>();
        b->key = key;
        b->option = app->add_option(flag, b->value, help + " [" + key + "]");
        items_.push_back(std::move(b));
    }

    void apply(CliConfig& config) const {
        for (const auto& b : items_) {
            if (b->option->count() > 0) config.set_flag(b->key, b->value);
        }
    }

private:
    std::vector<std::unique_ptr<Binding>> items_;
};

inline void add_embedder_flags(CLI::App* app, Bindings& bindings) {
    bindings.add(app, "--embedder-url", "embedder.base_url", "Embeddings endpoint base URL");
    bindings.add(app, "--embedder-model", "embedder.model", "Embedding model name");
    bindings.add(app, "--api-key-env", "embedder.api_key_env", "Environment variable holding the API key");
    bindings.add(app, "--embedder-batch", "embedder.max_batch", "Texts per upstream request");
}

inline void add_gate_flags(CLI::App* app, Bindings& bindings) {
    bindings.add(app, "--policy", "gate.policy", "Cutoff policy: minimum|p<N>|q1|median|mean|q3|maximum");
    bindings.add(app, "-T,--threshold", "gate.threshold", "Threshold subtracted from the policy value");
    bindings.add(app, "--source", "gate.source", "Distribution source: positive|negative|combined");
}

inline EmbedderConfig embedder_config(const CliConfig& c) {
    EmbedderConfig e;
    e.base_url = c.get("embedder.base_url");
    e.model = c.get("embedder.model");
    e.api_key_env = c.get("embedder.api_key_env");
    e.timeout = std::chrono::milliseconds(c.get_uint("embedder.timeout_ms"));
    e.max_batch = c.get_uint("embedder.max_batch");
    e.retry.retries = static_cast<int>(c.get_uint("embedder.retries"));
    e.retry.backoff_base = std::chrono::milliseconds(c.get_uint("embedder.backoff_ms"));
    e.max_in_flight = c.get_uint("embedder.max_in_flight");
    return e;
}

inline GateConfig gate_config(const CliConfig& c) {
    return GateConfig{PolicySpec::parse(c.get("gate.policy")), c.get_double("gate.threshold"),
                      parse_sample_label(c.get("gate.source"))};
}

inline TemplateSet templates(const CliConfig& c) {
    const auto& path = c.get("route.templates");
    TemplateSet t = path.empty() ? TemplateSet::builtin() : TemplateSet::load_manifest(path);
    if (!c.get("route.rag_template").empty()) t.set_default(PromptMode::Rag, c.get("route.rag_template"));
    if (!c.get("route.direct_template").empty()) t.set_default(PromptMode::Direct, c.get("route.direct_template"));
    return t;
}

inline RouteOptions route_options(const CliConfig& c) {
    RouteOptions r;
    r.k = c.get_uint("route.k");
    if (r.k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
    if (!c.get("route.examples").empty()) r.examples = load_examples(c.get("route.examples"));
    return r;
}

/// Accepts a vector file (first record is used) or a bare JSON array.
inline Embedding read_query_embedding(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        try {
            return Embedding(nlohmann::json::parse(text).get<std::vector<double>>());
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "embedding file: " + std::string(e.what()));
        }
    }
    auto vectors = load_vectors(path);
    if (vectors.empty()) throw Error(ErrorCode::ParseError, "embedding file '" + path + "' is empty");
    return vectors.front().embedding;
}

inline std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw Error(ErrorCode::InvalidArgument, "not a number: '" + item + "'");
        }
    }
    return out;
}

inline std::vector<PolicySpec> parse_policy_list(const std::string& s) {
    std::vector<PolicySpec> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(PolicySpec::parse(item));
    return out;
}

inline void print_decision(std::ostream& out, const GateDecision& d) {
    char line[256];
    std::snprintf(line, sizeof line, "retrieve:        %s\nscore:           %.6f\ncutoff:          %.6f\n"
                                     "margin:          %+.6f\nbest_context_id: %s\n",
                  d.retrieve ? "true" : "false", d.score, d.cutoff, d.margin, d.best_context_id.c_str());
    out << line;
}

inline void print_metrics(std::ostream& out, const RoutingMetrics& m) {
    auto opt = [](const std::optional<double>& v) {
        if (!v) return std::string("n/a");
        char b[32];
        std::snprintf(b, sizeof b, "%.4f", *v);
        return std::string(b);
    };
    char line[128];
    std::snprintf(line, sizeof line, "accuracy: %.4f\n", m.accuracy);
    out << "queries: " << m.n << "\n" << line;
    out << "precision: " << opt(m.precision) << "\nrecall: " << opt(m.recall) << "\nauc: " << opt(m.auc) << "\n";
    out << "confusion: tp=" << m.tp << " fp=" << m.fp << " fn=" << m.fn << " tn=" << m.tn << "\n";
    if (m.single_class) out << "warning: labels cover a single class\n";
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

/// Below this many positive pairs percentile cutoffs carry little meaning.
inline constexpr std::size_t kReliablePositiveSamples = 20;

struct IngestArgs {
    std::string corpus;
    std::string out;
    std::string vectors;
    std::string fingerprint_model;
    bool embed_missing = false;
    bool no_fit = false;
};

inline int cmd_ingest(const IngestArgs& a, const CliConfig& cfg, Io io) {
    std::ifstream in(a.corpus);
    if (!in) throw Error(ErrorCode::IoError, "cannot read corpus '" + a.corpus + "'");
    const auto entries = parse_corpus(in);

    IngestOptions opts;
    std::optional<EmbeddingClient> client;
    if (!a.vectors.empty()) {
        opts.embed_missing = true;
        for (auto& v : load_vectors(a.vectors)) opts.precomputed.emplace(v.id, std::move(v.embedding));
    }
    if (a.embed_missing) {
        opts.embed_missing = true;
        client.emplace(embedder_config(cfg));
        opts.embedder = client->as_provider();
    }
    opts.embedder_name = !a.fingerprint_model.empty() ? a.fingerprint_model
                         : a.embed_missing            ? cfg.get("embedder.model")
                                                      : std::string("precomputed");

    CorpusIndex index = ingest(entries, opts);
    FitReport fit_report;
    if (!a.no_fit) {
        index = fit_distributions(std::move(index), NegativePairStrategy::parse(cfg.get("fit.negative_strategy")),
                                  FitOptions{cfg.get_uint("fit.min_positive_samples")}, &fit_report);
        const auto gate = gate_config(cfg);
        cache_cutoff(index, gate.policy, gate.distribution_source);
    }
    for (const auto& w : fit_report.warnings) io.err << "warning: " << w << "\n";
    if (index.fitted && index.positive_samples.count() < kReliablePositiveSamples) {
        io.err << "warning: only " << index.positive_samples.count()
               << " positive pairs; the cutoff is statistically unreliable\n";
    }
    save_index(index, a.out);

    io.out << "index: " << a.out << "\n"
           << "contexts: " << index.contexts.size() << "\n"
           << "pseudo_queries: " << index.pseudo_queries.size() << "\n"
           << "dim: " << index.dim << "\n"
           << "fingerprint: " << index.embedder_fingerprint << "\n";
    if (index.fitted) {
        io.out << "negative_strategy: " << index.negative_strategy.to_string() << "\n"
               << "positive_pairs: " << index.positive_samples.count() << "\n"
               << "negative_pairs: " << index.negative_samples.count() << "\n";
        char line[96];
        std::snprintf(line, sizeof line, "cutoff_cache: %s over %s = %.6f\n",
                      index.cutoff_cache->policy.to_string().c_str(),
                      std::string(to_string(index.cutoff_cache->source)).c_str(), index.cutoff_cache->value);
        io.out << line;
    } else {
        io.out << "fitted: false\n";
    }
    return kOk;
}

inline int cmd_analyze(const std::string& index_path, const std::string& format, const CliConfig& cfg, Io io) {
    const auto index = load_index(index_path);
    if (!index.fitted) throw Error(ErrorCode::UnfittedIndex, "index '" + index_path + "' has not been fitted");
    const auto rep = report(index.positive_samples, index.negative_samples, cfg.get_uint("analysis.max_exact_pairs"),
                            cfg.get_uint("analysis.seed"));
    if (format == "machine") io.out << rep.to_json().dump() << "\n";
    else io.out << rep.to_table();
    return kOk;
}

struct ClassifyArgs {
    std::string index;
    std::string query;
    std::string embedding_file;
    std::string transform = "identity";
    std::string format = "table";
    bool route = false;
};

inline int cmd_classify(const ClassifyArgs& a, const CliConfig& cfg, Io io) {
    if (a.query.empty() && a.embedding_file.empty()) {
        throw Error(ErrorCode::InvalidArgument, "give --query, --embedding-file, or both");
    }
    auto index = std::make_shared<const CorpusIndex>(load_index(a.index));
    const Gate gate = build_gate(index, gate_config(cfg));
    for (const auto& w : gate.warnings()) io.err << "warning: " << w << "\n";

    std::string query_text = a.query;
    Embedding embedding;
    if (!a.embedding_file.empty()) {
        // With both flags the text only fills the prompt; nothing is embedded.
        embedding = read_query_embedding(a.embedding_file);
        if (query_text.empty()) query_text = "(embedding from " + a.embedding_file + ")";
    } else {
        std::optional<GeneratorClient> generator;
        QueryTransformer transformer = identity_transformer();
        if (a.transform == "whitespace") transformer = whitespace_transformer();
        else if (a.transform == "llm") {
            GeneratorConfig g;
            g.base_url = cfg.get("embedder.base_url");
            g.api_key_env = cfg.get("embedder.api_key_env");
            generator.emplace(g);
            transformer = generator->as_transformer();
        } else if (a.transform != "identity") {
            throw Error(ErrorCode::InvalidArgument, "unknown transform '" + a.transform + "'");
        }
        auto t = transform_query(a.query, transformer);
        if (t.fell_back) io.err << "warning: " << t.warning << "\n";
        query_text = t.text;
        EmbeddingClient client(embedder_config(cfg));
        embedding = client.embed_one(query_text);
        check_fingerprint(*index, client.fingerprint(embedding.dim()));
    }

    const bool machine = a.format == "machine";
    if (!a.route) {
        const auto d = gate.classify(embedding);
        if (machine) io.out << nlohmann::json{{"decision", to_json(d, false)}}.dump() << "\n";
        else print_decision(io.out, d);
        return kOk;
    }
    const auto plan = route(gate, query_text, embedding, templates(cfg), route_options(cfg));
    if (machine) {
        io.out << nlohmann::json{{"decision", to_json(plan.decision, false)}, {"plan", to_json(plan, false)}}.dump()
               << "\n";
    } else {
        print_decision(io.out, plan.decision);
        io.out << "mode:            " << to_string(plan.mode) << "\n"
               << "template:        " << plan.template_id << "\n";
        for (const auto& r : plan.retrieved) {
            char line[160];
            std::snprintf(line, sizeof line, "retrieved:       %s (%.6f)\n", r.id.c_str(), r.score);
            io.out << line;
        }
        io.out << "--- prompt ---\n" << plan.rendered_prompt << "\n";
    }
    return kOk;
}

struct EvalArgs {
    std::string index;
    std::string labels;
    std::string crsb;
    std::string squad;
    std::string policies;
    std::string thresholds;
    std::string format = "table";
    std::string write_corpus;
    std::string write_labels;
    bool synthetic = false;
    SyntheticSpec spec;
};

inline int cmd_eval(const EvalArgs& a, const CliConfig& cfg, Io io) {
    const bool machine = a.format == "machine";
    std::optional<EmbeddingClient> client;
    auto embedder = [&]() -> EmbeddingProvider {
        if (!client) client.emplace(embedder_config(cfg));
        return client->as_provider();
    };

    if (!a.crsb.empty()) {
        const auto entries = load_crsb(a.crsb);
        if (entries.empty()) throw Error(ErrorCode::ParseError, "benchmark file holds no rows");
        const auto rep = crsb_replication(entries, embedder(), cfg.get("embedder.model"),
                                          NegativePairStrategy::parse(cfg.get("fit.negative_strategy")));
        if (machine) io.out << rep.to_json().dump() << "\n";
        else io.out << rep.to_table();
        return kOk;
    }

    std::shared_ptr<const CorpusIndex> index;
    std::vector<LabeledQuery> queries;
    nlohmann::json machine_out;
    if (a.synthetic) {
        auto data = generate_synthetic(a.spec);
        if (!a.write_corpus.empty()) write_corpus(a.write_corpus, data.corpus);
        if (!a.write_labels.empty()) write_labeled_queries(a.write_labels, data.queries);
        IngestOptions opts;
        opts.embedder_name = "synthetic";
        index = std::make_shared<const CorpusIndex>(
            fit_distributions(ingest(data.corpus, opts), NegativePairStrategy::parse(cfg.get("fit.negative_strategy")),
                              FitOptions{cfg.get_uint("fit.min_positive_samples")}));
        queries = std::move(data.queries);
        const auto rep = report(index->positive_samples, index->negative_samples);
        const double gap = rep.positive.median - rep.negative.median;
        if (machine) {
            machine_out["separation"] = rep.to_json();
            machine_out["median_gap"] = gap;
        } else {
            char line[160];
            std::snprintf(line, sizeof line,
                          "synthetic corpus: %zu topics x %zu contexts x %zu pseudo-queries, dim %zu, seed %llu\n",
                          a.spec.topics, a.spec.contexts_per_topic, a.spec.pseudo_queries_per_context, a.spec.dim,
                          static_cast<unsigned long long>(a.spec.seed));
            io.out << line;
            std::snprintf(line, sizeof line, "median gap (positive - negative): %.4f\n", gap);
            io.out << rep.to_table() << line;
        }
    } else {
        if (a.index.empty() || a.labels.empty()) {
            throw Error(ErrorCode::InvalidArgument, "eval needs --synthetic, --crsb, or both --index and --labels");
        }
        queries = load_labeled_queries(a.labels);
        index = std::make_shared<const CorpusIndex>(load_index(a.index));
    }
    if (!a.squad.empty()) {
        auto extra = load_squad_questions(a.squad);
        queries.insert(queries.end(), extra.begin(), extra.end());
    }

    bool needs_embedder = false;
    for (const auto& q : queries) needs_embedder |= !q.embedding;
    const EmbeddingProvider provider = needs_embedder ? embedder() : EmbeddingProvider{};
    if (needs_embedder) check_fingerprint(*index, cfg.get("embedder.model") + ":" + std::to_string(index->dim));

    const auto gcfg = gate_config(cfg);
    const Gate gate = build_gate(index, gcfg);
    const auto metrics = evaluate_gate(gate, queries, provider);
    if (machine) {
        machine_out["gate"] = {{"policy", gcfg.policy.to_string()},
                               {"threshold", gcfg.threshold},
                               {"cutoff", gate.cutoff()}};
        machine_out["metrics"] = metrics.to_json();
    } else {
        char line[128];
        std::snprintf(line, sizeof line, "gate: policy %s, T %.4f, cutoff %.6f\n", gcfg.policy.to_string().c_str(),
                      gcfg.threshold, gate.cutoff());
        io.out << line;
        print_metrics(io.out, metrics);
    }

    if (!a.policies.empty() || !a.thresholds.empty()) {
        const auto policies = a.policies.empty() ? std::vector<PolicySpec>{gcfg.policy} : parse_policy_list(a.policies);
        const auto thresholds =
            a.thresholds.empty() ? std::vector<double>{gcfg.threshold} : parse_double_list(a.thresholds);
        const auto rows = sweep(index, queries, policies, thresholds, gcfg.distribution_source, provider);
        if (machine) {
            auto arr = nlohmann::json::array();
            for (const auto& r : rows) {
                arr.push_back({{"policy", r.policy.to_string()},
                               {"threshold", r.threshold},
                               {"cutoff", r.cutoff},
                               {"metrics", r.metrics.to_json()}});
            }
            machine_out["sweep"] = std::move(arr);
        } else {
            io.out << "\n" << sweep_table(rows);
        }
    }
    if (machine) io.out << machine_out.dump() << "\n";
    return kOk;
}

struct ServeArgs {
    std::string index;
};

/// Runs until SIGINT or SIGTERM. Signals are taken synchronously by a waiter
/// thread, which stops the server; in-flight requests finish first.
inline int cmd_serve(const ServeArgs& a, const CliConfig& cfg, Io io) {
    ServiceOptions opts;
    opts.gate = gate_config(cfg);
    opts.templates = templates(cfg);
    opts.route = route_options(cfg);
    opts.index_path = a.index;
    opts.max_exact_pairs = cfg.get_uint("analysis.max_exact_pairs");
    if (const auto& env = cfg.get("serve.token_env"); !env.empty()) {
        const char* token = std::getenv(env.c_str());
        if (!token || !*token) throw Error(ErrorCode::InvalidArgument, "token variable '" + env + "' is not set");
        opts.bearer_token = token;
    }
    opts.embedder = std::make_shared<const EmbeddingClient>(embedder_config(cfg));

    auto index = std::make_shared<const CorpusIndex>(load_index(a.index));
    Service service(std::move(opts));
    service.load_index(index);

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    const auto host = cfg.get("serve.bind");
    const auto port = static_cast<int>(cfg.get_uint("serve.port"));
    if (!service.bind(host, port)) {
        pthread_sigmask(SIG_UNBLOCK, &signals, nullptr);
        throw Error(ErrorCode::BindError, "cannot bind " + host + ":" + std::to_string(port));
    }
    io.err << "serving on " << host << ":" << port << " index " << a.index << " fingerprint "
           << index->embedder_fingerprint << " contexts " << index->contexts.size() << std::endl;

    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        service.stop();
    });
    service.listen_after_bind();
    // Wake the waiter if the server stopped on its own.
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    io.err << "shutdown complete" << std::endl;
    return kOk;
}

}  // namespace detail

/// Entry point shared by the `cag` binary and the in-process tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Retrieval decision gate for retrieval-augmented QA", "cag"};
    app.require_subcommand(1);
    std::string config_file;
    app.add_option("--config", config_file, "JSON config file (flags > env > file > defaults)");

    detail::Bindings bindings;

    detail::IngestArgs ingest_args;
    auto* ingest_cmd = app.add_subcommand("ingest", "Validate a corpus, fit similarity distributions, write an index");
    ingest_cmd->add_option("corpus", ingest_args.corpus, "Corpus file (JSON lines)")->required();
    ingest_cmd->add_option("-o,--out", ingest_args.out, "Output index path")->required();
    ingest_cmd->add_flag("--embed-missing", ingest_args.embed_missing, "Embed records that carry no embedding");
    ingest_cmd->add_option("--vectors", ingest_args.vectors, "Vector file supplying embeddings by record id");
    ingest_cmd->add_option("--fingerprint-model", ingest_args.fingerprint_model,
                           "Embedding model name to record in the index fingerprint");
    ingest_cmd->add_flag("--no-fit", ingest_args.no_fit, "Write the index without fitting distributions");
    bindings.add(ingest_cmd, "--negative-strategy", "fit.negative_strategy",
                 "Negative pairs: all-cross|cross-topic|sampled:N[:SEED]");
    bindings.add(ingest_cmd, "--min-positive-samples", "fit.min_positive_samples",
                 "Fail when fewer positive pairs are found");
    detail::add_gate_flags(ingest_cmd, bindings);
    detail::add_embedder_flags(ingest_cmd, bindings);

    std::string analyze_index;
    std::string analyze_format = "table";
    auto* analyze_cmd = app.add_subcommand("analyze", "Print the positive/negative statistics table and AUC");
    analyze_cmd->add_option("index", analyze_index, "Index file")->required();
    analyze_cmd->add_option("--format", analyze_format, "table|machine")
        ->check(CLI::IsMember({"table", "machine"}));
    bindings.add(analyze_cmd, "--max-exact-pairs", "analysis.max_exact_pairs", "Exact AUC up to this many pairs");
    bindings.add(analyze_cmd, "--seed", "analysis.seed", "Seed for sampled AUC");

    detail::ClassifyArgs classify_args;
    auto* classify_cmd = app.add_subcommand("classify", "Decide retrieve / no-retrieve for one query");
    classify_cmd->add_option("index", classify_args.index, "Index file")->required();
    classify_cmd->add_option("-q,--query", classify_args.query,
                             "Query text; embedded through the embedder unless --embedding-file is given");
    classify_cmd->add_option("-e,--embedding-file", classify_args.embedding_file,
                             "Query embedding: vector file or JSON array");
    classify_cmd->add_flag("--route", classify_args.route, "Also build the prompt plan");
    classify_cmd->add_option("--transform", classify_args.transform, "Query transformation: identity|whitespace|llm")
        ->check(CLI::IsMember({"identity", "whitespace", "llm"}));
    classify_cmd->add_option("--format", classify_args.format, "table|machine")
        ->check(CLI::IsMember({"table", "machine"}));
    detail::add_gate_flags(classify_cmd, bindings);
    bindings.add(classify_cmd, "-k", "route.k", "Contexts retrieved in rag mode");
    bindings.add(classify_cmd, "--templates", "route.templates", "Template manifest");
    bindings.add(classify_cmd, "--rag-template", "route.rag_template", "Rag template id");
    bindings.add(classify_cmd, "--direct-template", "route.direct_template", "Direct template id");
    bindings.add(classify_cmd, "--examples", "route.examples", "Few-shot examples file");
    detail::add_embedder_flags(classify_cmd, bindings);

    detail::EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Routing metrics on labeled or synthetic queries");
    eval_cmd->add_option("--index", eval_args.index, "Index file");
    eval_cmd->add_option("--labels", eval_args.labels, "Labeled query file");
    eval_cmd->add_flag("--synthetic", eval_args.synthetic, "Generate a synthetic corpus and query set");
    eval_cmd->add_option("--topics", eval_args.spec.topics, "Synthetic topics");
    eval_cmd->add_option("--contexts-per-topic", eval_args.spec.contexts_per_topic, "Synthetic contexts per topic");
    eval_cmd->add_option("--queries-per-context", eval_args.spec.pseudo_queries_per_context,
                         "Synthetic pseudo-queries per context");
    eval_cmd->add_option("--dim", eval_args.spec.dim, "Synthetic embedding dimension");
    eval_cmd->add_option("--concentration", eval_args.spec.intra_topic_concentration, "Intra-topic concentration");
    eval_cmd->add_option("--min-angle", eval_args.spec.cross_topic_min_angle, "Minimum centroid angle (degrees)");
    eval_cmd->add_option("--in-domain", eval_args.spec.in_domain_queries, "In-domain test queries");
    eval_cmd->add_option("--out-of-domain", eval_args.spec.out_of_domain_queries, "Out-of-domain test queries");
    eval_cmd->add_option("--seed", eval_args.spec.seed, "Synthetic seed");
    eval_cmd->add_option("--write-corpus", eval_args.write_corpus, "Also write the synthetic corpus here");
    eval_cmd->add_option("--write-labels", eval_args.write_labels, "Also write the synthetic labeled queries here");
    eval_cmd->add_option("--policies", eval_args.policies, "Sweep policies, comma separated");
    eval_cmd->add_option("--thresholds", eval_args.thresholds, "Sweep thresholds, comma separated");
    eval_cmd->add_option("--crsb", eval_args.crsb, "Published benchmark file to replicate (needs an embedder)");
    eval_cmd->add_option("--squad", eval_args.squad, "SQuAD JSON whose questions join as out-of-domain queries");
    eval_cmd->add_option("--format", eval_args.format, "table|machine")->check(CLI::IsMember({"table", "machine"}));
    detail::add_gate_flags(eval_cmd, bindings);
    bindings.add(eval_cmd, "--negative-strategy", "fit.negative_strategy", "Negative pairs for synthetic fitting");
    detail::add_embedder_flags(eval_cmd, bindings);

    detail::ServeArgs serve_args;
    auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
    serve_cmd->add_option("index", serve_args.index, "Index file")->required();
    bindings.add(serve_cmd, "--bind", "serve.bind", "Bind address");
    bindings.add(serve_cmd, "--port", "serve.port", "Port");
    bindings.add(serve_cmd, "--token-env", "serve.token_env", "Environment variable holding a bearer token");
    bindings.add(serve_cmd, "-k", "route.k", "Default contexts retrieved in rag mode");
    bindings.add(serve_cmd, "--templates", "route.templates", "Template manifest");
    detail::add_gate_flags(serve_cmd, bindings);
    detail::add_embedder_flags(serve_cmd, bindings);

    auto* config_cmd = app.add_subcommand("config", "Inspect configuration");
    auto* config_show = config_cmd->add_subcommand("show", "Print every effective value with its provenance");
    config_cmd->require_subcommand(1);
    detail::add_gate_flags(config_show, bindings);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    detail::Io io{out, err};
    try {
        CliConfig cfg = CliConfig::with_defaults();
        if (!config_file.empty()) cfg.load_file(config_file);
        cfg.load_env();
        bindings.apply(cfg);

        if (*ingest_cmd) return detail::cmd_ingest(ingest_args, cfg, io);
        if (*analyze_cmd) return detail::cmd_analyze(analyze_index, analyze_format, cfg, io);
        if (*classify_cmd) return detail::cmd_classify(classify_args, cfg, io);
        if (*eval_cmd) return detail::cmd_eval(eval_args, cfg, io);
        if (*serve_cmd) return detail::cmd_serve(serve_args, cfg, io);
        if (*config_show) {
            out << cfg.show();
            return kOk;
        }
    } catch (const Error& e) {
        err << nlohmann::json{{"error", to_string(e.code())}, {"message", e.what()}}.dump() << "\n";
        return exit_code_for(e.code());
    }
    return kUsage;
}

}  // namespace cag::cli
