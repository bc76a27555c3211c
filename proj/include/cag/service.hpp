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

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "cag/clients.hpp"
#include "cag/corpus.hpp"
#include "cag/distribution.hpp"
#include "cag/gate.hpp"
#include "cag/index_io.hpp"
#include "cag/router.hpp"

namespace cag {

/// Everything a request needs, frozen together. Requests hold a
/// shared_ptr to the snapshot they started on, so a reload never disturbs
/// in-flight work.
struct ServiceSnapshot {
    std::shared_ptr<const CorpusIndex> index;
    Gate gate;
    std::optional<AnalysisReport> report;  // absent when the negative set is empty

    static std::shared_ptr<const ServiceSnapshot> make(std::shared_ptr<const CorpusIndex> index,
                                                       const GateConfig& config,
                                                       std::uint64_t max_exact_pairs = 10'000'000) {
        Gate gate = build_gate(index, config);
        std::optional<AnalysisReport> rep;
        if (!index->negative_samples.empty()) {
            rep = cag::report(index->positive_samples, index->negative_samples, max_exact_pairs);
        }
        return std::make_shared<const ServiceSnapshot>(ServiceSnapshot{std::move(index), std::move(gate), rep});
    }
};

struct ServiceOptions {
    GateConfig gate;
    TemplateSet templates = TemplateSet::builtin();
    RouteOptions route;
    /// Text queries need an embedder; embedding-only deployments leave it unset.
    std::shared_ptr<const EmbeddingClient> embedder;
    /// When non-empty every /v1 endpoint requires "Authorization: Bearer <token>".
    std::string bearer_token;
    /// Path reloaded by POST /v1/admin/reload.
    std::string index_path;
    std::uint64_t max_exact_pairs = 10'000'000;
};

/// HTTP sidecar exposing the gate:
///
///   POST /v1/classify      {query | embedding, threshold?}
///   POST /v1/route         {query | embedding, threshold?, k?, rag_template?, direct_template?}
///   GET  /v1/stats
///   GET  /healthz
///   POST /v1/admin/reload
class Service {
public:
    explicit Service(ServiceOptions options) : options_(std::move(options)) {
        // Plain SO_REUSEADDR: the library default adds SO_REUSEPORT, which lets a
        // second process bind the same port silently.
        server_.set_socket_options([](auto sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
        // Small JSON replies otherwise wait on delayed ACKs.
        server_.set_tcp_nodelay(true);
        install_routes();
    }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    void load(std::shared_ptr<const ServiceSnapshot> snapshot) {
        std::lock_guard lock(mu_);
        snapshot_ = std::move(snapshot);
    }

    void load_index(std::shared_ptr<const CorpusIndex> index) {
        load(ServiceSnapshot::make(std::move(index), options_.gate, options_.max_exact_pairs));
    }

    std::shared_ptr<const ServiceSnapshot> snapshot() const {
        std::lock_guard lock(mu_);
        return snapshot_;
    }

    bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
    int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    bool running() const { return server_.is_running(); }
    void wait_until_ready() const { server_.wait_until_ready(); }

private:
    static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void fail(httplib::Response& res, int status, const std::string& message) {
        reply(res, status, nlohmann::json{{"error", message}});
    }

    static int status_for(const Error& e) {
        switch (e.code()) {
            case ErrorCode::DimensionMismatch:
            case ErrorCode::FingerprintMismatch: return 409;
            case ErrorCode::AuthError:
            case ErrorCode::TimeoutError:
            case ErrorCode::ProviderError:
            case ErrorCode::InconsistentDim:
            case ErrorCode::MalformedResponse: return 502;
            case ErrorCode::UnfittedIndex:
            case ErrorCode::EmptyCorpus: return 503;
            default: return 400;
        }
    }

    bool authorized(const httplib::Request& req, httplib::Response& res) const {
        if (options_.bearer_token.empty()) return true;
        if (req.get_header_value("Authorization") == "Bearer " + options_.bearer_token) return true;
        fail(res, 401, "missing or invalid bearer token");
        return false;
    }

    struct ParsedQuery {
        Embedding embedding;
        std::string text;
        std::optional<double> threshold;
        nlohmann::json body;
    };

    ParsedQuery parse_query(const httplib::Request& req, const ServiceSnapshot& snap) const {
        ParsedQuery out;
        try {
            out.body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception&) {
            throw Error(ErrorCode::ParseError, "body is not valid JSON");
        }
        if (!out.body.is_object()) throw Error(ErrorCode::ParseError, "body must be an object");
        const bool has_query = out.body.contains("query");
        const bool has_embedding = out.body.contains("embedding");
        if (has_query == has_embedding) {
            throw Error(ErrorCode::InvalidArgument, "exactly one of 'query' or 'embedding' is required");
        }
        if (auto t = out.body.find("threshold"); t != out.body.end()) {
            if (!t->is_number()) throw Error(ErrorCode::InvalidArgument, "'threshold' must be a number");
            out.threshold = t->get<double>();
        }
        try {
            if (has_embedding) {
                out.embedding = Embedding(out.body["embedding"].get<std::vector<double>>());
            } else {
                out.text = out.body["query"].get<std::string>();
                if (out.text.empty()) throw Error(ErrorCode::InvalidArgument, "'query' is empty");
                if (!options_.embedder) throw Error(ErrorCode::InvalidArgument, "no embedder configured for text queries");
                auto e = options_.embedder->embed_one(out.text);
                check_fingerprint(*snap.index, options_.embedder->fingerprint(e.dim()));
                out.embedding = std::move(e);
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::InvalidArgument, e.what());
        }
        return out;
    }

    template <class Handler>
    void guarded(const httplib::Request& req, httplib::Response& res, Handler&& handler) const {
        if (!authorized(req, res)) return;
        auto snap = snapshot();
        if (!snap) {
            fail(res, 503, "index not loaded");
            return;
        }
        try {
            handler(*snap);
        } catch (const Error& e) {
            fail(res, status_for(e), e.what());
        } catch (const std::exception& e) {
            fail(res, 500, e.what());
        }
    }

    void install_routes() {
        server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            reply(res, 200, nlohmann::json{{"status", "ok"}, {"index_loaded", snapshot() != nullptr}});
        });

        server_.Post("/v1/classify", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(req, res, [&](const ServiceSnapshot& snap) {
                auto q = parse_query(req, snap);
                const Gate gate = q.threshold ? snap.gate.with_threshold(*q.threshold) : snap.gate;
                reply(res, 200, to_json(gate.classify(q.embedding)));
            });
        });

        server_.Post("/v1/route", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(req, res, [&](const ServiceSnapshot& snap) {
                auto q = parse_query(req, snap);
                RouteOptions opts = options_.route;
                try {
                    if (q.body.contains("k")) opts.k = q.body["k"].get<std::size_t>();
                    if (q.body.contains("rag_template")) opts.rag_template = q.body["rag_template"].get<std::string>();
                    if (q.body.contains("direct_template")) {
                        opts.direct_template = q.body["direct_template"].get<std::string>();
                    }
                    if (q.body.contains("template_id")) {
                        const auto id = q.body["template_id"].get<std::string>();
                        const auto& t = options_.templates.get(id);
                        (t.mode() == PromptMode::Rag ? opts.rag_template : opts.direct_template) = id;
                    }
                } catch (const nlohmann::json::exception& e) {
                    throw Error(ErrorCode::InvalidArgument, e.what());
                }
                if (opts.k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
                const Gate gate = q.threshold ? snap.gate.with_threshold(*q.threshold) : snap.gate;
                const std::string text = q.text.empty() ? std::string("(embedding query)") : q.text;
                const auto plan = route(gate, text, q.embedding, options_.templates, opts);
                auto retrieved = nlohmann::json::array();
                for (const auto& r : plan.retrieved) retrieved.push_back({{"id", r.id}, {"score", r.score}});
                reply(res, 200,
                      nlohmann::json{{"mode", to_string(plan.mode)},
                                     {"prompt", plan.rendered_prompt},
                                     {"template_id", plan.template_id},
                                     {"retrieved", std::move(retrieved)},
                                     {"decision", to_json(plan.decision)}});
            });
        });

        server_.Get("/v1/stats", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(req, res, [&](const ServiceSnapshot& snap) {
                nlohmann::json body = snap.report ? snap.report->to_json() : nlohmann::json::object();
                const auto& cfg = snap.gate.config();
                body["gate"] = {{"policy", cfg.policy.to_string()},
                                {"threshold", cfg.threshold},
                                {"distribution_source", to_string(cfg.distribution_source)},
                                {"cutoff", snap.gate.cutoff()}};
                body["fingerprint"] = snap.index->embedder_fingerprint;
                body["contexts"] = snap.index->contexts.size();
                body["pseudo_queries"] = snap.index->pseudo_queries.size();
                reply(res, 200, body);
            });
        });

        server_.Post("/v1/admin/reload", [this](const httplib::Request& req, httplib::Response& res) {
            if (!authorized(req, res)) return;
            if (options_.index_path.empty()) {
                fail(res, 400, "service was started without an index path");
                return;
            }
            try {
                load_index(std::make_shared<const CorpusIndex>(load_index_file(options_.index_path)));
                reply(res, 200, nlohmann::json{{"reloaded", true}, {"fingerprint", snapshot()->index->embedder_fingerprint}});
            } catch (const Error& e) {
                fail(res, 500, e.what());
            }
        });
    }

    static CorpusIndex load_index_file(const std::string& path) { return cag::load_index(path); }

    ServiceOptions options_;
    httplib::Server server_;
    mutable std::mutex mu_;
    std::shared_ptr<const ServiceSnapshot> snapshot_;
};

}  // namespace cag
