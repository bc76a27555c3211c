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
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cag/corpus.hpp"
#include "cag/error.hpp"
#include "cag/gate.hpp"
#include "cag/vecmath.hpp"

namespace cag {

enum class PromptMode { Rag, Direct };

inline std::string_view to_string(PromptMode m) { return m == PromptMode::Rag ? "rag" : "direct"; }

inline PromptMode parse_prompt_mode(std::string_view s) {
    if (s == "rag") return PromptMode::Rag;
    if (s == "direct") return PromptMode::Direct;
    throw Error(ErrorCode::TemplateError, "unknown template mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

/// Prompt body with {query}, {contexts} (rag only) and {examples} placeholders.
class PromptTemplate {
public:
    PromptTemplate(std::string id, PromptMode mode, std::string body)
        : id_(std::move(id)), mode_(mode), body_(std::move(body)) {
        bool has_contexts = false;
        for (const auto& name : placeholders(body_)) {
            if (name == "contexts") has_contexts = true;
            else if (name != "query" && name != "examples") {
                throw Error(ErrorCode::TemplateError, "template '" + id_ + "' uses unknown placeholder {" + name + "}");
            }
        }
        if (mode_ == PromptMode::Rag && !has_contexts) {
            throw Error(ErrorCode::TemplateError, "rag template '" + id_ + "' lacks {contexts}");
        }
        if (mode_ == PromptMode::Direct && has_contexts) {
            throw Error(ErrorCode::TemplateError, "direct template '" + id_ + "' must not use {contexts}");
        }
    }

    const std::string& id() const noexcept { return id_; }
    PromptMode mode() const noexcept { return mode_; }
    const std::string& body() const noexcept { return body_; }

    std::string render(const std::map<std::string, std::string>& values) const {
        std::string out;
        out.reserve(body_.size());
        std::size_t i = 0;
        while (i < body_.size()) {
            if (body_[i] == '{') {
                const auto close = body_.find('}', i + 1);
                if (close != std::string::npos && is_identifier(std::string_view(body_).substr(i + 1, close - i - 1))) {
                    const std::string name = body_.substr(i + 1, close - i - 1);
                    auto it = values.find(name);
                    if (it == values.end()) {
                        throw Error(ErrorCode::TemplateError, "unresolved placeholder {" + name + "} in '" + id_ + "'");
                    }
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
            out += body_[i++];
        }
        return out;
    }

    static std::vector<std::string> placeholders(std::string_view body) {
        std::vector<std::string> names;
        for (std::size_t i = body.find('{'); i != std::string_view::npos; i = body.find('{', i + 1)) {
            const auto close = body.find('}', i + 1);
            if (close == std::string_view::npos) break;
            const auto name = body.substr(i + 1, close - i - 1);
            if (is_identifier(name)) names.emplace_back(name);
        }
        return names;
    }

private:
    static bool is_identifier(std::string_view s) {
        if (s.empty()) return false;
        return std::all_of(s.begin(), s.end(),
                           [](unsigned char c) { return std::isalnum(c) || c == '_'; }) &&
               !std::isdigit(static_cast<unsigned char>(s.front()));
    }

    std::string id_;
    PromptMode mode_;
    std::string body_;
};

struct FewShotExample {
    std::string question;
    std::string answer;
};

/// Templates keyed by id plus the default rag/direct choices.
class TemplateSet {
public:
    void add(PromptTemplate t) {
        const auto id = t.id();
        const auto mode = t.mode();
        templates_.insert_or_assign(id, std::move(t));
        if (mode == PromptMode::Rag && default_rag_.empty()) default_rag_ = id;
        if (mode == PromptMode::Direct && default_direct_.empty()) default_direct_ = id;
    }

    const PromptTemplate& get(const std::string& id) const {
        auto it = templates_.find(id);
        if (it == templates_.end()) throw Error(ErrorCode::TemplateError, "unknown template '" + id + "'");
        return it->second;
    }

    bool contains(const std::string& id) const { return templates_.count(id) != 0; }

    void set_default(PromptMode mode, const std::string& id) {
        if (get(id).mode() != mode) {
            throw Error(ErrorCode::TemplateError, "template '" + id + "' is not a " + std::string(to_string(mode)) +
                                                      " template");
        }
        (mode == PromptMode::Rag ? default_rag_ : default_direct_) = id;
    }

    const std::string& default_id(PromptMode mode) const {
        const auto& id = mode == PromptMode::Rag ? default_rag_ : default_direct_;
        if (id.empty()) {
            throw Error(ErrorCode::TemplateError, "template set has no " + std::string(to_string(mode)) + " template");
        }
        return id;
    }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        for (const auto& [id, _] : templates_) out.push_back(id);
        return out;
    }

    /// Shipped defaults: one rag prompt, a few-shot direct prompt and a
    /// chain-of-thought direct prompt.
    static TemplateSet builtin() {
        TemplateSet s;
        s.add(PromptTemplate("rag", PromptMode::Rag,
                             "Answer the question using only the context passages below. If they do not contain "
                             "the answer, say so.\n\nContext:\n{contexts}\n\nQuestion: {query}\nAnswer:"));
        s.add(PromptTemplate("direct-fewshot", PromptMode::Direct,
                             "Answer the question from your own knowledge.\n\n{examples}Question: {query}\nAnswer:"));
        s.add(PromptTemplate("direct-cot", PromptMode::Direct,
                             "Answer the question from your own knowledge. Think through the problem step by step, "
                             "then give the final answer on its own line.\n\n{examples}Question: {query}\n"
                             "Reasoning:"));
        return s;
    }

    /// Manifest: {"templates": [{"id", "mode", "file"}], "default_rag", "default_direct"}.
    /// Template files resolve relative to the manifest's directory.
    static TemplateSet load_manifest(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::IoError, "cannot open template manifest '" + path + "'");
        nlohmann::json manifest;
        try {
            manifest = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "template manifest: " + std::string(e.what()));
        }
        const auto base = std::filesystem::path(path).parent_path();
        TemplateSet s;
        try {
            for (const auto& t : manifest.at("templates")) {
                const auto file = base / t.at("file").get<std::string>();
                std::ifstream body_in(file);
                if (!body_in) throw Error(ErrorCode::IoError, "cannot open template '" + file.string() + "'");
                std::stringstream body;
                body << body_in.rdbuf();
                s.add(PromptTemplate(t.at("id").get<std::string>(), parse_prompt_mode(t.at("mode").get<std::string>()),
                                     body.str()));
            }
            if (manifest.contains("default_rag")) s.set_default(PromptMode::Rag, manifest["default_rag"]);
            if (manifest.contains("default_direct")) s.set_default(PromptMode::Direct, manifest["default_direct"]);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "template manifest: " + std::string(e.what()));
        }
        return s;
    }

private:
    std::map<std::string, PromptTemplate> templates_;
    std::string default_rag_;
    std::string default_direct_;
};

// ---------------------------------------------------------------------------
// Query transformation
// ---------------------------------------------------------------------------

using QueryTransformer = std::function<std::string(const std::string&)>;

inline QueryTransformer identity_transformer() {
    return [](const std::string& q) { return q; };
}

/// Collapses whitespace runs and trims both ends.
inline QueryTransformer whitespace_transformer() {
    return [](const std::string& q) {
        std::string out;
        bool pending_space = false;
        for (unsigned char c : q) {
            if (std::isspace(c)) {
                pending_space = !out.empty();
            } else {
                if (pending_space) out += ' ';
                pending_space = false;
                out += static_cast<char>(c);
            }
        }
        return out;
    };
}

struct TransformResult {
    std::string text;
    bool fell_back = false;
    std::string warning;
};

inline TransformResult transform_query(const std::string& query_text, const QueryTransformer& transformer,
                                       bool fallback_to_identity = true) {
    if (query_text.empty()) throw Error(ErrorCode::InvalidArgument, "empty query");
    if (!transformer) return {query_text, false, {}};
    try {
        std::string out = transformer(query_text);
        if (out.empty()) throw Error(ErrorCode::TransformerFailure, "transformer returned an empty query");
        return {std::move(out), false, {}};
    } catch (const std::exception& e) {
        if (!fallback_to_identity) {
            if (const auto* err = dynamic_cast<const Error*>(&e); err && err->code() == ErrorCode::TransformerFailure) {
                throw;
            }
            throw Error(ErrorCode::TransformerFailure, e.what());
        }
        return {query_text, true, std::string("query transformation failed, using original query: ") + e.what()};
    }
}

// ---------------------------------------------------------------------------
// Retrieval and routing
// ---------------------------------------------------------------------------

struct RetrievedContext {
    std::string id;
    std::size_t index = 0;
    double score = 0.0;
};

/// The k most similar contexts, descending by score, ties to the smaller index.
inline std::vector<RetrievedContext> retrieve_top_k(const CorpusIndex& index, const Embedding& query, std::size_t k) {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
    if (index.contexts.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no contexts");
    if (query.dim() != index.dim) {
        throw Error(ErrorCode::DimensionMismatch, "query dim " + std::to_string(query.dim()) + " vs corpus dim " +
                                                      std::to_string(index.dim));
    }
    const Embedding unit = normalize(query);
    std::vector<std::pair<double, std::size_t>> scored(index.contexts.size());
    for (std::size_t i = 0; i < scored.size(); ++i) {
        scored[i] = {index.context_vectors.similarity_unit(i, unit.values().data()), i};
    }
    const auto better = [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
    };
    const std::size_t n = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
    std::vector<RetrievedContext> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back({index.contexts[scored[i].second].id, scored[i].second, scored[i].first});
    return out;
}

struct PromptPlan {
    PromptMode mode = PromptMode::Direct;
    std::string rendered_prompt;
    std::vector<RetrievedContext> retrieved;
    std::string template_id;
    std::string transformed_query;
    GateDecision decision;
};

struct RouteOptions {
    std::size_t k = 3;
    std::string rag_template;     // empty: the set's default
    std::string direct_template;  // empty: the set's default
    std::vector<FewShotExample> examples;
};

inline std::string render_contexts(const CorpusIndex& index, const std::vector<RetrievedContext>& retrieved) {
    std::string out;
    for (std::size_t i = 0; i < retrieved.size(); ++i) {
        if (i) out += "\n\n";
        out += "[" + std::to_string(i + 1) + "] " + index.contexts[retrieved[i].index].text;
    }
    return out;
}

inline std::string render_examples(const std::vector<FewShotExample>& examples) {
    std::string out;
    for (const auto& e : examples) out += "Question: " + e.question + "\nAnswer: " + e.answer + "\n\n";
    return out;
}

/// Classifies the query and renders either the rag or the direct prompt.
/// `query_text` is the already-transformed query that `query_embedding` embeds.
inline PromptPlan route(const Gate& gate, const std::string& query_text, const Embedding& query_embedding,
                        const TemplateSet& templates, const RouteOptions& options = {}) {
    const auto& rag = templates.get(options.rag_template.empty() ? templates.default_id(PromptMode::Rag)
                                                                 : options.rag_template);
    const auto& direct = templates.get(options.direct_template.empty() ? templates.default_id(PromptMode::Direct)
                                                                       : options.direct_template);
    if (rag.mode() != PromptMode::Rag) throw Error(ErrorCode::TemplateError, "'" + rag.id() + "' is not a rag template");
    if (direct.mode() != PromptMode::Direct) {
        throw Error(ErrorCode::TemplateError, "'" + direct.id() + "' is not a direct template");
    }

    PromptPlan plan;
    plan.transformed_query = query_text;
    plan.decision = gate.classify(query_embedding);
    if (plan.decision.retrieve) {
        plan.mode = PromptMode::Rag;
        plan.retrieved = retrieve_top_k(gate.index(), query_embedding, options.k);
        plan.template_id = rag.id();
        plan.rendered_prompt = rag.render({{"query", query_text},
                                           {"contexts", render_contexts(gate.index(), plan.retrieved)},
                                           {"examples", render_examples(options.examples)}});
    } else {
        plan.mode = PromptMode::Direct;
        plan.template_id = direct.id();
        plan.rendered_prompt = direct.render({{"query", query_text}, {"examples", render_examples(options.examples)}});
    }
    return plan;
}

inline nlohmann::json to_json(const GateDecision& d, bool with_timing = true) {
    nlohmann::json j{{"retrieve", d.retrieve},
                     {"score", d.score},
                     {"cutoff", d.cutoff},
                     {"margin", d.margin},
                     {"best_context_id", d.best_context_id}};
    if (with_timing) j["elapsed_ms"] = std::chrono::duration<double, std::milli>(d.elapsed).count();
    return j;
}

inline nlohmann::json to_json(const PromptPlan& p, bool with_timing = true) {
    auto retrieved = nlohmann::json::array();
    for (const auto& r : p.retrieved) retrieved.push_back({{"id", r.id}, {"score", r.score}});
    return nlohmann::json{{"mode", to_string(p.mode)},
                          {"prompt", p.rendered_prompt},
                          {"template_id", p.template_id},
                          {"transformed_query", p.transformed_query},
                          {"retrieved", std::move(retrieved)},
                          {"decision", to_json(p.decision, with_timing)}};
}

/// Reads few-shot examples: one {"question", "answer"} object per line.
inline std::vector<FewShotExample> load_examples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open examples file '" + path + "'");
    std::vector<FewShotExample> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("question").get<std::string>(), j.at("answer").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "examples line " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace cag
