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
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cag/error.hpp"

namespace cag {

enum class ConfigSource { Default, File, Env, Flag };

inline std::string_view to_string(ConfigSource s) {
    switch (s) {
        case ConfigSource::Default: return "default";
        case ConfigSource::File: return "file";
        case ConfigSource::Env: return "env";
        case ConfigSource::Flag: return "flag";
    }
    return "unknown";
}

/// Layered key/value settings. Later layers win: default < file < env < flag.
/// Keys are dotted ("gate.policy"); the matching environment variable is the
/// key upper-cased with dots as underscores and a CAG_ prefix
/// (CAG_GATE_POLICY).
class CliConfig {
public:
    struct Entry {
        std::string value;
        ConfigSource source = ConfigSource::Default;
    };

    static CliConfig with_defaults() {
        CliConfig c;
        const std::pair<const char*, const char*> defaults[] = {
            {"embedder.base_url", "http://127.0.0.1:8080/v1"},
            {"embedder.model", "all-mpnet-base-v2"},
            {"embedder.api_key_env", "CAG_API_KEY"},
            {"embedder.timeout_ms", "30000"},
            {"embedder.max_batch", "64"},
            {"embedder.retries", "3"},
            {"embedder.backoff_ms", "200"},
            {"embedder.max_in_flight", "4"},
            {"gate.policy", "p5"},
            {"gate.threshold", "0"},
            {"gate.source", "positive"},
            {"fit.negative_strategy", "cross-topic"},
            {"fit.min_positive_samples", "1"},
            {"route.k", "3"},
            {"route.templates", ""},
            {"route.rag_template", ""},
            {"route.direct_template", ""},
            {"route.examples", ""},
            {"serve.bind", "127.0.0.1"},
            {"serve.port", "8088"},
            {"serve.token_env", ""},
            {"analysis.max_exact_pairs", "10000000"},
            {"analysis.seed", "0"},
        };
        for (const auto& [k, v] : defaults) c.entries_[k] = {v, ConfigSource::Default};
        return c;
    }

    static std::string env_name(const std::string& key) {
        std::string out = "CAG_";
        for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        return out;
    }

    /// Reads a JSON object; nested objects flatten to dotted keys.
    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::IoError, "cannot open config file '" + path + "'");
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "config file: " + std::string(e.what()));
        }
        if (!doc.is_object()) throw Error(ErrorCode::ParseError, "config file must hold an object");
        std::function<void(const nlohmann::json&, const std::string&)> walk = [&](const nlohmann::json& node,
                                                                                   const std::string& prefix) {
            for (auto it = node.begin(); it != node.end(); ++it) {
                const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
                if (it->is_object()) {
                    walk(*it, key);
                } else {
                    require_known(key);
                    entries_[key] = {it->is_string() ? it->get<std::string>() : it->dump(), ConfigSource::File};
                }
            }
        };
        walk(doc, "");
    }

    void load_env() {
        for (auto& [key, entry] : entries_) {
            if (const char* v = std::getenv(env_name(key).c_str())) entry = {v, ConfigSource::Env};
        }
    }

    void set_flag(const std::string& key, const std::string& value) {
        require_known(key);
        entries_[key] = {value, ConfigSource::Flag};
    }

    const std::string& get(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
        return it->second.value;
    }

    ConfigSource source(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
        return it->second.source;
    }

    double get_double(const std::string& key) const {
        const auto& v = get(key);
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used == v.size()) return d;
        } catch (const std::logic_error&) {
        }
        throw Error(ErrorCode::InvalidArgument, "config '" + key + "' is not a number: '" + v + "'");
    }

    std::uint64_t get_uint(const std::string& key) const {
        const auto& v = get(key);
        try {
            std::size_t used = 0;
            const auto n = std::stoull(v, &used);
            if (used == v.size() && v.find('-') == std::string::npos) return n;
        } catch (const std::logic_error&) {
        }
        throw Error(ErrorCode::InvalidArgument, "config '" + key + "' is not a non-negative integer: '" + v + "'");
    }

    const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

    std::string show() const {
        std::string out;
        for (const auto& [k, e] : entries_) out += k + " = " + e.value + "  (" + std::string(to_string(e.source)) + ")\n";
        return out;
    }

private:
    void require_known(const std::string& key) const {
        if (!entries_.count(key)) throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
    }

    std::map<std::string, Entry> entries_;
};

}  // namespace cag
