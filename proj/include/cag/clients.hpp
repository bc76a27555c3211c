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

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <semaphore>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "cag/error.hpp"
#include "cag/index_io.hpp"
#include "cag/vecmath.hpp"

namespace cag {

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

struct HttpRequest {
    std::string path;  // appended to the configured base url
    std::string body;
    std::string bearer_token;  // empty: no Authorization header
};

struct HttpResponse {
    int status = 0;  // 0: no response (connection failure)
    std::string body;
    bool timed_out = false;
    std::string transport_error;
};

using HttpTransport = std::function<HttpResponse(const HttpRequest&)>;

/// POSTs JSON to `base_url` + request path with cpp-httplib.
inline HttpTransport make_http_transport(const std::string& base_url, std::chrono::milliseconds timeout) {
    // Split "scheme://host[:port]/prefix" into the client origin and a path prefix.
    const auto scheme_end = base_url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = base_url.find('/', host_start);
    std::string origin = path_start == std::string::npos ? base_url : base_url.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? "" : base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

    return [origin, prefix, timeout](const HttpRequest& req) {
        httplib::Client client(origin);
        const auto secs = static_cast<time_t>(timeout.count() / 1000);
        const auto usecs = static_cast<time_t>((timeout.count() % 1000) * 1000);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);
        httplib::Headers headers;
        if (!req.bearer_token.empty()) headers.emplace("Authorization", "Bearer " + req.bearer_token);
        auto res = client.Post(prefix + req.path, headers, req.body, "application/json");
        HttpResponse out;
        if (!res) {
            out.timed_out = res.error() == httplib::Error::ConnectionTimeout || res.error() == httplib::Error::Read;
            out.transport_error = httplib::to_string(res.error());
            return out;
        }
        out.status = res->status;
        out.body = res->body;
        return out;
    };
}

struct RetryPolicy {
    int retries = 3;
    std::chrono::milliseconds backoff_base{200};
};

using SleepFn = std::function<void(std::chrono::milliseconds)>;

namespace detail {

inline std::string excerpt(const std::string& body) { return body.size() <= 200 ? body : body.substr(0, 200) + "..."; }

inline std::string read_api_key(const std::string& env_name) {
    if (env_name.empty()) return {};
    const char* v = std::getenv(env_name.c_str());
    return v ? std::string(v) : std::string();
}

/// Sends with exponential backoff and jitter on timeouts, connection failures
/// and 5xx. 4xx responses fail immediately.
inline HttpResponse send_with_retry(const HttpTransport& transport, const HttpRequest& req, const RetryPolicy& retry,
                                    const SleepFn& sleep, std::uint64_t jitter_seed) {
    std::mt19937_64 rng(jitter_seed);
    for (int attempt = 0;; ++attempt) {
        HttpResponse res = transport(req);
        if (res.status >= 200 && res.status < 300) return res;
        if (res.status == 401 || res.status == 403) {
            throw Error(ErrorCode::AuthError, "provider rejected credentials (" + std::to_string(res.status) + ")");
        }
        if (res.status >= 400 && res.status < 500) {
            throw Error(ErrorCode::ProviderError, "status " + std::to_string(res.status) + ": " + excerpt(res.body));
        }
        if (attempt >= retry.retries) {
            if (res.timed_out) throw Error(ErrorCode::TimeoutError, "provider timed out: " + res.transport_error);
            if (res.status == 0) throw Error(ErrorCode::ProviderError, "transport failure: " + res.transport_error);
            throw Error(ErrorCode::ProviderError, "status " + std::to_string(res.status) + ": " + excerpt(res.body));
        }
        const auto base = retry.backoff_base * (1LL << std::min(attempt, 16));
        const auto jitter = std::uniform_int_distribution<long long>(0, std::max<long long>(0, base.count() / 2))(rng);
        if (sleep) sleep(base + std::chrono::milliseconds(jitter));
    }
}

inline SleepFn real_sleep() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

struct EmbedderConfig {
    std::string base_url = "http://127.0.0.1:8080/v1";
    std::string model = "all-mpnet-base-v2";
    std::string api_key_env = "CAG_API_KEY";
    std::chrono::milliseconds timeout{30000};
    std::size_t max_batch = 64;
    RetryPolicy retry;
    std::size_t max_in_flight = 4;
};

/// Client for a `POST {base_url}/embeddings` endpoint taking
/// `{model, input: [texts]}` and answering `{data: [{index, embedding}]}`.
/// Shareable across threads; concurrent upstream calls are capped at
/// max_in_flight.
class EmbeddingClient {
public:
    explicit EmbeddingClient(EmbedderConfig config, HttpTransport transport = nullptr, SleepFn sleep = nullptr)
        : config_(std::move(config)),
          transport_(transport ? std::move(transport) : make_http_transport(config_.base_url, config_.timeout)),
          sleep_(sleep ? std::move(sleep) : detail::real_sleep()),
          in_flight_(std::make_shared<std::counting_semaphore<>>(static_cast<std::ptrdiff_t>(
              std::max<std::size_t>(1, config_.max_in_flight)))) {
        if (config_.max_batch == 0) throw Error(ErrorCode::InvalidArgument, "max_batch must be at least 1");
        if (config_.timeout.count() <= 0) throw Error(ErrorCode::InvalidArgument, "timeout must be positive");
    }

    const EmbedderConfig& config() const noexcept { return config_; }

    /// "<model>:<dim>" once the dimension is known.
    std::string fingerprint(std::size_t dim) const { return config_.model + ":" + std::to_string(dim); }

    std::vector<Embedding> embed(const std::vector<std::string>& texts) const {
        if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "no texts to embed");
        for (std::size_t i = 0; i < texts.size(); ++i) {
            if (texts[i].empty()) throw Error(ErrorCode::InvalidArgument, "text " + std::to_string(i) + " is empty");
        }
        std::vector<Embedding> out;
        out.reserve(texts.size());
        for (std::size_t start = 0; start < texts.size(); start += config_.max_batch) {
            const std::size_t end = std::min(texts.size(), start + config_.max_batch);
            auto batch = embed_batch({texts.begin() + static_cast<std::ptrdiff_t>(start),
                                      texts.begin() + static_cast<std::ptrdiff_t>(end)});
            for (auto& e : batch) {
                if (!out.empty() && e.dim() != out.front().dim()) {
                    throw Error(ErrorCode::InconsistentDim, "provider returned mixed embedding dimensions");
                }
                out.push_back(std::move(e));
            }
        }
        return out;
    }

    Embedding embed_one(const std::string& text) const { return embed({text}).front(); }

    EmbeddingProvider as_provider() const {
        return [this](const std::vector<std::string>& texts) { return embed(texts); };
    }

private:
    std::vector<Embedding> embed_batch(const std::vector<std::string>& texts) const {
        HttpRequest req{"/embeddings", nlohmann::json{{"model", config_.model}, {"input", texts}}.dump(),
                        detail::read_api_key(config_.api_key_env)};
        HttpResponse res;
        {
            in_flight_->acquire();
            struct Release {
                std::counting_semaphore<>* s;
                ~Release() { s->release(); }
            } release{in_flight_.get()};
            res = detail::send_with_retry(transport_, req, config_.retry, sleep_, texts.size());
        }
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(res.body);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ProviderError, "unparseable response: " + detail::excerpt(res.body));
        }
        std::vector<std::optional<Embedding>> slots(texts.size());
        try {
            const auto& data = body.at("data");
            if (data.size() != texts.size()) {
                throw Error(ErrorCode::ProviderError, "expected " + std::to_string(texts.size()) + " embeddings, got " +
                                                          std::to_string(data.size()));
            }
            for (std::size_t i = 0; i < data.size(); ++i) {
                const std::size_t idx = data[i].contains("index") ? data[i]["index"].get<std::size_t>() : i;
                if (idx >= slots.size() || slots[idx]) throw Error(ErrorCode::ProviderError, "bad embedding index");
                auto v = Embedding(data[i].at("embedding").get<std::vector<double>>());
                if (i > 0 && slots[0] && v.dim() != slots[0]->dim()) {
                    throw Error(ErrorCode::InconsistentDim, "provider returned mixed embedding dimensions");
                }
                slots[idx] = normalize(v);
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ProviderError, std::string("malformed embeddings response: ") + e.what());
        }
        std::vector<Embedding> out;
        out.reserve(slots.size());
        for (auto& s : slots) {
            if (!out.empty() && s->dim() != out.front().dim()) {
                throw Error(ErrorCode::InconsistentDim, "provider returned mixed embedding dimensions");
            }
            out.push_back(std::move(*s));
        }
        return out;
    }

    EmbedderConfig config_;
    HttpTransport transport_;
    SleepFn sleep_;
    std::shared_ptr<std::counting_semaphore<>> in_flight_;
};

// ---------------------------------------------------------------------------
// Text generation
// ---------------------------------------------------------------------------

struct GeneratorConfig {
    std::string base_url = "http://127.0.0.1:8080/v1";
    std::string model = "gemma-2-9b-it";
    std::string api_key_env = "CAG_API_KEY";
    std::chrono::milliseconds timeout{60000};
    RetryPolicy retry;
    /// {n} and {context} are substituted.
    std::string prompt_template =
        "Write {n} different questions that the following passage answers. "
        "Put each question on its own line with no numbering or extra text.\n\nPassage:\n{context}";
};

/// Client for a chat-completions style `POST {base_url}/chat/completions`.
class GeneratorClient {
public:
    explicit GeneratorClient(GeneratorConfig config, HttpTransport transport = nullptr, SleepFn sleep = nullptr)
        : config_(std::move(config)),
          transport_(transport ? std::move(transport) : make_http_transport(config_.base_url, config_.timeout)),
          sleep_(sleep ? std::move(sleep) : detail::real_sleep()) {}

    std::string complete(const std::string& prompt) const {
        nlohmann::json body{{"model", config_.model},
                            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
        HttpRequest req{"/chat/completions", body.dump(), detail::read_api_key(config_.api_key_env)};
        const auto res = detail::send_with_retry(transport_, req, config_.retry, sleep_, prompt.size());
        if (res.body.empty()) return {};
        try {
            const auto j = nlohmann::json::parse(res.body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::MalformedResponse, std::string("unexpected completion shape: ") + e.what());
        }
    }

    std::vector<std::string> generate_pseudo_queries(const std::string& context_text, std::size_t n) const {
        if (context_text.empty()) throw Error(ErrorCode::InvalidArgument, "empty context");
        if (n == 0) throw Error(ErrorCode::InvalidArgument, "n must be at least 1");
        std::string prompt = config_.prompt_template;
        replace_all(prompt, "{n}", std::to_string(n));
        replace_all(prompt, "{context}", context_text);
        auto lines = parse_lines(complete(prompt));
        if (lines.empty()) throw Error(ErrorCode::MalformedResponse, "no pseudo-queries in provider response");
        if (lines.size() > n) lines.resize(n);
        return lines;
    }

    /// Query rewriting through the same endpoint, usable as a QueryTransformer.
    std::function<std::string(const std::string&)> as_transformer(std::string instruction =
                                                                      "Rewrite the following question so it is "
                                                                      "self-contained and specific. Reply with the "
                                                                      "rewritten question only.\n\n") const {
        return [this, instruction](const std::string& q) {
            auto lines = parse_lines(complete(instruction + q));
            if (lines.empty()) throw Error(ErrorCode::TransformerFailure, "empty rewrite");
            return lines.front();
        };
    }

    /// Splits on newlines, trims, drops blanks and leading list markers.
    static std::vector<std::string> parse_lines(const std::string& text) {
        std::vector<std::string> out;
        std::size_t start = 0;
        while (start <= text.size()) {
            auto end = text.find('\n', start);
            if (end == std::string::npos) end = text.size();
            std::string line = text.substr(start, end - start);
            strip_marker(line);
            if (!line.empty()) out.push_back(std::move(line));
            start = end + 1;
        }
        return out;
    }

private:
    static void replace_all(std::string& s, const std::string& from, const std::string& to) {
        for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
            s.replace(pos, from.size(), to);
        }
    }

    static void strip_marker(std::string& line) {
        auto trim = [](std::string& s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        trim(line);
        if (line.size() >= 2 && (line[0] == '-' || line[0] == '*') && line[1] == ' ') {
            line.erase(0, 2);
        } else {
            std::size_t i = 0;
            while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
            if (i > 0 && i + 1 < line.size() && (line[i] == '.' || line[i] == ')') && line[i + 1] == ' ') {
                line.erase(0, i + 2);
            }
        }
        trim(line);
    }

    GeneratorConfig config_;
    HttpTransport transport_;
    SleepFn sleep_;
};

// ---------------------------------------------------------------------------
// Vector files
// ---------------------------------------------------------------------------

struct NamedEmbedding {
    std::string id;
    Embedding embedding;
};

inline constexpr char kVectorMagic[4] = {'C', 'A', 'G', 'V'};
inline constexpr std::uint16_t kVectorVersion = 1;

/// Binary vector file: magic "CAGV", version u16, dim u32, count u64, id table
/// (u32 length + UTF-8 each), f32[count * dim] block, FNV-1a u64 checksum.
inline void write_vectors_binary(const std::string& path, const std::vector<NamedEmbedding>& vectors) {
    detail::ByteWriter w;
    const std::size_t dim = vectors.empty() ? 0 : vectors.front().embedding.dim();
    w.put_raw(std::string_view(kVectorMagic, 4));
    w.put_uint(kVectorVersion);
    w.put_uint(static_cast<std::uint32_t>(dim));
    w.put_uint(static_cast<std::uint64_t>(vectors.size()));
    for (const auto& v : vectors) w.put_string(v.id);
    for (const auto& v : vectors) {
        if (v.embedding.dim() != dim) throw Error(ErrorCode::DimensionMismatch, "vector '" + v.id + "'");
        for (double x : v.embedding.values()) w.put_f32(static_cast<float>(x));
    }
    detail::seal(w);
    detail::write_file(path, w.bytes());
}

/// Line-delimited {"id", "embedding"} records.
inline void write_vectors_jsonl(const std::string& path, const std::vector<NamedEmbedding>& vectors) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
    for (const auto& v : vectors) {
        out << nlohmann::json{{"id", v.id},
                              {"embedding", std::vector<double>(v.embedding.values().begin(), v.embedding.values().end())}}
                   .dump()
            << '\n';
    }
    if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

namespace detail {

inline std::vector<NamedEmbedding> parse_vectors_binary(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 6) throw Error(ErrorCode::ParseError, "vector file too short");
    const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
    if (version != kVectorVersion) throw Error(ErrorCode::ParseError, "unsupported vector file version");
    ByteReader r(unseal(bytes, ErrorCode::ParseError));
    r.get_raw(6);
    std::vector<NamedEmbedding> out;
    try {
        const auto dim = r.get_uint<std::uint32_t>();
        const auto n = r.get_uint<std::uint64_t>();
        r.need(n * 4);
        std::vector<std::string> ids(n);
        for (auto& id : ids) id = r.get_string();
        r.need(n * dim * 4);
        for (std::uint64_t i = 0; i < n; ++i) {
            std::vector<double> values(dim);
            for (auto& x : values) x = r.get_f32();
            try {
                out.push_back({ids[i], Embedding(std::move(values))});
            } catch (const Error& e) {
                throw Error(ErrorCode::ParseError, "vector '" + ids[i] + "': " + e.what());
            }
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptIndex) throw Error(ErrorCode::ParseError, e.what());
        throw;
    }
    return out;
}

inline std::vector<NamedEmbedding> parse_vectors_jsonl(const std::string& text) {
    std::vector<NamedEmbedding> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("id").get<std::string>(), Embedding(j.at("embedding").get<std::vector<double>>())});
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace detail

/// Loads a JSONL or binary vector file (detected by magic bytes). Every
/// vector is validated finite, checked against expected_dim and normalized.
inline std::vector<NamedEmbedding> load_vectors(const std::string& path, std::optional<std::size_t> expected_dim = {}) {
    const auto bytes = detail::read_file(path);
    std::vector<NamedEmbedding> raw;
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kVectorMagic, 4) == 0) {
        raw = detail::parse_vectors_binary(bytes);
    } else {
        raw = detail::parse_vectors_jsonl(std::string(bytes.begin(), bytes.end()));
    }
    const std::size_t dim = expected_dim ? *expected_dim : (raw.empty() ? 0 : raw.front().embedding.dim());
    for (auto& v : raw) {
        if (v.embedding.dim() != dim) {
            throw Error(ErrorCode::DimensionMismatch, "vector '" + v.id + "' has dim " +
                                                          std::to_string(v.embedding.dim()) + ", expected " +
                                                          std::to_string(dim));
        }
        if (v.embedding.is_zero()) throw Error(ErrorCode::ZeroVector, "vector '" + v.id + "' is all zeros");
        v.embedding = normalize(v.embedding);
    }
    return raw;
}

}  // namespace cag
