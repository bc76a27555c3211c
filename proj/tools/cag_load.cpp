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

// Load generator for POST /v1/classify. Without --port it starts an
// in-process server over a random index of the requested size.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "cag/corpus.hpp"
#include "cag/service.hpp"

namespace {

struct Options {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string token_env;
    std::size_t contexts = 1700;
    std::size_t dim = 768;
    std::size_t requests = 2000;
    unsigned concurrency = 4;
    std::uint64_t seed = 7;
};

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(dim);
    for (auto& x : v) x = n(rng);
    return v;
}

std::shared_ptr<const cag::CorpusIndex> random_index(const Options& o) {
    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::vector<cag::CorpusEntry> entries;
    for (std::size_t i = 0; i < o.contexts; ++i) {
        cag::CorpusEntry e;
        e.id = "ctx-" + std::to_string(i);
        e.topic = "topic-" + std::to_string(i % 17);
        e.text = e.id;
        const auto base = random_vector(rng, o.dim);
        e.embedding = cag::Embedding(base);
        for (int j = 0; j < 3; ++j) {
            auto v = base;
            for (auto& x : v) x += noise(rng);
            e.pseudo_queries.push_back({e.id + "/q" + std::to_string(j), "", cag::Embedding(std::move(v))});
        }
        entries.push_back(std::move(e));
    }
    return std::make_shared<const cag::CorpusIndex>(
        cag::fit_distributions(cag::ingest(entries), cag::NegativePairStrategy::cross_topic()));
}

double percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double rank = p / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(rank);
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (v[hi] - v[lo]) * (rank - static_cast<double>(lo));
}

}  // namespace

int main(int argc, char** argv) {
    Options o;
    CLI::App app{"Measure /v1/classify latency", "cag_load"};
    app.add_option("--host", o.host, "Server host");
    app.add_option("--port", o.port, "Server port; omit to start an in-process server");
    app.add_option("--token-env", o.token_env, "Environment variable holding a bearer token");
    app.add_option("--contexts", o.contexts, "Contexts in the in-process index");
    app.add_option("--dim", o.dim, "Embedding dimension (must match a remote index)");
    app.add_option("-n,--requests", o.requests, "Total requests");
    app.add_option("-c,--concurrency", o.concurrency, "Client threads")->check(CLI::Range(1u, 256u));
    app.add_option("--seed", o.seed, "Seed for the index and queries");
    CLI11_PARSE(app, argc, argv);

    std::unique_ptr<cag::Service> service;
    std::thread server;
    if (o.port == 0) {
        std::fprintf(stderr, "building index: %zu contexts, dim %zu\n", o.contexts, o.dim);
        service = std::make_unique<cag::Service>(cag::ServiceOptions{});
        service->load_index(random_index(o));
        o.port = service->bind_any(o.host);
        if (o.port <= 0) {
            std::fprintf(stderr, "cannot bind %s\n", o.host.c_str());
            return 3;
        }
        server = std::thread([&] { service->listen_after_bind(); });
        service->wait_until_ready();
    }

    httplib::Headers headers;
    if (!o.token_env.empty()) {
        const char* token = std::getenv(o.token_env.c_str());
        if (!token) {
            std::fprintf(stderr, "%s is not set\n", o.token_env.c_str());
            return 1;
        }
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    std::vector<std::string> bodies;
    std::mt19937_64 rng(o.seed + 1);
    for (std::size_t i = 0; i < std::min<std::size_t>(o.requests, 256); ++i) {
        bodies.push_back(nlohmann::json{{"embedding", random_vector(rng, o.dim)}}.dump());
    }

    std::vector<double> round_trip(o.requests), server_side(o.requests);
    std::atomic<std::size_t> next{0}, failures{0};
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::thread> clients;
    for (unsigned t = 0; t < o.concurrency; ++t) {
        clients.emplace_back([&] {
            httplib::Client client(o.host, o.port);
            client.set_keep_alive(true);
            client.set_tcp_nodelay(true);
            for (std::size_t i = next++; i < o.requests; i = next++) {
                const auto t0 = std::chrono::steady_clock::now();
                auto res = client.Post("/v1/classify", headers, bodies[i % bodies.size()], "application/json");
                round_trip[i] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
                if (!res || res->status != 200) {
                    ++failures;
                    continue;
                }
                server_side[i] = nlohmann::json::parse(res->body).value("elapsed_ms", 0.0);
            }
        });
    }
    for (auto& c : clients) c.join();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (service) {
        service->stop();
        server.join();
    }

    std::printf("requests: %zu  concurrency: %u  failures: %zu  throughput: %.1f req/s\n", o.requests, o.concurrency,
                failures.load(), static_cast<double>(o.requests) / secs);
    std::printf("%-12s %10s %10s %10s %10s\n", "latency ms", "p50", "p90", "p99", "max");
    for (const auto& [name, v] : {std::pair{"round trip", &round_trip}, std::pair{"classify", &server_side}}) {
        std::printf("%-12s %10.3f %10.3f %10.3f %10.3f\n", name, percentile(*v, 50), percentile(*v, 90),
                    percentile(*v, 99), *std::max_element(v->begin(), v->end()));
    }
    const double p99 = percentile(round_trip, 99);
    std::printf("p99 round trip %s the 10 ms target\n", p99 < 10.0 ? "meets" : "misses");
    return failures.load() == 0 ? 0 : 1;
}
