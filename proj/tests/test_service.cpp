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

#include <random>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "cag/service.hpp"
#include "fixtures.hpp"

using nlohmann::json;

namespace {

/// Axis-aligned contexts; each pseudo-query sits at cosine 0.8 from its parent.
std::vector<cag::CorpusEntry> axis_corpus(std::size_t n) {
    std::vector<cag::CorpusEntry> entries;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> ctx(n + 1, 0.0);
        ctx[i] = 1.0;
        std::vector<double> q(n + 1, 0.0);
        q[i] = 0.8;
        q[n] = 0.6;
        entries.push_back(fixtures::entry("c" + std::to_string(i), "t", ctx, {q}));
    }
    return entries;
}

class ServiceTest : public ::testing::Test {
protected:
    void start(cag::ServiceOptions opts, std::shared_ptr<const cag::CorpusIndex> index) {
        service_ = std::make_unique<cag::Service>(std::move(opts));
        if (index) service_->load_index(std::move(index));
        port_ = service_->bind_any("127.0.0.1");
        ASSERT_GT(port_, 0);
        thread_ = std::thread([this] { service_->listen_after_bind(); });
        service_->wait_until_ready();
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    }

    void TearDown() override {
        if (service_) service_->stop();
        if (thread_.joinable()) thread_.join();
    }

    std::pair<int, json> post(const std::string& path, const json& body, const httplib::Headers& h = {}) {
        auto res = client_->Post(path, h, body.dump(), "application/json");
        if (!res) return {0, {}};
        return {res->status, json::parse(res->body)};
    }

    std::pair<int, json> get(const std::string& path, const httplib::Headers& h = {}) {
        auto res = client_->Get(path, h);
        if (!res) return {0, {}};
        return {res->status, json::parse(res->body)};
    }

    static std::vector<double> axis(std::size_t n, std::size_t i) {
        std::vector<double> v(n, 0.0);
        v[i] = 1.0;
        return v;
    }

    std::unique_ptr<cag::Service> service_;
    std::thread thread_;
    std::unique_ptr<httplib::Client> client_;
    int port_ = 0;
};

TEST_F(ServiceTest, ClassifyEmbeddingRequests) {
    start({}, fixtures::fitted(axis_corpus(4)));
    auto [s1, hit] = post("/v1/classify", {{"embedding", axis(5, 2)}});
    EXPECT_EQ(s1, 200);
    EXPECT_TRUE(hit["retrieve"].get<bool>());
    EXPECT_NEAR(hit["score"].get<double>(), 1.0, 1e-12);
    EXPECT_EQ(hit["best_context_id"], "c2");
    EXPECT_TRUE(hit.contains("elapsed_ms"));

    auto [s2, miss] = post("/v1/classify", {{"embedding", axis(5, 4)}});
    EXPECT_EQ(s2, 200);
    EXPECT_FALSE(miss["retrieve"].get<bool>());

    auto [s3, relaxed] = post("/v1/classify", {{"embedding", axis(5, 4)}, {"threshold", 0.9}});
    EXPECT_EQ(s3, 200);
    EXPECT_TRUE(relaxed["retrieve"].get<bool>());
}

TEST_F(ServiceTest, ClassifyErrors) {
    start({}, fixtures::fitted(axis_corpus(4)));
    EXPECT_EQ(post("/v1/classify", {{"embedding", axis(5, 0)}, {"query", "x"}}).first, 400);
    EXPECT_EQ(post("/v1/classify", json::object()).first, 400);
    EXPECT_EQ(post("/v1/classify", {{"embedding", axis(8, 0)}}).first, 409);
    EXPECT_EQ(post("/v1/classify", {{"embedding", std::vector<double>(5, 0.0)}}).first, 400);
    EXPECT_EQ(post("/v1/classify", {{"embedding", "nope"}}).first, 400);
    EXPECT_EQ(post("/v1/classify", {{"query", "text without embedder"}}).first, 400);
    auto res = client_->Post("/v1/classify", "{not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
}

TEST_F(ServiceTest, RouteModes) {
    start({}, fixtures::fitted(axis_corpus(4)));
    auto [s1, rag] = post("/v1/route", {{"embedding", axis(5, 1)}, {"k", 2}});
    EXPECT_EQ(s1, 200);
    EXPECT_EQ(rag["mode"], "rag");
    EXPECT_EQ(rag["retrieved"].size(), 2u);
    EXPECT_EQ(rag["retrieved"][0]["id"], "c1");

    auto [s2, direct] = post("/v1/route", {{"embedding", axis(5, 4)}});
    EXPECT_EQ(s2, 200);
    EXPECT_EQ(direct["mode"], "direct");
    EXPECT_TRUE(direct["retrieved"].empty());

    auto [s3, cot] = post("/v1/route", {{"embedding", axis(5, 4)}, {"template_id", "direct-cot"}});
    EXPECT_EQ(s3, 200);
    EXPECT_EQ(cot["template_id"], "direct-cot");
    EXPECT_EQ(post("/v1/route", {{"embedding", axis(5, 4)}, {"template_id", "nope"}}).first, 400);
    EXPECT_EQ(post("/v1/route", {{"embedding", axis(5, 4)}, {"k", 0}}).first, 400);
}

TEST_F(ServiceTest, StatsAndHealth) {
    start({}, fixtures::fitted(axis_corpus(4)));
    auto [s1, health] = get("/healthz");
    EXPECT_EQ(s1, 200);
    EXPECT_TRUE(health["index_loaded"].get<bool>());
    auto [s2, stats] = get("/v1/stats");
    EXPECT_EQ(s2, 200);
    EXPECT_EQ(stats["fingerprint"], "precomputed:5");
    EXPECT_EQ(stats["contexts"], 4);
    EXPECT_EQ(stats["gate"]["policy"], "p5");
    EXPECT_TRUE(stats.contains("positive"));
    EXPECT_TRUE(stats.contains("auc"));
}

TEST_F(ServiceTest, NotLoadedIs503) {
    start({}, nullptr);
    EXPECT_FALSE(get("/healthz").second["index_loaded"].get<bool>());
    EXPECT_EQ(post("/v1/classify", {{"embedding", axis(5, 0)}}).first, 503);
}

TEST_F(ServiceTest, BearerToken) {
    cag::ServiceOptions opts;
    opts.bearer_token = "s3cret";
    start(std::move(opts), fixtures::fitted(axis_corpus(4)));
    EXPECT_EQ(post("/v1/classify", {{"embedding", axis(5, 0)}}).first, 401);
    EXPECT_EQ(post("/v1/classify", {{"embedding", axis(5, 0)}}, {{"Authorization", "Bearer wrong"}}).first, 401);
    EXPECT_EQ(post("/v1/classify", {{"embedding", axis(5, 0)}}, {{"Authorization", "Bearer s3cret"}}).first, 200);
    EXPECT_EQ(get("/healthz").first, 200);
}

TEST_F(ServiceTest, TextQueriesThroughEmbedder) {
    cag::EmbedderConfig ec;
    ec.api_key_env = "";
    ec.model = "fake";
    auto transport = [](const cag::HttpRequest& req) {
        const auto texts = json::parse(req.body)["input"];
        json data = json::array();
        for (std::size_t i = 0; i < texts.size(); ++i) {
            std::vector<double> v(5, 0.0);
            v[texts[i].get<std::string>() == "about c3" ? 3 : 4] = 1.0;
            data.push_back({{"index", i}, {"embedding", v}});
        }
        return cag::HttpResponse{200, json{{"data", data}}.dump(), false, {}};
    };
    cag::ServiceOptions opts;
    opts.embedder = std::make_shared<const cag::EmbeddingClient>(ec, transport);

    cag::IngestOptions io;
    io.embedder_name = "fake";
    auto index = std::make_shared<const cag::CorpusIndex>(
        cag::fit_distributions(cag::ingest(axis_corpus(4), io), cag::NegativePairStrategy::all_cross(), {1}));
    start(std::move(opts), index);
    auto [s1, hit] = post("/v1/classify", {{"query", "about c3"}});
    EXPECT_EQ(s1, 200);
    EXPECT_TRUE(hit["retrieve"].get<bool>());
    EXPECT_EQ(hit["best_context_id"], "c3");
    auto [s2, plan] = post("/v1/route", {{"query", "something else"}});
    EXPECT_EQ(s2, 200);
    EXPECT_EQ(plan["mode"], "direct");
    EXPECT_NE(plan["prompt"].get<std::string>().find("something else"), std::string::npos);

    // Same embedder against an index built by a different model.
    service_->load_index(fixtures::fitted(axis_corpus(4)));
    EXPECT_EQ(post("/v1/classify", {{"query", "about c3"}}).first, 409);
}

TEST_F(ServiceTest, UpstreamFailureIs502) {
    cag::EmbedderConfig ec;
    ec.api_key_env = "";
    ec.retry.retries = 0;
    cag::ServiceOptions opts;
    opts.embedder = std::make_shared<const cag::EmbeddingClient>(
        ec, [](const cag::HttpRequest&) { return cag::HttpResponse{503, "down", false, {}}; });
    start(std::move(opts), fixtures::fitted(axis_corpus(4)));
    EXPECT_EQ(post("/v1/classify", {{"query", "x"}}).first, 502);
}

TEST_F(ServiceTest, ReloadSwapsSnapshot) {
    fixtures::TempDir dir;
    cag::save_index(*fixtures::fitted(axis_corpus(4)), dir.file("i.cagx"));
    cag::ServiceOptions opts;
    opts.index_path = dir.file("i.cagx");
    start(std::move(opts), fixtures::fitted(axis_corpus(4)));
    const auto before = service_->snapshot();
    cag::save_index(*fixtures::fitted(axis_corpus(6)), dir.file("i.cagx"));
    auto [s, body] = post("/v1/admin/reload", json::object());
    EXPECT_EQ(s, 200);
    EXPECT_EQ(service_->snapshot()->index->contexts.size(), 6u);
    EXPECT_EQ(before->index->contexts.size(), 4u);  // holders of the old snapshot are unaffected
    EXPECT_EQ(post("/v1/classify", {{"embedding", axis(5, 0)}}).first, 409);
    EXPECT_EQ(post("/v1/classify", {{"embedding", axis(7, 5)}}).first, 200);
}

TEST_F(ServiceTest, MatchesInProcessUnderConcurrency) {
    std::mt19937_64 rng(1);
    const auto index = fixtures::fitted(fixtures::random_corpus(rng, 40, 8, 3));
    start({}, index);
    const auto gate = cag::build_gate(index);
    std::vector<cag::Embedding> qs;
    for (int i = 0; i < 200; ++i) qs.push_back(fixtures::random_embedding(rng, 8));
    std::vector<std::thread> workers;
    std::atomic<int> mismatches{0};
    for (int w = 0; w < 4; ++w) {
        workers.emplace_back([&, w] {
            httplib::Client c("127.0.0.1", port_);
            for (std::size_t i = w; i < qs.size(); i += 4) {
                const auto& v = qs[i].values();
                auto res = c.Post("/v1/classify", json{{"embedding", std::vector<double>(v.begin(), v.end())}}.dump(),
                                  "application/json");
                const auto d = gate.classify(qs[i]);
                if (!res || res->status != 200) {
                    ++mismatches;
                    continue;
                }
                const auto j = json::parse(res->body);
                if (j["retrieve"].get<bool>() != d.retrieve || j["score"].get<double>() != d.score ||
                    j["best_context_id"] != d.best_context_id) {
                    ++mismatches;
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    EXPECT_EQ(mismatches.load(), 0);
}

}  // namespace
