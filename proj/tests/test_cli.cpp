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

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include "cag/cli.hpp"
#include "cag/evalharness.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

extern char** environ;

namespace {

const std::string kSamples = CAG_SAMPLES_DIR;

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result cli(std::vector<std::string> args) {
    args.insert(args.begin(), "cag");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cag::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string sample(const std::string& name) { return kSamples + "/" + name; }

double field(const std::string& text, const std::string& key) {
    const auto at = text.find(key + ":");
    if (at == std::string::npos) return NAN;
    return std::stod(text.substr(at + key.size() + 1));
}

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

/// Four axis contexts in six dimensions whose pseudo-queries all sit at cosine
/// 0.8 from their context. The last two axes stay unused.
std::vector<cag::CorpusEntry> axis_corpus() {
    std::vector<cag::CorpusEntry> out;
    for (int i = 0; i < 4; ++i) {
        auto axis = [](int k, double s) {
            std::vector<double> v(6, 0.0);
            v[k % 4] = s;
            return v;
        };
        auto plus = [&](int j, double s) {
            auto v = axis(i, 0.8);
            v[j % 4] += s;
            return v;
        };
        out.push_back(fixtures::entry("a" + std::to_string(i), "t" + std::to_string(i % 2), axis(i, 1.0),
                                      {plus(i + 1, 0.6), plus(i + 1, -0.6), plus(i + 2, 0.6)}));
    }
    return out;
}

class CliFiles : public ::testing::Test {
protected:
    void SetUp() override {
        index_ = dir_.file("toy.cagx");
        ASSERT_EQ(cli({"ingest", sample("toy_corpus.jsonl"), "-o", index_}).code, 0);
    }
    fixtures::TempDir dir_;
    std::string index_;
};

}  // namespace

TEST_F(CliFiles, IngestWritesIndexAndSummary) {
    const auto path = dir_.file("again.cagx");
    const auto r = cli({"ingest", sample("toy_corpus.jsonl"), "-o", path});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(path));
    EXPECT_NE(r.out.find("contexts: 8"), std::string::npos);
    EXPECT_NE(r.out.find("pseudo_queries: 24"), std::string::npos);
}

TEST_F(CliFiles, IngestSmallCorpusWarns) {
    const auto corpus = dir_.file("two.jsonl");
    auto entries = axis_corpus();
    entries.resize(2);
    cag::write_corpus(corpus, entries);
    const auto r = cli({"ingest", corpus, "-o", dir_.file("two.cagx")});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(dir_.file("two.cagx")));
    EXPECT_NE(r.err.find("unreliable"), std::string::npos);

    const auto strict = cli({"ingest", corpus, "-o", dir_.file("strict.cagx"), "--min-positive-samples", "20"});
    EXPECT_EQ(strict.code, 4);
    EXPECT_NE(strict.err.find("InsufficientSamples"), std::string::npos);
}

TEST_F(CliFiles, IngestMissingEmbeddingNamesFirstRecord) {
    const auto r = cli({"ingest", sample("toy_corpus_bare.jsonl"), "-o", dir_.file("bare.cagx")});
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.err.find("MissingEmbedding"), std::string::npos);
    EXPECT_NE(r.err.find("astr-0"), std::string::npos);
}

TEST_F(CliFiles, IngestFromVectorFileMatchesInlineEmbeddings) {
    const auto path = dir_.file("vec.cagx");
    const auto r = cli({"ingest", sample("toy_corpus_bare.jsonl"), "--vectors", sample("toy_vectors.jsonl"), "-o", path});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto a = cli({"analyze", index_, "--format", "machine"});
    const auto b = cli({"analyze", path, "--format", "machine"});
    EXPECT_EQ(a.out, b.out);
}

TEST_F(CliFiles, UnreadableInputsExitTwo) {
    EXPECT_EQ(cli({"ingest", dir_.file("absent.jsonl"), "-o", dir_.file("x.cagx")}).code, 2);
    EXPECT_EQ(cli({"analyze", dir_.file("absent.cagx")}).code, 2);
    write_text(dir_.file("junk.cagx"), "not an index");
    EXPECT_EQ(cli({"analyze", dir_.file("junk.cagx")}).code, 2);
}

TEST_F(CliFiles, AnalyzeTableAndMachine) {
    const auto table = cli({"analyze", index_});
    ASSERT_EQ(table.code, 0);
    for (const char* row : {"Minimum", "5th Percentile", "1st Quartile", "Mean", "Median", "3rd Quartile",
                            "95th Percentile", "Maximum", "AUC"}) {
        EXPECT_NE(table.out.find(row), std::string::npos) << row;
    }
    const auto machine = cli({"analyze", index_, "--format", "machine"});
    ASSERT_EQ(machine.code, 0);
    const auto j = nlohmann::json::parse(machine.out);
    EXPECT_EQ(j["positive"]["count"], 24);
    EXPECT_TRUE(j.contains("negative"));
    EXPECT_GE(j["auc"].get<double>(), 0.0);
    EXPECT_LE(j["auc"].get<double>(), 1.0);
}

TEST_F(CliFiles, AnalyzeUnfittedIndexFails) {
    const auto path = dir_.file("raw.cagx");
    ASSERT_EQ(cli({"ingest", sample("toy_corpus.jsonl"), "--no-fit", "-o", path}).code, 0);
    const auto r = cli({"analyze", path});
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.err.find("UnfittedIndex"), std::string::npos);
}

TEST_F(CliFiles, ClassifyOwnContextVectorRetrieves) {
    const auto index = cag::load_index(index_);
    const auto path = dir_.file("q.json");
    write_text(path, nlohmann::json(oracle::row(index.context_vectors, 0)).dump());
    const auto r = cli({"classify", index_, "-e", path, "--format", "machine"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto d = nlohmann::json::parse(r.out)["decision"];
    EXPECT_TRUE(d["retrieve"].get<bool>());
    EXPECT_NEAR(d["score"].get<double>(), 1.0, 1e-6);
    EXPECT_EQ(d["best_context_id"], index.contexts.front().id);
}

TEST_F(CliFiles, ClassifyOrthogonalQueryDoesNotRetrieve) {
    const auto corpus = dir_.file("axis.jsonl");
    cag::write_corpus(corpus, axis_corpus());
    const auto path = dir_.file("axis.cagx");
    ASSERT_EQ(cli({"ingest", corpus, "-o", path, "--min-positive-samples", "1"}).code, 0);
    const auto query = dir_.file("orth.json");
    write_text(query, "[0, 0, 0, 0, 0, 1]");
    const auto r = cli({"classify", path, "-e", query, "--format", "machine"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto d = nlohmann::json::parse(r.out)["decision"];
    EXPECT_FALSE(d["retrieve"].get<bool>());
    EXPECT_EQ(d["score"].get<double>(), 0.0);
}

TEST_F(CliFiles, ThresholdFlipsNearMissQuery) {
    const auto corpus = dir_.file("axis.jsonl");
    cag::write_corpus(corpus, axis_corpus());
    const auto path = dir_.file("axis.cagx");
    ASSERT_EQ(cli({"ingest", corpus, "-o", path, "--min-positive-samples", "1"}).code, 0);
    const auto query = dir_.file("near.json");
    write_text(query, nlohmann::json(std::vector<double>{0.77, 0.0, std::sqrt(1 - 0.77 * 0.77), 0.0, 0.0, 0.0}).dump());

    const auto strict = cli({"classify", path, "-e", query, "--format", "machine"});
    ASSERT_EQ(strict.code, 0) << strict.err;
    const auto d0 = nlohmann::json::parse(strict.out)["decision"];
    EXPECT_FALSE(d0["retrieve"].get<bool>());
    EXPECT_NEAR(d0["margin"].get<double>(), -0.03, 1e-6);

    const auto loose = cli({"classify", path, "-e", query, "-T", "0.05", "--format", "machine"});
    ASSERT_EQ(loose.code, 0);
    EXPECT_TRUE(nlohmann::json::parse(loose.out)["decision"]["retrieve"].get<bool>());
}

TEST_F(CliFiles, ClassifyRoutesBothWays) {
    const auto in = cli({"classify", index_, "-e", sample("query_in_domain.json"), "-q", "How big is Jupiter?",
                         "--route", "--templates", kSamples + "/../templates/manifest.json", "-k", "2",
                         "--format", "machine"});
    ASSERT_EQ(in.code, 0) << in.err;
    const auto rag = nlohmann::json::parse(in.out)["plan"];
    EXPECT_EQ(rag["mode"], "rag");
    EXPECT_EQ(rag["retrieved"].size(), 2u);
    EXPECT_NE(rag["prompt"].get<std::string>().find("How big is Jupiter?"), std::string::npos);

    const auto out = cli({"classify", index_, "-e", sample("query_out_of_domain.json"), "--route", "--format", "machine"});
    ASSERT_EQ(out.code, 0) << out.err;
    const auto direct = nlohmann::json::parse(out.out)["plan"];
    EXPECT_EQ(direct["mode"], "direct");
    EXPECT_TRUE(direct["retrieved"].empty());
}

TEST_F(CliFiles, ClassifyNeedsAQuery) { EXPECT_EQ(cli({"classify", index_}).code, 1); }

TEST_F(CliFiles, ClassifyRejectsWrongDimension) {
    const auto path = dir_.file("short.json");
    write_text(path, "[1.0, 0.0]");
    const auto r = cli({"classify", index_, "-e", path});
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.err.find("DimensionMismatch"), std::string::npos);
}

TEST_F(CliFiles, EvalLabelsAndMonotoneSweep) {
    const auto r = cli({"eval", "--index", index_, "--labels", sample("toy_labeled_queries.jsonl"), "--thresholds=-0.1,0,0.1",
                        "--format", "machine"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    ASSERT_EQ(j["sweep"].size(), 3u);
    double last = -1;
    for (const auto& row : j["sweep"]) {
        const double recall = row["metrics"]["recall"].get<double>();
        EXPECT_GE(recall, last);
        last = recall;
    }
}

TEST_F(CliFiles, EvalEmptyLabelsFails) {
    write_text(dir_.file("empty.jsonl"), "");
    EXPECT_EQ(cli({"eval", "--index", index_, "--labels", dir_.file("empty.jsonl")}).code, 2);
}

TEST(Cli, EvalSyntheticDefaultsSeparate) {
    const auto r = cli({"eval", "--synthetic"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_GE(field(r.out, "accuracy"), 0.95);
    EXPECT_GE(field(r.out, "median gap (positive - negative)"), 0.3);
}

TEST(Cli, MachineOutputIsDeterministic) {
    const std::vector<std::string> args{"eval", "--synthetic", "--topics", "3", "--contexts-per-topic", "10",
                                        "--thresholds", "0,0.1", "--format", "machine"};
    const auto a = cli(args);
    const auto b = cli(args);
    ASSERT_EQ(a.code, 0);
    EXPECT_EQ(a.out, b.out);
}

TEST(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(cli({"--help"}).code, 0);
    for (const char* sub : {"ingest", "analyze", "classify", "eval", "serve", "config"}) {
        const auto r = cli({sub, "--help"});
        EXPECT_EQ(r.code, 0) << sub;
        EXPECT_FALSE(r.out.empty()) << sub;
    }
    EXPECT_EQ(cli({}).code, 1);
    EXPECT_EQ(cli({"analyze", "x.cagx", "--bogus"}).code, 1);
    EXPECT_EQ(cli({"eval", "--synthetic", "--policy", "p150"}).code, 1);
}

TEST(Cli, ConfigShowReportsProvenance) {
    fixtures::TempDir dir;
    write_text(dir.file("c.json"), R"({"route": {"k": 7}})");
    setenv("CAG_GATE_POLICY", "median", 1);
    const auto r = cli({"--config", dir.file("c.json"), "config", "show", "-T", "0.25"});
    unsetenv("CAG_GATE_POLICY");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("route.k = 7  (file)"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("gate.policy = median  (env)"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("(flag)"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("serve.port"), std::string::npos);
}

// ---------------------------------------------------------------------------
// serve runs as a child process so signals reach only it.
// ---------------------------------------------------------------------------

namespace {

int free_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

pid_t spawn(const std::vector<std::string>& args) {
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    pid_t pid = 0;
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, 2, "/dev/null", O_WRONLY, 0);
    const int rc = posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    return rc == 0 ? pid : -1;
}

int wait_exit(pid_t pid) {
    int status = 0;
    ::waitpid(pid, &status, 0);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_F(CliFiles, ServeAnswersAndShutsDownCleanly) {
    const std::string port = std::to_string(free_port());
    const pid_t server = spawn({CAG_CLI_PATH, "serve", index_, "--bind", "127.0.0.1", "--port", port});
    ASSERT_GT(server, 0);

    httplib::Client client("127.0.0.1", std::stoi(port));
    bool healthy = false;
    for (int i = 0; i < 100 && !healthy; ++i) {
        if (auto res = client.Get("/healthz"); res && res->status == 200) healthy = true;
        else std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    EXPECT_TRUE(healthy);

    const auto index = cag::load_index(index_);
    nlohmann::json body{{"embedding", oracle::row(index.context_vectors, 2)}};
    auto res = client.Post("/v1/classify", body.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_TRUE(nlohmann::json::parse(res->body)["retrieve"].get<bool>());

    const pid_t second = spawn({CAG_CLI_PATH, "serve", index_, "--bind", "127.0.0.1", "--port", port});
    ASSERT_GT(second, 0);
    EXPECT_EQ(wait_exit(second), 3);

    ::kill(server, SIGTERM);
    EXPECT_EQ(wait_exit(server), 0);
}
