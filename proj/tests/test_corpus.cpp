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

#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "cag/corpus.hpp"
#include "cag/index_io.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using cag::ErrorCode;
using cag::NegativePairStrategy;

namespace {

template <class F>
cag::Error error_of(F&& f) {
    try {
        f();
    } catch (const cag::Error& e) {
        return e;
    }
    ADD_FAILURE() << "no cag::Error thrown";
    return cag::Error(ErrorCode::InvalidArgument, "none");
}

cag::CorpusIndex two_by_three() {
    return cag::ingest({fixtures::entry("a", "x", {1, 0, 0}, {{1, 0.1, 0}, {1, 0, 0.1}, {1, 0.2, 0}}),
                        fixtures::entry("b", "y", {0, 1, 0}, {{0.1, 1, 0}, {0, 1, 0.1}, {0, 1, 0.2}})});
}

TEST(ParseCorpus, StringAndObjectPseudoQueries) {
    std::istringstream in(
        R"({"id":"c1","topic":"t","text":"hello","embedding":[1,0],"pseudo_queries":["a?",{"id":"p","text":"b?","embedding":[0,1]}]})"
        "\n\n"
        R"({"id":"c2","text":"world"})");
    const auto entries = cag::parse_corpus(in);
    ASSERT_EQ(entries.size(), 2u);
    EXPECT_EQ(entries[0].pseudo_queries.size(), 2u);
    EXPECT_EQ(entries[0].pseudo_queries[1].id, "p");
    EXPECT_TRUE(entries[0].pseudo_queries[1].embedding.has_value());
    EXPECT_FALSE(entries[0].pseudo_queries[0].embedding.has_value());
    EXPECT_FALSE(entries[1].embedding.has_value());
}

TEST(ParseCorpus, ErrorsNameTheLine) {
    std::istringstream in("{\"id\":\"c1\",\"text\":\"x\"}\n{not json}\n");
    const auto e = error_of([&] { cag::parse_corpus(in); });
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    std::istringstream missing("{\"text\":\"x\"}\n");
    EXPECT_EQ(error_of([&] { cag::parse_corpus(missing); }).code(), ErrorCode::ParseError);
}

TEST(Ingest, CountsAndDerivedIds) {
    const auto index = two_by_three();
    EXPECT_EQ(index.contexts.size(), 2u);
    EXPECT_EQ(index.pseudo_queries.size(), 6u);
    EXPECT_EQ(index.dim, 3u);
    EXPECT_EQ(index.embedder_fingerprint, "precomputed:3");
    EXPECT_EQ(index.pseudo_queries[4].parent_context_id, "b");
    EXPECT_EQ(index.pseudo_queries[4].parent, 1u);
    EXPECT_NO_THROW(index.validate());
    EXPECT_FALSE(index.fitted);
}

TEST(Ingest, DimensionMismatch) {
    std::mt19937_64 rng(1);
    auto entries = fixtures::random_corpus(rng, 3, 16, 1);
    entries[2].embedding = fixtures::random_embedding(rng, 8);
    EXPECT_EQ(error_of([&] { cag::ingest(entries); }).code(), ErrorCode::DimensionMismatch);
}

TEST(Ingest, MissingEmbeddingNamesRecord) {
    std::mt19937_64 rng(1);
    auto entries = fixtures::random_corpus(rng, 3, 4, 2);
    entries[1].pseudo_queries[1].embedding.reset();
    const auto e = error_of([&] { cag::ingest(entries); });
    EXPECT_EQ(e.code(), ErrorCode::MissingEmbedding);
    EXPECT_NE(std::string(e.what()).find("c1/q1"), std::string::npos);
}

TEST(Ingest, EmbedMissingUsesPrecomputedThenProvider) {
    std::mt19937_64 rng(1);
    auto entries = fixtures::random_corpus(rng, 2, 4, 1);
    entries[0].embedding.reset();
    entries[1].pseudo_queries[0].embedding.reset();
    cag::IngestOptions opts;
    opts.embed_missing = true;
    opts.precomputed.emplace("c0", cag::Embedding{1, 2, 3, 4});
    std::vector<std::string> asked;
    opts.embedder = [&](const std::vector<std::string>& texts) {
        asked = texts;
        return std::vector<cag::Embedding>(texts.size(), cag::Embedding{4, 3, 2, 1});
    };
    opts.embedder_name = "model";
    const auto index = cag::ingest(entries, opts);
    EXPECT_EQ(asked, std::vector<std::string>{entries[1].pseudo_queries[0].text});
    EXPECT_EQ(index.embedder_fingerprint, "model:4");
    EXPECT_NEAR(index.context_vectors.embedding(0)[0], 1.0 / std::sqrt(30.0), 1e-6);
}

TEST(Ingest, DuplicateZeroAndEmpty) {
    std::mt19937_64 rng(2);
    auto dup = fixtures::random_corpus(rng, 2, 4, 1);
    dup[1].id = "c0";
    EXPECT_EQ(error_of([&] { cag::ingest(dup); }).code(), ErrorCode::DuplicateId);
    auto zero = fixtures::random_corpus(rng, 2, 4, 1);
    zero[1].embedding = cag::Embedding{0, 0, 0, 0};
    EXPECT_EQ(error_of([&] { cag::ingest(zero); }).code(), ErrorCode::ZeroVector);
    EXPECT_EQ(error_of([&] { cag::ingest(std::vector<cag::CorpusEntry>{}); }).code(), ErrorCode::EmptyCorpus);
}

TEST(Ingest, CrsbShapedCounts) {
    std::mt19937_64 rng(3);
    const auto index = cag::ingest(fixtures::random_corpus(rng, 1700, 8, 3, 17));
    EXPECT_EQ(index.contexts.size(), 1700u);
    EXPECT_EQ(index.pseudo_queries.size(), 5100u);
}

TEST(Fit, IdenticalSinglePair) {
    const auto index = cag::fit_distributions(cag::ingest({fixtures::entry("a", "t", {0.3, 0.4}, {{0.3, 0.4}})}),
                                              NegativePairStrategy::all_cross(), cag::FitOptions{1});
    ASSERT_EQ(index.positive_samples.count(), 1u);
    EXPECT_DOUBLE_EQ(index.positive_samples.values()[0], 1.0);
    EXPECT_TRUE(index.negative_samples.empty());
}

TEST(Fit, DefaultMinimumSampleCountIsEnforced) {
    const auto e = error_of([] {
        cag::fit_distributions(cag::ingest({fixtures::entry("a", "t", {1, 0}, {{1, 0}})}),
                               NegativePairStrategy::all_cross());
    });
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSamples);
}

TEST(Fit, OrthogonalSubspacesGiveZeroNegatives) {
    const auto index = cag::fit_distributions(
        cag::ingest({fixtures::entry("a", "x", {1, 1, 0, 0}, {{1, 0, 0, 0}, {0, 1, 0, 0}}),
                     fixtures::entry("b", "y", {0, 0, 1, 1}, {{0, 0, 1, 0}, {0, 0, 0, 1}})}),
        NegativePairStrategy::all_cross(), cag::FitOptions{1});
    ASSERT_EQ(index.negative_samples.count(), 4u);
    for (double v : index.negative_samples.values()) EXPECT_EQ(v, 0.0);
}

TEST(Fit, AllCrossCounts) {
    std::mt19937_64 rng(4);
    const auto index = fixtures::fitted(fixtures::random_corpus(rng, 50, 8, 3));
    EXPECT_EQ(index->positive_samples.count(), 150u);
    EXPECT_EQ(index->negative_samples.count(), 7350u);
}

TEST(Fit, CrossTopicAndSampledCounts) {
    std::mt19937_64 rng(5);
    const auto entries = fixtures::random_corpus(rng, 30, 8, 2, 3);  // 10 contexts per topic
    const auto cross = fixtures::fitted(entries, NegativePairStrategy::cross_topic());
    EXPECT_EQ(cross->negative_samples.count(), 30u * 40u);  // 20 foreign-topic contexts x 2 queries each
    const auto sampled = fixtures::fitted(entries, NegativePairStrategy::sampled(100, 7));
    EXPECT_EQ(sampled->negative_samples.count(), 100u);
    const auto again = fixtures::fitted(entries, NegativePairStrategy::sampled(100, 7));
    EXPECT_EQ(sampled->negative_samples, again->negative_samples);
    const auto all = fixtures::fitted(entries, NegativePairStrategy::sampled(1'000'000, 7));
    EXPECT_EQ(all->negative_samples, fixtures::fitted(entries)->negative_samples);
}

TEST(Fit, SampledDrawsOnlyForeignPairs) {
    // Every own pair has similarity 1 and every foreign pair is orthogonal.
    std::vector<cag::CorpusEntry> entries;
    for (int i = 0; i < 6; ++i) {
        std::vector<double> v(6, 0.0);
        v[i] = 1.0;
        entries.push_back(fixtures::entry("c" + std::to_string(i), "t", v, {v, v, v}));
    }
    const auto index = fixtures::fitted(entries, NegativePairStrategy::sampled(40, 3));
    ASSERT_EQ(index->negative_samples.count(), 40u);
    for (double v : index->negative_samples.values()) EXPECT_EQ(v, 0.0);
}

TEST(Fit, DeterministicInRangeAndMatchesOracle) {
    std::mt19937_64 rng(6);
    const auto entries = fixtures::random_corpus(rng, 20, 6, 3);
    const auto a = fixtures::fitted(entries);
    const auto b = fixtures::fitted(entries);
    EXPECT_EQ(a->positive_samples, b->positive_samples);
    EXPECT_EQ(a->negative_samples, b->negative_samples);
    for (double v : a->negative_samples.values()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
    std::vector<double> expected;
    for (std::size_t j = 0; j < a->pseudo_queries.size(); ++j) {
        expected.push_back(oracle::cosine(oracle::row(a->context_vectors, a->pseudo_queries[j].parent),
                                          oracle::row(a->query_vectors, j)));
    }
    std::sort(expected.begin(), expected.end());
    ASSERT_EQ(expected.size(), a->positive_samples.count());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(a->positive_samples.values()[i], expected[i], 1e-12);
}

TEST(Fit, ContextsWithoutQueriesExcludedWithWarning) {
    std::mt19937_64 rng(7);
    auto entries = fixtures::random_corpus(rng, 5, 4, 2);
    entries[2].pseudo_queries.clear();
    cag::FitReport report;
    const auto index = cag::fit_distributions(cag::ingest(entries), NegativePairStrategy::all_cross(),
                                              cag::FitOptions{1}, &report);
    EXPECT_EQ(index.contexts.size(), 5u);
    EXPECT_EQ(index.negative_samples.count(), 4u * 6u);
    ASSERT_EQ(report.warnings.size(), 1u);
    EXPECT_NE(report.warnings[0].find("c2"), std::string::npos);
}

TEST(NegativeStrategy, Parse) {
    EXPECT_EQ(NegativePairStrategy::parse("all-cross"), NegativePairStrategy::all_cross());
    EXPECT_EQ(NegativePairStrategy::parse("sampled:50:9"), NegativePairStrategy::sampled(50, 9));
    EXPECT_EQ(NegativePairStrategy::parse("sampled:50"), NegativePairStrategy::sampled(50, 0));
    for (const char* bad : {"sampled:", "sampled:0", "sampled:x", "cross", "sampled:5:y"}) {
        EXPECT_THROW(NegativePairStrategy::parse(bad), cag::Error) << bad;
    }
}

TEST(Validate, ReferentialIntegrity) {
    auto index = two_by_three();
    index.pseudo_queries[0].parent_context_id = "zzz";
    EXPECT_EQ(error_of([&] { index.validate(); }).code(), ErrorCode::ReferentialIntegrity);
    auto other = two_by_three();
    other.contexts[0].pseudo_query_ids.push_back("b/q0");
    EXPECT_EQ(error_of([&] { other.validate(); }).code(), ErrorCode::ReferentialIntegrity);
}

TEST(IndexIo, RoundTrip) {
    fixtures::TempDir dir;
    auto index = cag::fit_distributions(two_by_three(), NegativePairStrategy::sampled(5, 1), cag::FitOptions{1});
    cag::cache_cutoff(index, cag::PolicySpec::quartile(1), cag::SampleLabel::Combined);
    cag::save_index(index, dir.file("i.cagx"));
    EXPECT_EQ(cag::load_index(dir.file("i.cagx")), index);
    const auto unfitted = two_by_three();
    cag::save_index(unfitted, dir.file("u.cagx"));
    EXPECT_EQ(cag::load_index(dir.file("u.cagx")), unfitted);
}

TEST(IndexIo, RoundTripRandom) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 10; ++t) {
        const auto index = fixtures::fitted(fixtures::random_corpus(rng, 5 + t, 3 + t, 1 + t % 3));
        EXPECT_EQ(cag::deserialize_index(cag::serialize_index(*index)), *index);
    }
}

TEST(IndexIo, TruncatedCorruptAndVersion) {
    const auto bytes = cag::serialize_index(two_by_three());
    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
        std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<long>(cut));
        EXPECT_EQ(error_of([&] { cag::deserialize_index(t); }).code(), ErrorCode::CorruptIndex) << cut;
    }
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x40;
    EXPECT_EQ(error_of([&] { cag::deserialize_index(flipped); }).code(), ErrorCode::CorruptIndex);
    auto version = bytes;
    version[4] = 9;
    EXPECT_EQ(error_of([&] { cag::deserialize_index(version); }).code(), ErrorCode::VersionUnsupported);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_EQ(error_of([&] { cag::deserialize_index(magic); }).code(), ErrorCode::CorruptIndex);
}

TEST(IndexIo, MissingFileIsIoError) {
    EXPECT_EQ(error_of([] { cag::load_index("/nonexistent/dir/x.cagx"); }).code(), ErrorCode::IoError);
}

}  // namespace
