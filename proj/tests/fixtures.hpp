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

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cag/corpus.hpp"
#include "cag/vecmath.hpp"

namespace fixtures {

inline std::vector<double> gaussian(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(dim);
    for (auto& x : v) x = n(rng);
    return v;
}

inline cag::Embedding random_embedding(std::mt19937_64& rng, std::size_t dim) {
    return cag::Embedding(gaussian(rng, dim));
}

/// Pseudo-queries are noisy copies of their context so positives sit high.
inline std::vector<cag::CorpusEntry> random_corpus(std::mt19937_64& rng, std::size_t contexts, std::size_t dim,
                                                   std::size_t queries_per_context, std::size_t topics = 3,
                                                   double noise = 0.5) {
    std::vector<cag::CorpusEntry> out;
    std::normal_distribution<double> n(0.0, noise);
    for (std::size_t i = 0; i < contexts; ++i) {
        cag::CorpusEntry e;
        e.id = "c" + std::to_string(i);
        e.topic = "t" + std::to_string(i % topics);
        e.text = "context " + std::to_string(i);
        const auto base = gaussian(rng, dim);
        e.embedding = cag::Embedding(base);
        for (std::size_t j = 0; j < queries_per_context; ++j) {
            auto v = base;
            for (auto& x : v) x += n(rng);
            e.pseudo_queries.push_back({e.id + "/q" + std::to_string(j), "question " + std::to_string(j), cag::Embedding(v)});
        }
        out.push_back(std::move(e));
    }
    return out;
}

inline std::shared_ptr<const cag::CorpusIndex> fitted(const std::vector<cag::CorpusEntry>& entries,
                                                      cag::NegativePairStrategy s = cag::NegativePairStrategy::all_cross(),
                                                      std::size_t min_positive = 1) {
    return std::make_shared<const cag::CorpusIndex>(
        cag::fit_distributions(cag::ingest(entries), s, cag::FitOptions{min_positive}));
}

inline cag::CorpusEntry entry(std::string id, std::string topic, std::vector<double> ctx,
                              std::vector<std::vector<double>> queries) {
    cag::CorpusEntry e;
    e.id = id;
    e.topic = std::move(topic);
    e.text = "text of " + id;
    e.embedding = cag::Embedding(std::move(ctx));
    for (std::size_t j = 0; j < queries.size(); ++j) {
        e.pseudo_queries.push_back({id + "/q" + std::to_string(j), "q" + std::to_string(j), cag::Embedding(queries[j])});
    }
    return e;
}

/// Unique scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("cag-test-" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace fixtures
