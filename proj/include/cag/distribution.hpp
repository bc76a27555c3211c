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
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cag/error.hpp"

namespace cag {

enum class SampleLabel { Positive, Negative, Combined };

inline std::string_view to_string(SampleLabel label) {
    switch (label) {
        case SampleLabel::Positive: return "positive";
        case SampleLabel::Negative: return "negative";
        case SampleLabel::Combined: return "combined";
    }
    return "unknown";
}

inline SampleLabel parse_sample_label(std::string_view s) {
    if (s == "positive") return SampleLabel::Positive;
    if (s == "negative") return SampleLabel::Negative;
    if (s == "combined") return SampleLabel::Combined;
    throw Error(ErrorCode::InvalidArgument, "unknown distribution source '" + std::string(s) + "'");
}

/// Labeled similarity samples, always held sorted ascending.
class PairSampleSet {
public:
    PairSampleSet() = default;

    PairSampleSet(SampleLabel label, std::vector<double> values) : label_(label), values_(std::move(values)) {
        for (double v : values_) {
            if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
                throw Error(ErrorCode::InvalidArgument, "similarity sample outside [-1, 1]");
            }
        }
        std::sort(values_.begin(), values_.end());
    }

    SampleLabel label() const noexcept { return label_; }
    std::span<const double> values() const noexcept { return values_; }
    std::size_t count() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    static PairSampleSet merged(SampleLabel label, const PairSampleSet& a, const PairSampleSet& b) {
        std::vector<double> out;
        out.reserve(a.count() + b.count());
        std::merge(a.values_.begin(), a.values_.end(), b.values_.begin(), b.values_.end(), std::back_inserter(out));
        PairSampleSet s;
        s.label_ = label;
        s.values_ = std::move(out);
        return s;
    }

    friend bool operator==(const PairSampleSet&, const PairSampleSet&) = default;

private:
    SampleLabel label_ = SampleLabel::Positive;
    std::vector<double> values_;
};

/// Order statistic or moment used to turn a sample set into a cutoff.
class PolicySpec {
public:
    enum class Kind { Minimum, Percentile, Quartile, Mean, Median, Maximum };

    static PolicySpec minimum() { return PolicySpec(Kind::Minimum, 0.0); }
    static PolicySpec maximum() { return PolicySpec(Kind::Maximum, 100.0); }
    static PolicySpec mean() { return PolicySpec(Kind::Mean, 0.0); }
    static PolicySpec median() { return PolicySpec(Kind::Median, 50.0); }

    static PolicySpec percentile(double p) {
        if (!(p > 0.0 && p < 100.0)) {
            throw Error(ErrorCode::InvalidArgument, "percentile must lie strictly between 0 and 100");
        }
        return PolicySpec(Kind::Percentile, p);
    }

    static PolicySpec quartile(int which) {
        if (which != 1 && which != 3) throw Error(ErrorCode::InvalidArgument, "quartile must be 1 or 3");
        return PolicySpec(Kind::Quartile, which == 1 ? 25.0 : 75.0);
    }

    /// Accepts minimum|min, maximum|max, mean, median, q1, q3, pN or percentile:N.
    static PolicySpec parse(std::string_view s) {
        if (s == "minimum" || s == "min") return minimum();
        if (s == "maximum" || s == "max") return maximum();
        if (s == "mean") return mean();
        if (s == "median") return median();
        if (s == "q1") return quartile(1);
        if (s == "q3") return quartile(3);
        std::string_view num;
        if (s.starts_with("percentile:")) num = s.substr(11);
        else if (s.starts_with("p")) num = s.substr(1);
        if (!num.empty()) {
            std::string buf(num);
            char* end = nullptr;
            const double p = std::strtod(buf.c_str(), &end);
            if (end == buf.c_str() + buf.size()) return percentile(p);
        }
        throw Error(ErrorCode::InvalidArgument, "unknown policy '" + std::string(s) + "'");
    }

    Kind kind() const noexcept { return kind_; }

    /// The percentile rank the policy reads (0 for minimum, 100 for maximum);
    /// meaningless for mean.
    double rank_percent() const noexcept { return param_; }

    std::string to_string() const {
        switch (kind_) {
            case Kind::Minimum: return "minimum";
            case Kind::Maximum: return "maximum";
            case Kind::Mean: return "mean";
            case Kind::Median: return "median";
            case Kind::Quartile: return param_ == 25.0 ? "q1" : "q3";
            case Kind::Percentile: {
                std::ostringstream os;
                os << 'p' << param_;
                return os.str();
            }
        }
        return "unknown";
    }

    friend bool operator==(const PolicySpec&, const PolicySpec&) = default;

private:
    PolicySpec(Kind kind, double param) : kind_(kind), param_(param) {}

    Kind kind_ = Kind::Minimum;
    double param_ = 0.0;
};

struct DistributionSummary {
    double minimum = 0.0;
    double p5 = 0.0;
    double q1 = 0.0;
    double mean = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double p95 = 0.0;
    double maximum = 0.0;
    std::size_t count = 0;
};

inline constexpr std::string_view kPercentileMethod = "linear-inclusive";

/// Linear interpolation between closest ranks, rank = p/100 * (n - 1).
inline double percentile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw Error(ErrorCode::EmptySamples, "percentile of an empty sample set");
    const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    if (frac == 0.0) return sorted[lo];
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double mean_of(std::span<const double> sorted) {
    if (sorted.empty()) throw Error(ErrorCode::EmptySamples, "mean of an empty sample set");
    long double sum = 0.0L;
    for (double v : sorted) sum += v;
    const double m = static_cast<double>(sum / static_cast<long double>(sorted.size()));
    return std::clamp(m, sorted.front(), sorted.back());
}

namespace detail {
inline std::atomic<std::uint64_t> policy_evaluations{0};
}  // namespace detail

/// Number of policy_value evaluations since process start. Lets tests prove
/// the classification path performs no distribution work.
inline std::uint64_t policy_evaluation_count() noexcept { return detail::policy_evaluations.load(); }

inline double policy_value(const PairSampleSet& samples, const PolicySpec& policy) {
    detail::policy_evaluations.fetch_add(1, std::memory_order_relaxed);
    if (samples.empty()) throw Error(ErrorCode::EmptySamples, "policy over an empty sample set");
    const auto v = samples.values();
    switch (policy.kind()) {
        case PolicySpec::Kind::Minimum: return v.front();
        case PolicySpec::Kind::Maximum: return v.back();
        case PolicySpec::Kind::Mean: return mean_of(v);
        case PolicySpec::Kind::Median:
        case PolicySpec::Kind::Quartile:
        case PolicySpec::Kind::Percentile: return percentile_sorted(v, policy.rank_percent());
    }
    return v.front();
}

inline DistributionSummary summarize(const PairSampleSet& samples) {
    if (samples.empty()) throw Error(ErrorCode::EmptySamples, "summary of an empty sample set");
    const auto v = samples.values();
    DistributionSummary s;
    s.minimum = v.front();
    s.p5 = percentile_sorted(v, 5.0);
    s.q1 = percentile_sorted(v, 25.0);
    s.mean = mean_of(v);
    s.median = percentile_sorted(v, 50.0);
    s.q3 = percentile_sorted(v, 75.0);
    s.p95 = percentile_sorted(v, 95.0);
    s.maximum = v.back();
    s.count = v.size();
    return s;
}

struct SeparationResult {
    double auc = 0.0;
    bool exact = true;
    std::uint64_t pairs = 0;
};

/// Dominance probability P(X+ > X-) + 0.5 P(X+ == X-).
///
/// When |pos| * |neg| fits in max_exact_pairs the statistic is exact over all
/// pairs (counted by a merge over the two sorted arrays); otherwise it is
/// estimated from max_exact_pairs uniformly drawn pairs.
inline SeparationResult separation(const PairSampleSet& positive, const PairSampleSet& negative,
                                   std::uint64_t max_exact_pairs = 10'000'000, std::uint64_t seed = 0) {
    if (positive.empty() || negative.empty()) {
        throw Error(ErrorCode::EmptySamples, "separation needs non-empty positive and negative sets");
    }
    const auto pos = positive.values();
    const auto neg = negative.values();
    const std::uint64_t total = static_cast<std::uint64_t>(pos.size()) * neg.size();

    if (total <= max_exact_pairs) {
        // For each positive value count negatives strictly below and equal.
        long double wins = 0.0L;
        std::size_t below = 0;
        std::size_t upto = 0;
        for (double x : pos) {
            while (below < neg.size() && neg[below] < x) ++below;
            if (upto < below) upto = below;
            while (upto < neg.size() && neg[upto] == x) ++upto;
            wins += static_cast<long double>(below) + 0.5L * static_cast<long double>(upto - below);
        }
        return {static_cast<double>(wins / static_cast<long double>(total)), true, total};
    }

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_pos(0, pos.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_neg(0, neg.size() - 1);
    long double wins = 0.0L;
    for (std::uint64_t i = 0; i < max_exact_pairs; ++i) {
        const double a = pos[pick_pos(rng)];
        const double b = neg[pick_neg(rng)];
        if (a > b) wins += 1.0L;
        else if (a == b) wins += 0.5L;
    }
    return {static_cast<double>(wins / static_cast<long double>(max_exact_pairs)), false, max_exact_pairs};
}

inline double separation_auc(const PairSampleSet& positive, const PairSampleSet& negative,
                             std::uint64_t max_exact_pairs = 10'000'000, std::uint64_t seed = 0) {
    return separation(positive, negative, max_exact_pairs, seed).auc;
}

inline nlohmann::json to_json(const DistributionSummary& s) {
    return nlohmann::json{{"minimum", s.minimum}, {"p5", s.p5},           {"q1", s.q1},
                          {"mean", s.mean},       {"median", s.median},   {"q3", s.q3},
                          {"p95", s.p95},         {"maximum", s.maximum}, {"count", s.count}};
}

/// Positive/negative summary columns plus the dominance statistic.
struct AnalysisReport {
    DistributionSummary positive;
    DistributionSummary negative;
    SeparationResult separation;

    nlohmann::json to_json() const {
        return nlohmann::json{{"positive", cag::to_json(positive)},
                              {"negative", cag::to_json(negative)},
                              {"auc", separation.auc},
                              {"auc_method", separation.exact ? "exact" : "sampled"},
                              {"auc_pairs", separation.pairs},
                              {"percentile_method", kPercentileMethod}};
    }

    std::string to_table() const {
        struct Row {
            const char* name;
            double DistributionSummary::*field;
        };
        static constexpr Row rows[] = {
            {"Minimum", &DistributionSummary::minimum},  {"5th Percentile", &DistributionSummary::p5},
            {"1st Quartile", &DistributionSummary::q1},  {"Mean", &DistributionSummary::mean},
            {"Median", &DistributionSummary::median},    {"3rd Quartile", &DistributionSummary::q3},
            {"95th Percentile", &DistributionSummary::p95}, {"Maximum", &DistributionSummary::maximum},
        };
        std::string out;
        char line[128];
        std::snprintf(line, sizeof line, "%-18s %10s %10s\n", "Policy", "Positive", "Negative");
        out += line;
        out += std::string(40, '-') + "\n";
        for (const auto& r : rows) {
            std::snprintf(line, sizeof line, "%-18s %10.3f %10.3f\n", r.name, positive.*r.field, negative.*r.field);
            out += line;
        }
        out += std::string(40, '-') + "\n";
        std::snprintf(line, sizeof line, "%-18s %10zu %10zu\n", "Pairs", positive.count, negative.count);
        out += line;
        std::snprintf(line, sizeof line, "Dominance AUC P(pos > neg) + 0.5 P(tie): %.4f (%s, %llu pairs)\n",
                      separation.auc, separation.exact ? "exact" : "sampled",
                      static_cast<unsigned long long>(separation.pairs));
        out += line;
        out += "Percentile method: linear interpolation, inclusive (rank = p/100 * (n - 1))\n";
        return out;
    }
};

inline AnalysisReport report(const PairSampleSet& positive, const PairSampleSet& negative,
                             std::uint64_t max_exact_pairs = 10'000'000, std::uint64_t seed = 0) {
    if (positive.empty() || negative.empty()) {
        throw Error(ErrorCode::EmptySamples, "report needs non-empty positive and negative sets");
    }
    return AnalysisReport{summarize(positive), summarize(negative),
                          separation(positive, negative, max_exact_pairs, seed)};
}

}  // namespace cag
