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

// Binary index file, little-endian throughout:
//
//   magic "CAGX" | version u16 | dim u32
//   n_contexts u64 | n_pseudo_queries u64 | n_positive u64 | n_negative u64
//   fingerprint (u32 length + UTF-8)
//   context embeddings   f32[n_contexts * dim]
//   query embeddings     f32[n_pseudo_queries * dim]
//   positive samples     f64[n_positive]
//   negative samples     f64[n_negative]
//   metadata: fitted u8, strategy (u8 kind, u64 count, u64 seed),
//             cutoff cache (u8 present, policy kind u8, f64 param, u8 source, f64 value),
//             contexts (id, topic, text, u32 k, k pseudo-query ids),
//             pseudo-queries (id, u64 parent row, text)
//   checksum u64 (FNV-1a over every preceding byte)

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cag/corpus.hpp"
#include "cag/error.hpp"

namespace cag {

inline constexpr char kIndexMagic[4] = {'C', 'A', 'G', 'X'};
inline constexpr std::uint16_t kIndexVersion = 1;

namespace detail {

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class ByteWriter {
public:
    template <class UInt>
    void put_uint(UInt v) {
        for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void put_u8(std::uint8_t v) { bytes_.push_back(v); }
    void put_f32(float v) { put_uint(std::bit_cast<std::uint32_t>(v)); }
    void put_f64(double v) { put_uint(std::bit_cast<std::uint64_t>(v)); }
    void put_raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    void put_string(std::string_view s) {
        put_uint(static_cast<std::uint32_t>(s.size()));
        put_raw(s);
    }
    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <class UInt>
    UInt get_uint() {
        need(sizeof(UInt));
        UInt v = 0;
        for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(UInt);
        return v;
    }
    std::uint8_t get_u8() { return get_uint<std::uint8_t>(); }
    float get_f32() { return std::bit_cast<float>(get_uint<std::uint32_t>()); }
    double get_f64() { return std::bit_cast<double>(get_uint<std::uint64_t>()); }
    std::string get_raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::string get_string() { return get_raw(get_uint<std::uint32_t>()); }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    void need(std::size_t n) const {
        if (n > remaining()) throw Error(ErrorCode::CorruptIndex, "unexpected end of data");
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw Error(ErrorCode::IoError, "read failed for '" + path + "'");
    return bytes;
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

inline void seal(ByteWriter& w) { w.put_uint(fnv1a64(w.bytes())); }

/// Verifies the trailing checksum and returns the covered payload.
inline std::span<const std::uint8_t> unseal(std::span<const std::uint8_t> bytes, ErrorCode corrupt) {
    if (bytes.size() < 8) throw Error(corrupt, "file too short");
    const auto payload = bytes.first(bytes.size() - 8);
    ByteReader tail(bytes.last(8));
    if (tail.get_uint<std::uint64_t>() != fnv1a64(payload)) throw Error(corrupt, "checksum mismatch");
    return payload;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_index(const CorpusIndex& index) {
    index.validate();
    detail::ByteWriter w;
    w.put_raw(std::string_view(kIndexMagic, 4));
    w.put_uint(kIndexVersion);
    w.put_uint(static_cast<std::uint32_t>(index.dim));
    w.put_uint(static_cast<std::uint64_t>(index.contexts.size()));
    w.put_uint(static_cast<std::uint64_t>(index.pseudo_queries.size()));
    w.put_uint(static_cast<std::uint64_t>(index.positive_samples.count()));
    w.put_uint(static_cast<std::uint64_t>(index.negative_samples.count()));
    w.put_string(index.embedder_fingerprint);
    for (float v : index.context_vectors.data()) w.put_f32(v);
    for (float v : index.query_vectors.data()) w.put_f32(v);
    for (double v : index.positive_samples.values()) w.put_f64(v);
    for (double v : index.negative_samples.values()) w.put_f64(v);

    w.put_u8(index.fitted ? 1 : 0);
    w.put_u8(static_cast<std::uint8_t>(index.negative_strategy.kind));
    w.put_uint(index.negative_strategy.sample_count);
    w.put_uint(index.negative_strategy.seed);
    w.put_u8(index.cutoff_cache ? 1 : 0);
    if (index.cutoff_cache) {
        w.put_u8(static_cast<std::uint8_t>(index.cutoff_cache->policy.kind()));
        w.put_f64(index.cutoff_cache->policy.rank_percent());
        w.put_u8(static_cast<std::uint8_t>(index.cutoff_cache->source));
        w.put_f64(index.cutoff_cache->value);
    }
    for (const auto& c : index.contexts) {
        w.put_string(c.id);
        w.put_string(c.topic);
        w.put_string(c.text);
        w.put_uint(static_cast<std::uint32_t>(c.pseudo_query_ids.size()));
        for (const auto& id : c.pseudo_query_ids) w.put_string(id);
    }
    for (const auto& q : index.pseudo_queries) {
        w.put_string(q.id);
        w.put_uint(static_cast<std::uint64_t>(q.parent));
        w.put_string(q.text);
    }
    detail::seal(w);
    return std::move(w.bytes());
}

namespace detail {

inline PolicySpec policy_from_wire(std::uint8_t kind, double param) {
    using K = PolicySpec::Kind;
    switch (static_cast<K>(kind)) {
        case K::Minimum: return PolicySpec::minimum();
        case K::Maximum: return PolicySpec::maximum();
        case K::Mean: return PolicySpec::mean();
        case K::Median: return PolicySpec::median();
        case K::Quartile: return PolicySpec::quartile(param == 25.0 ? 1 : 3);
        case K::Percentile: return PolicySpec::percentile(param);
    }
    throw Error(ErrorCode::CorruptIndex, "unknown policy kind");
}

}  // namespace detail

inline CorpusIndex deserialize_index(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 6 || std::memcmp(bytes.data(), kIndexMagic, 4) != 0) {
        throw Error(ErrorCode::CorruptIndex, "bad magic bytes");
    }
    const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
    if (version != kIndexVersion) {
        throw Error(ErrorCode::VersionUnsupported, "index format version " + std::to_string(version));
    }
    detail::ByteReader r(detail::unseal(bytes, ErrorCode::CorruptIndex));
    r.get_raw(4);
    r.get_uint<std::uint16_t>();

    try {
        CorpusIndex index;
        index.dim = r.get_uint<std::uint32_t>();
        const auto n_ctx = r.get_uint<std::uint64_t>();
        const auto n_pq = r.get_uint<std::uint64_t>();
        const auto n_pos = r.get_uint<std::uint64_t>();
        const auto n_neg = r.get_uint<std::uint64_t>();
        index.embedder_fingerprint = r.get_string();
        if (index.dim == 0 && (n_ctx | n_pq) != 0) throw Error(ErrorCode::CorruptIndex, "zero dim");
        r.need((n_ctx + n_pq) * index.dim * 4 + (n_pos + n_neg) * 8);

        auto read_matrix = [&](std::uint64_t rows) {
            EmbeddingMatrix m(index.dim);
            m.reserve(rows);
            std::vector<float> row(index.dim);
            for (std::uint64_t i = 0; i < rows; ++i) {
                for (auto& v : row) v = r.get_f32();
                m.append_raw(row);
            }
            return m;
        };
        index.context_vectors = read_matrix(n_ctx);
        index.query_vectors = read_matrix(n_pq);

        auto read_samples = [&](SampleLabel label, std::uint64_t n) {
            std::vector<double> v(n);
            for (auto& x : v) x = r.get_f64();
            if (!std::is_sorted(v.begin(), v.end())) throw Error(ErrorCode::CorruptIndex, "samples not sorted");
            return PairSampleSet(label, std::move(v));
        };
        index.positive_samples = read_samples(SampleLabel::Positive, n_pos);
        index.negative_samples = read_samples(SampleLabel::Negative, n_neg);

        index.fitted = r.get_u8() != 0;
        const auto kind = r.get_u8();
        if (kind > 2) throw Error(ErrorCode::CorruptIndex, "unknown negative strategy");
        index.negative_strategy.kind = static_cast<NegativePairStrategy::Kind>(kind);
        index.negative_strategy.sample_count = r.get_uint<std::uint64_t>();
        index.negative_strategy.seed = r.get_uint<std::uint64_t>();
        if (r.get_u8() != 0) {
            const auto pk = r.get_u8();
            const double param = r.get_f64();
            const auto source = r.get_u8();
            if (source > 2) throw Error(ErrorCode::CorruptIndex, "unknown sample source");
            index.cutoff_cache =
                CutoffCache{detail::policy_from_wire(pk, param), static_cast<SampleLabel>(source), r.get_f64()};
        }
        index.contexts.resize(n_ctx);
        for (auto& c : index.contexts) {
            c.id = r.get_string();
            c.topic = r.get_string();
            c.text = r.get_string();
            const auto k = r.get_uint<std::uint32_t>();
            for (std::uint32_t i = 0; i < k; ++i) c.pseudo_query_ids.push_back(r.get_string());
        }
        index.pseudo_queries.resize(n_pq);
        for (auto& q : index.pseudo_queries) {
            q.id = r.get_string();
            q.parent = r.get_uint<std::uint64_t>();
            if (q.parent >= index.contexts.size()) throw Error(ErrorCode::CorruptIndex, "parent row out of range");
            q.parent_context_id = index.contexts[q.parent].id;
            q.text = r.get_string();
        }
        if (r.remaining() != 0) throw Error(ErrorCode::CorruptIndex, "trailing bytes before checksum");
        index.validate();
        return index;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptIndex) throw;
        throw Error(ErrorCode::CorruptIndex, e.what());
    }
}

inline void save_index(const CorpusIndex& index, const std::string& path) {
    const auto bytes = serialize_index(index);
    detail::write_file(path, bytes);
}

inline CorpusIndex load_index(const std::string& path) { return deserialize_index(detail::read_file(path)); }

}  // namespace cag
