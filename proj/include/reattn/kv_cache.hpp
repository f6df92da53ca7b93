// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "reattn/dense_matrix.hpp"

namespace reattn {

struct SegmentView {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
    bool empty() const { return begin == end; }
};

// Contiguous slice of one KV head's key storage; rows are cache entries.
struct KeySegmentView {
    const float* data = nullptr;
    std::size_t count = 0;
    std::size_t dim = 0;
    const float* row(std::size_t i) const { return data + i * dim; }
};

// Per-layer append-only K/V storage, position-free, partitioned into
// global / middle / local. The earliest l_global entries stay global for the
// lifetime of the cache; new entries land in local; once local holds
// l_local_max entries, the oldest of them are promoted into middle in FIFO
// order. Entries are never moved or compacted, so cache indices are stable
// and equal to append rank.
class SegmentedKvCache {
public:
    SegmentedKvCache(std::size_t n_kv_heads, std::size_t d_head, std::size_t l_global,
                     std::size_t l_local_max)
        : n_kv_heads_(n_kv_heads),
          d_head_(d_head),
          l_global_(l_global),
          l_local_max_(l_local_max),
          keys_(n_kv_heads),
          values_(n_kv_heads) {
        if (n_kv_heads == 0 || d_head == 0)
            throw std::invalid_argument("cache needs at least one head and a positive head dim");
        if (l_local_max == 0) throw std::invalid_argument("l_local_max must be positive");
    }

    // new_keys / new_values: rows = entries, cols = n_kv_heads * d_head.
    void append(const DenseMatrix& new_keys, const DenseMatrix& new_values) {
        if (new_keys.cols != n_kv_heads_ * d_head_ || !new_keys.same_shape(new_values))
            throw std::invalid_argument("cache append: shape mismatch");
        for (std::size_t r = 0; r < new_keys.rows; ++r) {
            const float* krow = new_keys.row(r);
            const float* vrow = new_values.row(r);
            for (std::size_t h = 0; h < n_kv_heads_; ++h) {
                keys_[h].insert(keys_[h].end(), krow + h * d_head_, krow + (h + 1) * d_head_);
                values_[h].insert(values_[h].end(), vrow + h * d_head_, vrow + (h + 1) * d_head_);
            }
        }
        total_ += new_keys.rows;
        global_end_ = std::min(total_, l_global_);
        local_start_ = total_ - std::min(total_ - global_end_, l_local_max_);
    }

    std::size_t total() const { return total_; }
    std::size_t n_kv_heads() const { return n_kv_heads_; }
    std::size_t d_head() const { return d_head_; }
    std::size_t l_global() const { return l_global_; }
    std::size_t l_local_max() const { return l_local_max_; }

    struct Views {
        SegmentView global;
        SegmentView middle;
        SegmentView local;
    };

    Views views() const {
        return Views{SegmentView{0, global_end_}, SegmentView{global_end_, local_start_},
                     SegmentView{local_start_, total_}};
    }

    std::size_t middle_len() const { return local_start_ - global_end_; }

    const float* key(std::size_t head, std::size_t idx) const {
        return keys_[head].data() + idx * d_head_;
    }
    const float* value(std::size_t head, std::size_t idx) const {
        return values_[head].data() + idx * d_head_;
    }

    // Zero-copy view of the middle segment keys for one head.
    KeySegmentView middle_keys(std::size_t head) const {
        return KeySegmentView{keys_[head].data() + global_end_ * d_head_, middle_len(), d_head_};
    }

    std::vector<KeySegmentView> middle_keys_all() const {
        std::vector<KeySegmentView> out;
        out.reserve(n_kv_heads_);
        for (std::size_t h = 0; h < n_kv_heads_; ++h) out.push_back(middle_keys(h));
        return out;
    }

private:
    std::size_t n_kv_heads_;
    std::size_t d_head_;
    std::size_t l_global_;
    std::size_t l_local_max_;
    std::size_t total_ = 0;
    std::size_t global_end_ = 0;   // global = [0, global_end_)
    std::size_t local_start_ = 0;  // local  = [local_start_, total_)
    std::vector<std::vector<float>> keys_;    // per head, entries * d_head
    std::vector<std::vector<float>> values_;
};

// Debug snapshot container: magic "RKVC", u32 version, u32 n_layers /
// n_kv_heads / d_head, then per layer u64 {total, l_global, l_local_max}
// followed by raw little-endian f32 key and value payloads, head-major.
namespace snapshot {

constexpr char kMagic[4] = {'R', 'K', 'V', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const char* what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw std::runtime_error(std::string("cache snapshot truncated at ") + what);
    return v;
}

}  // namespace snapshot

inline void write_cache_snapshot(const std::string& path,
                                 std::span<const SegmentedKvCache> layers) {
    if (layers.empty()) throw std::invalid_argument("cache snapshot: no layers");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(snapshot::kMagic, 4);
    snapshot::write_pod(os, snapshot::kVersion);
    snapshot::write_pod(os, std::uint32_t(layers.size()));
    snapshot::write_pod(os, std::uint32_t(layers[0].n_kv_heads()));
    snapshot::write_pod(os, std::uint32_t(layers[0].d_head()));
    for (const auto& cache : layers) {
        snapshot::write_pod(os, std::uint64_t(cache.total()));
        snapshot::write_pod(os, std::uint64_t(cache.l_global()));
        snapshot::write_pod(os, std::uint64_t(cache.l_local_max()));
        if (cache.total() == 0) continue;
        for (std::size_t h = 0; h < cache.n_kv_heads(); ++h)
            os.write(reinterpret_cast<const char*>(cache.key(h, 0)),
                     std::streamsize(cache.total() * cache.d_head() * sizeof(float)));
        for (std::size_t h = 0; h < cache.n_kv_heads(); ++h)
            os.write(reinterpret_cast<const char*>(cache.value(h, 0)),
                     std::streamsize(cache.total() * cache.d_head() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::vector<SegmentedKvCache> read_cache_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, snapshot::kMagic, 4) != 0)
        throw std::runtime_error("not a cache snapshot (bad magic): " + path);
    const auto version = snapshot::read_pod<std::uint32_t>(is, "version");
    if (version != snapshot::kVersion)
        throw std::runtime_error("unsupported cache snapshot version " + std::to_string(version));
    const auto n_layers = snapshot::read_pod<std::uint32_t>(is, "n_layers");
    const auto n_kv_heads = snapshot::read_pod<std::uint32_t>(is, "n_kv_heads");
    const auto d_head = snapshot::read_pod<std::uint32_t>(is, "d_head");

    std::vector<SegmentedKvCache> layers;
    layers.reserve(n_layers);
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        const auto total = snapshot::read_pod<std::uint64_t>(is, "layer entry count");
        const auto l_global = snapshot::read_pod<std::uint64_t>(is, "l_global");
        const auto l_local_max = snapshot::read_pod<std::uint64_t>(is, "l_local_max");
        SegmentedKvCache cache(n_kv_heads, d_head, std::size_t(l_global),
                               std::size_t(l_local_max));
        DenseMatrix keys(std::size_t(total), n_kv_heads * d_head);
        DenseMatrix values(std::size_t(total), n_kv_heads * d_head);
        for (std::uint32_t h = 0; h < n_kv_heads; ++h) {
            for (std::uint64_t e = 0; e < total; ++e) {
                if (!is.read(reinterpret_cast<char*>(keys.row(std::size_t(e)) + h * d_head),
                             std::streamsize(d_head * sizeof(float))))
                    throw std::runtime_error("cache snapshot truncated at layer keys");
            }
        }
        for (std::uint32_t h = 0; h < n_kv_heads; ++h) {
            for (std::uint64_t e = 0; e < total; ++e) {
                if (!is.read(reinterpret_cast<char*>(values.row(std::size_t(e)) + h * d_head),
                             std::streamsize(d_head * sizeof(float))))
                    throw std::runtime_error("cache snapshot truncated at layer values");
            }
        }
        cache.append(keys, values);
        layers.push_back(std::move(cache));
    }
    return layers;
}

}  // namespace reattn
