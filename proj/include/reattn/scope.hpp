// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <stdexcept>
#include <vector>

#include "reattn/kv_cache.hpp"
#include "reattn/selection.hpp"

namespace reattn {

// The bounded key/value set one attention step actually sees, gathered in
// cache order: global block, selected middle spans ascending, local block.
// source_indices maps scope row -> absolute cache position; the row number
// itself is the compact position used for rotation.
struct AttentionScope {
    std::size_t n_kv_heads = 0;
    std::size_t d_head = 0;
    std::size_t length = 0;
    std::vector<std::vector<float>> keys;    // [kv][length * d_head]
    std::vector<std::vector<float>> values;  // [kv][length * d_head]
    std::vector<std::size_t> source_indices;

    const float* key_row(std::size_t kv, std::size_t i) const {
        return keys[kv].data() + i * d_head;
    }
    const float* value_row(std::size_t kv, std::size_t i) const {
        return values[kv].data() + i * d_head;
    }
};

// spans index into the middle segment; they are shifted by global_end here.
// The assembled length is bounded by the selection budget, never by how long
// the stream has grown; exceeding the pretrain window is a hard error
// because every compact position must stay rotatable.
inline AttentionScope assemble_scope(const SegmentedKvCache& cache, const SpanSet& spans,
                                     std::size_t pretrain_window) {
    const SegmentedKvCache::Views segs = cache.views();
    AttentionScope scope;
    scope.n_kv_heads = cache.n_kv_heads();
    scope.d_head = cache.d_head();

    const std::size_t middle_len = segs.middle.size();
    std::size_t selected = 0;
    for (const Span& s : spans.spans) {
        if (s.end > middle_len) throw std::out_of_range("assemble_scope: span outside middle");
        selected += s.size();
    }
    scope.length = segs.global.size() + selected + segs.local.size();
    if (scope.length > pretrain_window)
        throw std::invalid_argument("scope exceeds pretrain window");

    scope.source_indices.reserve(scope.length);
    for (std::size_t i = segs.global.begin; i < segs.global.end; ++i)
        scope.source_indices.push_back(i);
    for (const Span& s : spans.spans)
        for (std::size_t i = s.begin; i < s.end; ++i)
            scope.source_indices.push_back(segs.middle.begin + i);
    for (std::size_t i = segs.local.begin; i < segs.local.end; ++i)
        scope.source_indices.push_back(i);

    const std::size_t d = scope.d_head;
    scope.keys.resize(scope.n_kv_heads);
    scope.values.resize(scope.n_kv_heads);
    for (std::size_t kv = 0; kv < scope.n_kv_heads; ++kv) {
        scope.keys[kv].resize(scope.length * d);
        scope.values[kv].resize(scope.length * d);
        float* kdst = scope.keys[kv].data();
        float* vdst = scope.values[kv].data();
        for (std::size_t r = 0; r < scope.length; ++r) {
            const std::size_t src = scope.source_indices[r];
            std::memcpy(kdst + r * d, cache.key(kv, src), d * sizeof(float));
            std::memcpy(vdst + r * d, cache.value(kv, src), d * sizeof(float));
        }
    }
    return scope;
}

// Plain sliding-window scope: global block plus local block, no middle
// content at all. The comparison point for selection-off runs.
inline AttentionScope assemble_window_scope(const SegmentedKvCache& cache,
                                            std::size_t pretrain_window) {
    return assemble_scope(cache, SpanSet{}, pretrain_window);
}

}  // namespace reattn
