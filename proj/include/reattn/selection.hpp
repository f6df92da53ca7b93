// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "reattn/dense_matrix.hpp"
#include "reattn/kv_cache.hpp"

namespace reattn {

enum class SpanMode { Aligned, Centered };

// All cache-selection hyperparameters. Defaults follow the reference
// operating point: 32 + 127*32 + 4096 = 8192, one full attention window.
struct SelectionConfig {
    std::size_t k = 4;          // per-(head, query) top-k
    std::size_t k_prime = 127;  // voted winners; 0 switches to the plain window mode
    std::size_t span_m = 32;    // neighborhood kept around each winner
    std::size_t tile_size = 2048;
    std::size_t l_global = 32;
    std::size_t l_local = 4096;
    std::size_t l_chunk = 512;
    SpanMode span_mode = SpanMode::Aligned;

    std::size_t budget() const { return l_global + k_prime * span_m + l_local; }

    void validate(std::size_t pretrain_window) const {
        if (k == 0) throw std::invalid_argument("selection: k must be >= 1");
        if (span_m == 0) throw std::invalid_argument("selection: span_m must be >= 1");
        if (tile_size == 0) throw std::invalid_argument("selection: tile_size must be >= 1");
        if (l_chunk == 0) throw std::invalid_argument("selection: l_chunk must be >= 1");
        if (l_chunk > l_local)
            throw std::invalid_argument("selection: l_chunk must not exceed l_local");
        if (budget() > pretrain_window)
            throw std::invalid_argument(
                "selection: budget l_global + k_prime*span_m + l_local = " +
                std::to_string(budget()) + " exceeds pretrain window " +
                std::to_string(pretrain_window));
    }
};

// Engine-side accounting of transient scoring memory. Deliberately not OS
// RSS: counts bytes the scorer asks for, so the numbers are reproducible.
struct ScratchMeter {
    std::size_t current = 0;
    std::size_t peak = 0;
    void add(std::size_t n) {
        current += n;
        peak = std::max(peak, current);
    }
    void sub(std::size_t n) { current -= n; }
    void reset() { current = peak = 0; }
};

struct TopkEntry {
    std::size_t index;  // middle coordinate
    float score;        // dot product, no position embedding
};

struct ScoredCandidate {
    std::size_t middle_index;
    float score;  // max dot product seen across heads/queries
    std::size_t votes;
};

// [kv_head][query] -> up to k entries, score descending, ties lowest index first.
using PerHeadTopk = std::vector<std::vector<std::vector<TopkEntry>>>;

namespace detail {

// Running top-k buffer: unsorted while filling, replace the worst afterwards.
// Candidates arrive in ascending index order; an incoming score equal to the
// current worst never displaces it, which keeps the lower index. The worst
// slot and its score are cached so the common reject is one compare; the
// O(k) rescan happens only on the rare insert.
struct TopkBuffer {
    std::vector<TopkEntry> entries;
    std::size_t cap = 0;
    std::size_t worst = 0;
    float threshold = 0.0f;  // == entries[worst].score once full

    void init(std::size_t k) {
        cap = k;
        entries.clear();
        entries.reserve(k);
        worst = 0;
        threshold = 0.0f;
    }

    bool full() const { return entries.size() == cap; }

    void refresh_worst() {
        worst = 0;
        for (std::size_t i = 1; i < entries.size(); ++i) {
            const TopkEntry& e = entries[i];
            const TopkEntry& w = entries[worst];
            if (e.score < w.score || (e.score == w.score && e.index > w.index)) worst = i;
        }
        threshold = entries[worst].score;
    }

    // Fill phase: append unconditionally, prime the threshold on the last slot.
    void fill(std::size_t index, float score) {
        entries.push_back(TopkEntry{index, score});
        if (full()) refresh_worst();
    }

    // Post-fill phase: caller must have established score > threshold.
    void replace_worst(std::size_t index, float score) {
        entries[worst] = TopkEntry{index, score};
        refresh_worst();
    }

    void offer(std::size_t index, float score) {
        if (!full()) {
            fill(index, score);
            return;
        }
        if (score > threshold) replace_worst(index, score);
    }

    std::vector<TopkEntry> sorted() const {
        std::vector<TopkEntry> out = entries;
        std::stable_sort(out.begin(), out.end(), [](const TopkEntry& a, const TopkEntry& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.index < b.index;
        });
        return out;
    }
};

// Mean of each KV group's query heads; dot(mean q, k) == mean of the group's
// per-head dots, so one score stream per stored KV head suffices.
inline DenseMatrix group_mean_queries(const DenseMatrix& queries, std::size_t n_heads,
                                      std::size_t n_kv_heads, std::size_t d) {
    const std::size_t group = n_heads / n_kv_heads;
    DenseMatrix mq(queries.rows, n_kv_heads * d);
    const float inv = 1.0f / float(group);
    for (std::size_t r = 0; r < queries.rows; ++r) {
        const float* src = queries.row(r);
        float* dst = mq.row(r);
        for (std::size_t kv = 0; kv < n_kv_heads; ++kv) {
            for (std::size_t c = 0; c < d; ++c) {
                float acc = 0.0f;
                for (std::size_t g = 0; g < group; ++g) acc += src[(kv * group + g) * d + c];
                dst[kv * d + c] = acc * inv;
            }
        }
    }
    return mq;
}

}  // namespace detail

// Streaming position-agnostic top-k scoring of a query block against the
// middle segment. Scores are plain dot products of pre-rotation projections.
// The middle is consumed tile by tile; each tile's scores land in a buffer of
// tile_size * n_q floats that is reused for every tile and head, so transient
// memory never depends on the middle length. Exact top-k, ties to the lower
// index.
//
// queries: n_q x (n_heads * d), pre-position-embedding.
inline PerHeadTopk fused_topk_scores(const DenseMatrix& queries, std::size_t n_heads,
                                     std::span<const KeySegmentView> middle,
                                     const SelectionConfig& cfg, ScratchMeter* meter = nullptr) {
    const std::size_t n_kv = middle.size();
    if (n_kv == 0 || n_heads % n_kv != 0)
        throw std::invalid_argument("fused_topk_scores: n_heads must be a multiple of kv heads");
    const std::size_t d = middle[0].dim;
    if (queries.cols != n_heads * d)
        throw std::invalid_argument("fused_topk_scores: query width != n_heads * d");
    const std::size_t n_q = queries.rows;
    const std::size_t middle_len = middle[0].count;

    PerHeadTopk result(n_kv, std::vector<std::vector<TopkEntry>>(n_q));
    if (middle_len == 0 || n_q == 0) return result;

    const DenseMatrix mq = detail::group_mean_queries(queries, n_heads, n_kv, d);
    const std::size_t tile = cfg.tile_size;
    std::vector<float> tile_scores(tile * n_q);  // [q][tile offset]
    std::vector<detail::TopkBuffer> topk(n_kv * n_q);
    for (auto& b : topk) b.init(cfg.k);

    if (meter) {
        meter->add(mq.values.size() * sizeof(float));
        meter->add(tile_scores.size() * sizeof(float));
        meter->add(topk.size() * cfg.k * sizeof(TopkEntry));
    }

    for (std::size_t kv = 0; kv < n_kv; ++kv) {
        const KeySegmentView keys = middle[kv];
        for (std::size_t t0 = 0; t0 < middle_len; t0 += tile) {
            const std::size_t t1 = std::min(middle_len, t0 + tile);
            const std::size_t tlen = t1 - t0;
            // score computation: 4 queries per key pass
            std::size_t q = 0;
            for (; q + 4 <= n_q; q += 4) {
                const float* q0 = mq.row(q + 0) + kv * d;
                const float* q1 = mq.row(q + 1) + kv * d;
                const float* q2 = mq.row(q + 2) + kv * d;
                const float* q3 = mq.row(q + 3) + kv * d;
                for (std::size_t i = 0; i < tlen; ++i) {
                    const float* krow = keys.row(t0 + i);
                    tile_scores[(q + 0) * tile + i] = dot_f32(q0, krow, d);
                    tile_scores[(q + 1) * tile + i] = dot_f32(q1, krow, d);
                    tile_scores[(q + 2) * tile + i] = dot_f32(q2, krow, d);
                    tile_scores[(q + 3) * tile + i] = dot_f32(q3, krow, d);
                }
            }
            for (; q < n_q; ++q) {
                const float* qrow = mq.row(q) + kv * d;
                for (std::size_t i = 0; i < tlen; ++i)
                    tile_scores[q * tile + i] = dot_f32(qrow, keys.row(t0 + i), d);
            }
            // fused top-k update over this tile; the reject path is a single
            // compare against the register-held current worst
            for (std::size_t qq = 0; qq < n_q; ++qq) {
                detail::TopkBuffer& buf = topk[kv * n_q + qq];
                const float* srow = tile_scores.data() + qq * tile;
                std::size_t i = 0;
                while (!buf.full() && i < tlen) {
                    buf.fill(t0 + i, srow[i]);
                    ++i;
                }
                float thr = buf.threshold;
                for (; i < tlen; ++i) {
                    if (srow[i] > thr) {
                        buf.replace_worst(t0 + i, srow[i]);
                        thr = buf.threshold;
                    }
                }
            }
        }
        for (std::size_t qq = 0; qq < n_q; ++qq) result[kv][qq] = topk[kv * n_q + qq].sorted();
    }

    if (meter) {
        meter->sub(mq.values.size() * sizeof(float));
        meter->sub(tile_scores.size() * sizeof(float));
        meter->sub(topk.size() * cfg.k * sizeof(TopkEntry));
    }
    return result;
}

// Tally one vote per (kv head, query) appearance; rank by votes, then max
// score, then lower index. Deterministic by construction.
inline std::vector<ScoredCandidate> tally_candidates(const PerHeadTopk& per_head) {
    std::vector<ScoredCandidate> flat;
    for (const auto& head : per_head)
        for (const auto& query : head)
            for (const TopkEntry& e : query) flat.push_back(ScoredCandidate{e.index, e.score, 1});
    std::sort(flat.begin(), flat.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
        return a.middle_index < b.middle_index;
    });
    std::vector<ScoredCandidate> merged;
    for (const ScoredCandidate& c : flat) {
        if (!merged.empty() && merged.back().middle_index == c.middle_index) {
            merged.back().votes += 1;
            merged.back().score = std::max(merged.back().score, c.score);
        } else {
            merged.push_back(c);
        }
    }
    std::stable_sort(merged.begin(), merged.end(),
                     [](const ScoredCandidate& a, const ScoredCandidate& b) {
                         if (a.votes != b.votes) return a.votes > b.votes;
                         if (a.score != b.score) return a.score > b.score;
                         return a.middle_index < b.middle_index;
                     });
    return merged;
}

inline std::vector<std::size_t> vote(const PerHeadTopk& per_head, std::size_t k_prime) {
    std::vector<std::size_t> winners;
    if (k_prime == 0) return winners;
    const std::vector<ScoredCandidate> ranked = tally_candidates(per_head);
    winners.reserve(std::min(k_prime, ranked.size()));
    for (std::size_t i = 0; i < ranked.size() && i < k_prime; ++i)
        winners.push_back(ranked[i].middle_index);
    return winners;
}

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    std::size_t size() const { return end - begin; }
    bool operator==(const Span&) const = default;
};

// Ordered, pairwise-disjoint index ranges over the middle segment.
struct SpanSet {
    std::vector<Span> spans;

    std::size_t coverage() const {
        std::size_t c = 0;
        for (const Span& s : spans) c += s.size();
        return c;
    }

    bool contains(std::size_t idx) const {
        for (const Span& s : spans)
            if (idx >= s.begin && idx < s.end) return true;
        return false;
    }

    bool empty() const { return spans.empty(); }
};

// Each winner keeps span_m neighbors. Aligned mode snaps to the fixed
// m-grid over the middle, so duplicates collapse to identical blocks;
// centered mode windows around the winner and merges overlaps. Output is
// sorted ascending regardless of vote rank.
inline SpanSet expand_spans(std::span<const std::size_t> winners, std::size_t span_m,
                            std::size_t middle_len, SpanMode mode = SpanMode::Aligned) {
    SpanSet out;
    if (winners.empty() || middle_len == 0) return out;
    std::vector<Span> raw;
    raw.reserve(winners.size());
    for (std::size_t w : winners) {
        if (w >= middle_len) throw std::out_of_range("expand_spans: winner outside middle");
        if (mode == SpanMode::Aligned) {
            const std::size_t start = (w / span_m) * span_m;
            raw.push_back(Span{start, std::min(start + span_m, middle_len)});
        } else {
            std::size_t start = w > span_m / 2 ? w - span_m / 2 : 0;
            if (start + span_m > middle_len)
                start = middle_len > span_m ? middle_len - span_m : 0;
            raw.push_back(Span{start, std::min(start + span_m, middle_len)});
        }
    }
    std::sort(raw.begin(), raw.end(), [](const Span& a, const Span& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });
    for (const Span& s : raw) {
        if (!out.spans.empty() && s.begin <= out.spans.back().end && mode == SpanMode::Centered) {
            out.spans.back().end = std::max(out.spans.back().end, s.end);  // merge overlap
        } else if (!out.spans.empty() && s == out.spans.back()) {
            continue;  // aligned duplicates
        } else {
            out.spans.push_back(s);
        }
    }
    return out;
}

}  // namespace reattn
