// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "reattn/dense_matrix.hpp"
#include "reattn/kv_cache.hpp"
#include "reattn/selection.hpp"

namespace reattn {

// Unfused baseline: materializes the full middle_len x n_q score matrix per
// KV head, then sorts. Same dot kernel and same group-mean queries as the
// fused path, so the two agree bit for bit on scores; only the memory and
// traversal differ. Kept for equivalence tests and the memory benchmark.
inline PerHeadTopk naive_topk_scores(const DenseMatrix& queries, std::size_t n_heads,
                                     std::span<const KeySegmentView> middle,
                                     const SelectionConfig& cfg, ScratchMeter* meter = nullptr) {
    const std::size_t n_kv = middle.size();
    if (n_kv == 0 || n_heads % n_kv != 0)
        throw std::invalid_argument("naive_topk_scores: n_heads must be a multiple of kv heads");
    const std::size_t d = middle[0].dim;
    if (queries.cols != n_heads * d)
        throw std::invalid_argument("naive_topk_scores: query width != n_heads * d");
    const std::size_t n_q = queries.rows;
    const std::size_t middle_len = middle[0].count;

    PerHeadTopk result(n_kv, std::vector<std::vector<TopkEntry>>(n_q));
    if (middle_len == 0 || n_q == 0) return result;

    const DenseMatrix mq = detail::group_mean_queries(queries, n_heads, n_kv, d);
    std::vector<float> scores(middle_len * n_q);  // full matrix, the point of comparison
    std::vector<TopkEntry> order(middle_len);

    if (meter) {
        meter->add(mq.values.size() * sizeof(float));
        meter->add(scores.size() * sizeof(float));
        meter->add(order.size() * sizeof(TopkEntry));
    }

    for (std::size_t kv = 0; kv < n_kv; ++kv) {
        const KeySegmentView keys = middle[kv];
        for (std::size_t q = 0; q < n_q; ++q) {
            const float* qrow = mq.row(q) + kv * d;
            for (std::size_t i = 0; i < middle_len; ++i)
                scores[q * middle_len + i] = dot_f32(qrow, keys.row(i), d);
        }
        for (std::size_t q = 0; q < n_q; ++q) {
            for (std::size_t i = 0; i < middle_len; ++i)
                order[i] = TopkEntry{i, scores[q * middle_len + i]};
            const std::size_t kk = std::min(cfg.k, middle_len);
            std::partial_sort(order.begin(), order.begin() + kk, order.end(),
                              [](const TopkEntry& a, const TopkEntry& b) {
                                  if (a.score != b.score) return a.score > b.score;
                                  return a.index < b.index;
                              });
            result[kv][q].assign(order.begin(), order.begin() + kk);
        }
    }

    if (meter) {
        meter->sub(mq.values.size() * sizeof(float));
        meter->sub(scores.size() * sizeof(float));
        meter->sub(order.size() * sizeof(TopkEntry));
    }
    return result;
}

}  // namespace reattn
