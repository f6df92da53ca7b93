// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "reattn/dense_matrix.hpp"
#include "reattn/model.hpp"
#include "reattn/rope.hpp"
#include "reattn/softmax.hpp"

namespace reattn {

// Reference forward pass: materialized causal attention with rotation at the
// true token positions. Quadratic and allocation-heavy on purpose; this is
// the oracle the bounded-scope engine is checked against, so it stays as
// close to the textbook formulation as possible.
inline DenseMatrix forward_full(std::span<const std::uint32_t> tokens, const ModelWeights& w) {
    if (tokens.empty()) throw std::invalid_argument("empty input");
    const ModelConfig& cfg = w.config;
    if (tokens.size() > cfg.pretrain_window)
        throw std::invalid_argument("input length exceeds pretrain window");

    const std::size_t L = tokens.size();
    const std::size_t d = cfg.d_head;
    const std::size_t group = cfg.n_head / cfg.n_kv_head;
    const float scale = 1.0f / std::sqrt(float(d));
    const RotaryTable rope(d, cfg.rope_base, cfg.pretrain_window);

    DenseMatrix x = embed(tokens, w);
    for (const LayerWeights& layer : w.layers) {
        const DenseMatrix h = rmsnorm(x, layer.norm_attn);
        DenseMatrix q = matmul(h, layer.wq);
        DenseMatrix k = matmul(h, layer.wk);
        const DenseMatrix v = matmul(h, layer.wv);
        for (std::size_t i = 0; i < L; ++i) {
            for (std::size_t hd = 0; hd < cfg.n_head; ++hd) rope.rotate_row(q.row(i) + hd * d, i);
            for (std::size_t kv = 0; kv < cfg.n_kv_head; ++kv)
                rope.rotate_row(k.row(i) + kv * d, i);
        }

        DenseMatrix attn(L, cfg.d_model);
        std::vector<float> scores;
        for (std::size_t hd = 0; hd < cfg.n_head; ++hd) {
            const std::size_t kv = hd / group;
            for (std::size_t i = 0; i < L; ++i) {
                scores.resize(i + 1);
                const float* qrow = q.row(i) + hd * d;
                for (std::size_t j = 0; j <= i; ++j)
                    scores[j] = float(dot_f64(qrow, k.row(j) + kv * d, d)) * scale;
                const std::vector<float> p = stable_softmax(scores);
                float* out = attn.row(i) + hd * d;
                for (std::size_t c = 0; c < d; ++c) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j <= i; ++j)
                        acc += double(p[j]) * double(v.at(j, kv * d + c));
                    out[c] = float(acc);
                }
            }
        }
        add_inplace(x, matmul(attn, layer.wo));
        const DenseMatrix h2 = rmsnorm(x, layer.norm_ffn);
        add_inplace(x, feed_forward(h2, layer));
    }
    return matmul(rmsnorm(x, w.norm_final), w.lm_head);
}

// Greedy continuation by full recomputation each step. Slow, trustworthy.
inline std::vector<std::uint32_t> greedy_decode_full(std::span<const std::uint32_t> prompt,
                                                     const ModelWeights& w, std::size_t n_steps) {
    std::vector<std::uint32_t> stream(prompt.begin(), prompt.end());
    std::vector<std::uint32_t> generated;
    for (std::size_t s = 0; s < n_steps; ++s) {
        const DenseMatrix logits = forward_full(stream, w);
        const std::uint32_t next = argmax_token(
            std::span<const float>(logits.row(logits.rows - 1), logits.cols));
        generated.push_back(next);
        stream.push_back(next);
    }
    return generated;
}

}  // namespace reattn
