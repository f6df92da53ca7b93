// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "reattn/attend.hpp"
#include "reattn/dense_matrix.hpp"
#include "reattn/kv_cache.hpp"
#include "reattn/model.hpp"
#include "reattn/rope.hpp"
#include "reattn/scope.hpp"
#include "reattn/selection.hpp"

namespace reattn {

// Everything a run must be able to prove about itself afterwards: position
// and entropy ceilings, scope sizes, transient scoring memory, step timings.
struct RunStats {
    std::size_t max_position_used = 0;  // highest position handed to rotation
    std::size_t ood_positions = 0;      // rotation requests at/after the window; must stay 0
    bool coverage_total = true;  // every step's spans covered the whole middle so far
    double entropy_max = 0.0;
    double entropy_sum = 0.0;
    std::size_t entropy_rows = 0;
    std::size_t scope_len_max = 0;
    std::size_t peak_scratch_bytes = 0;
    std::size_t chunks_processed = 0;
    std::size_t decode_steps = 0;
    std::vector<double> decode_latency_ms;

    double entropy_mean() const { return entropy_rows ? entropy_sum / entropy_rows : 0.0; }
};

// One attention step over a bounded scope. The cache must already hold this
// block's K/V at the local tail. Selection sees pre-rotation queries; keys
// and queries are rotated afterwards at their compact scope positions, the
// queries sitting at the scope tail. Causality masks in-block future keys.
inline DenseMatrix attend_step(const DenseMatrix& q_pre, std::size_t n_head,
                               const SegmentedKvCache& cache, const SelectionConfig& cfg,
                               const RotaryTable& rope, AttentionMode mode,
                               RunStats* stats = nullptr, ScratchMeter* meter = nullptr,
                               SpanSet* spans_out = nullptr) {
    const std::size_t d = cache.d_head();
    const std::size_t n_kv = cache.n_kv_heads();
    if (n_head % n_kv != 0)
        throw std::invalid_argument("attend_step: n_head must be a multiple of kv heads");
    if (q_pre.cols != n_head * d)
        throw std::invalid_argument("attend_step: query width != n_head * d_head");
    const std::size_t n_q = q_pre.rows;
    const std::size_t group = n_head / n_kv;

    SpanSet spans;
    if (mode == AttentionMode::ReAttention && cfg.k_prime > 0 && cache.middle_len() > 0) {
        const std::vector<KeySegmentView> mids = cache.middle_keys_all();
        const PerHeadTopk per_head = fused_topk_scores(q_pre, n_head, mids, cfg, meter);
        const std::vector<std::size_t> winners = vote(per_head, cfg.k_prime);
        spans = expand_spans(winners, cfg.span_m, cache.middle_len(), cfg.span_mode);
    }
    if (stats && spans.coverage() != cache.middle_len()) stats->coverage_total = false;
    if (spans_out) *spans_out = spans;

    const AttentionScope scope = assemble_scope(cache, spans, rope.max_position());
    const std::size_t L = scope.length;
    if (n_q > L) throw std::logic_error("attend_step: query block longer than scope");

    // Rotated copies; cache storage stays position-free.
    std::vector<DenseMatrix> k_rot(n_kv), v_mat(n_kv);
    for (std::size_t kv = 0; kv < n_kv; ++kv) {
        k_rot[kv] = DenseMatrix(L, d);
        v_mat[kv] = DenseMatrix(L, d);
        std::copy(scope.keys[kv].begin(), scope.keys[kv].end(), k_rot[kv].values.begin());
        std::copy(scope.values[kv].begin(), scope.values[kv].end(), v_mat[kv].values.begin());
        for (std::size_t i = 0; i < L; ++i) {
            if (stats && i >= rope.max_position()) ++stats->ood_positions;
            rope.rotate_row(k_rot[kv].row(i), i);
        }
    }

    DenseMatrix out(n_q, n_head * d);
    DenseMatrix qh(n_q, d);
    for (std::size_t h = 0; h < n_head; ++h) {
        const std::size_t kv = h / group;
        for (std::size_t i = 0; i < n_q; ++i) {
            const float* src = q_pre.row(i) + h * d;
            std::copy(src, src + d, qh.row(i));
            const std::size_t pos = L - n_q + i;
            if (stats && pos >= rope.max_position()) ++stats->ood_positions;
            rope.rotate_row(qh.row(i), pos);
        }
        const AttendResult r = attend(qh, k_rot[kv], v_mat[kv], L - n_q);
        for (std::size_t i = 0; i < n_q; ++i) {
            const float* src = r.output.row(i);
            std::copy(src, src + d, out.row(i) + h * d);
        }
        if (stats) {
            for (double e : r.row_entropy) {
                stats->entropy_max = std::max(stats->entropy_max, e);
                stats->entropy_sum += e;
            }
            stats->entropy_rows += r.row_entropy.size();
        }
    }

    if (stats) {
        stats->scope_len_max = std::max(stats->scope_len_max, L);
        stats->max_position_used = std::max(stats->max_position_used, L - 1);
    }
    return out;
}

// Generation engine: per-layer segmented caches, chunked prefill, greedy
// decode. Runs the bounded-scope modes only; the quadratic full-attention
// reference lives elsewhere so the two paths cannot share a bug.
class Engine {
public:
    Engine(const ModelWeights& weights, const SelectionConfig& sel, AttentionMode mode)
        : w_(weights),
          sel_(sel),
          mode_(mode),
          rope_(weights.config.d_head, weights.config.rope_base, weights.config.pretrain_window) {
        w_.config.validate();
        if (mode == AttentionMode::Full)
            throw std::invalid_argument(
                "engine runs window or reattention modes; full attention is the reference path");
        sel_.validate(w_.config.pretrain_window);
        reset();
    }

    void reset() {
        caches_.clear();
        caches_.reserve(w_.config.n_layer);
        for (std::size_t l = 0; l < w_.config.n_layer; ++l)
            caches_.emplace_back(w_.config.n_kv_head, w_.config.d_head, sel_.l_global,
                                 sel_.l_local);
        last_spans_.assign(w_.config.n_layer, SpanSet{});
        stats_ = RunStats{};
        meter_.reset();
    }

    // First block of l_global + l_local tokens in one pass, remainder in
    // l_chunk strides. Returns the final chunk's hidden states.
    DenseMatrix prefill(std::span<const std::uint32_t> tokens) {
        if (tokens.empty()) throw std::invalid_argument("empty input");
        const std::size_t first = std::min(tokens.size(), sel_.l_global + sel_.l_local);
        DenseMatrix hidden;
        std::size_t pos = 0;
        while (pos < tokens.size()) {
            const std::size_t len =
                pos == 0 ? first : std::min(sel_.l_chunk, tokens.size() - pos);
            hidden = forward_block(embed(tokens.subspan(pos, len), w_));
            pos += len;
            ++stats_.chunks_processed;
        }
        return hidden;
    }

    // One token in, greedy next token out. Legal on an empty cache.
    std::uint32_t decode_step(std::uint32_t last_token) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::uint32_t tok[1] = {last_token};
        const DenseMatrix hidden = forward_block(embed(std::span(tok, 1), w_));
        const DenseMatrix lg = logits(hidden);
        last_logits_.assign(lg.row(0), lg.row(0) + lg.cols);
        const auto t1 = std::chrono::steady_clock::now();
        stats_.decode_latency_ms.push_back(
            std::chrono::duration<double, std::milli>(t1 - t0).count());
        ++stats_.decode_steps;
        return argmax_token(last_logits_);
    }

    // Final norm + lm_head over a block of hidden states.
    DenseMatrix logits(const DenseMatrix& hidden) const {
        return matmul(rmsnorm(hidden, w_.norm_final), w_.lm_head);
    }

    const RunStats& stats() const { return stats_; }
    const std::vector<SegmentedKvCache>& caches() const { return caches_; }
    // Spans chosen by the most recent attend_step of each layer.
    const std::vector<SpanSet>& last_spans() const { return last_spans_; }
    const ModelWeights& weights() const { return w_; }
    const SelectionConfig& selection_config() const { return sel_; }
    AttentionMode mode() const { return mode_; }
    std::span<const float> last_logits() const { return last_logits_; }

private:
    DenseMatrix forward_block(DenseMatrix x) {
        for (std::size_t l = 0; l < w_.layers.size(); ++l) {
            const LayerWeights& layer = w_.layers[l];
            const DenseMatrix h = rmsnorm(x, layer.norm_attn);
            const DenseMatrix q = matmul(h, layer.wq);
            caches_[l].append(matmul(h, layer.wk), matmul(h, layer.wv));
            const DenseMatrix attn = attend_step(q, w_.config.n_head, caches_[l], sel_, rope_,
                                                 mode_, &stats_, &meter_, &last_spans_[l]);
            add_inplace(x, matmul(attn, layer.wo));
            const DenseMatrix h2 = rmsnorm(x, layer.norm_ffn);
            add_inplace(x, feed_forward(h2, layer));
        }
        stats_.peak_scratch_bytes = std::max(stats_.peak_scratch_bytes, meter_.peak);
        return x;
    }

    const ModelWeights& w_;
    SelectionConfig sel_;
    AttentionMode mode_;
    RotaryTable rope_;
    std::vector<SegmentedKvCache> caches_;
    std::vector<SpanSet> last_spans_;
    RunStats stats_;
    ScratchMeter meter_;
    std::vector<float> last_logits_;
};

}  // namespace reattn
