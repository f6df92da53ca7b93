// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "reattn/attend.hpp"
#include "reattn/dense_matrix.hpp"
#include "reattn/model.hpp"
#include "reattn/rope.hpp"

namespace reattn {

// Independent global-prefix + local-suffix attention, written directly from
// that description: flat per-layer K/V logs, explicit index gather, no
// segment views, no span machinery. Exists so the engine's selection-off
// path has something other than itself to be compared against.
class WindowReference {
public:
    WindowReference(const ModelWeights& weights, std::size_t l_global, std::size_t l_local,
                    std::size_t l_chunk)
        : w_(weights),
          l_global_(l_global),
          l_local_(l_local),
          l_chunk_(l_chunk),
          rope_(weights.config.d_head, weights.config.rope_base, weights.config.pretrain_window),
          k_log_(weights.config.n_layer,
                 std::vector<std::vector<float>>(weights.config.n_kv_head)),
          v_log_(weights.config.n_layer,
                 std::vector<std::vector<float>>(weights.config.n_kv_head)) {
        if (l_local == 0 || l_chunk == 0 || l_chunk > l_local)
            throw std::invalid_argument("window reference: bad local/chunk sizes");
        if (l_global + l_local > weights.config.pretrain_window)
            throw std::invalid_argument("window reference: window budget exceeds pretrain range");
    }

    DenseMatrix prefill(std::span<const std::uint32_t> tokens) {
        if (tokens.empty()) throw std::invalid_argument("empty input");
        const std::size_t first = std::min(tokens.size(), l_global_ + l_local_);
        DenseMatrix hidden;
        std::size_t pos = 0;
        while (pos < tokens.size()) {
            const std::size_t len = pos == 0 ? first : std::min(l_chunk_, tokens.size() - pos);
            hidden = forward_block(embed(tokens.subspan(pos, len), w_));
            pos += len;
        }
        return hidden;
    }

    std::uint32_t decode_step(std::uint32_t last_token) {
        const std::uint32_t tok[1] = {last_token};
        const DenseMatrix hidden = forward_block(embed(std::span(tok, 1), w_));
        const DenseMatrix lg = logits(hidden);
        last_logits_.assign(lg.row(0), lg.row(0) + lg.cols);
        return argmax_token(last_logits_);
    }

    DenseMatrix logits(const DenseMatrix& hidden) const {
        return matmul(rmsnorm(hidden, w_.norm_final), w_.lm_head);
    }

    std::span<const float> last_logits() const { return last_logits_; }

private:
    DenseMatrix forward_block(DenseMatrix x) {
        const ModelConfig& cfg = w_.config;
        const std::size_t d = cfg.d_head;
        const std::size_t group = cfg.n_head / cfg.n_kv_head;
        const std::size_t n_q = x.rows;

        for (std::size_t l = 0; l < cfg.n_layer; ++l) {
            const LayerWeights& layer = w_.layers[l];
            const DenseMatrix h = rmsnorm(x, layer.norm_attn);
            const DenseMatrix q = matmul(h, layer.wq);
            const DenseMatrix knew = matmul(h, layer.wk);
            const DenseMatrix vnew = matmul(h, layer.wv);
            for (std::size_t r = 0; r < n_q; ++r) {
                for (std::size_t kv = 0; kv < cfg.n_kv_head; ++kv) {
                    const float* ks = knew.row(r) + kv * d;
                    const float* vs = vnew.row(r) + kv * d;
                    k_log_[l][kv].insert(k_log_[l][kv].end(), ks, ks + d);
                    v_log_[l][kv].insert(v_log_[l][kv].end(), vs, vs + d);
                }
            }
            const std::size_t total = k_log_[l][0].size() / d;
            const std::size_t g_end = std::min(total, l_global_);
            const std::size_t loc = std::min(total - g_end, l_local_);
            std::vector<std::size_t> gather;
            gather.reserve(g_end + loc);
            for (std::size_t i = 0; i < g_end; ++i) gather.push_back(i);
            for (std::size_t i = total - loc; i < total; ++i) gather.push_back(i);
            const std::size_t L = gather.size();

            std::vector<DenseMatrix> kmat(cfg.n_kv_head), vmat(cfg.n_kv_head);
            for (std::size_t kv = 0; kv < cfg.n_kv_head; ++kv) {
                kmat[kv] = DenseMatrix(L, d);
                vmat[kv] = DenseMatrix(L, d);
                for (std::size_t i = 0; i < L; ++i) {
                    const float* ks = k_log_[l][kv].data() + gather[i] * d;
                    const float* vs = v_log_[l][kv].data() + gather[i] * d;
                    std::copy(ks, ks + d, kmat[kv].row(i));
                    std::copy(vs, vs + d, vmat[kv].row(i));
                    rope_.rotate_row(kmat[kv].row(i), i);
                }
            }

            DenseMatrix attn(n_q, cfg.n_head * d);
            DenseMatrix qh(n_q, d);
            for (std::size_t hd = 0; hd < cfg.n_head; ++hd) {
                const std::size_t kv = hd / group;
                for (std::size_t i = 0; i < n_q; ++i) {
                    const float* src = q.row(i) + hd * d;
                    std::copy(src, src + d, qh.row(i));
                    rope_.rotate_row(qh.row(i), L - n_q + i);
                }
                const AttendResult r = attend(qh, kmat[kv], vmat[kv], L - n_q);
                for (std::size_t i = 0; i < n_q; ++i) {
                    const float* src = r.output.row(i);
                    std::copy(src, src + d, attn.row(i) + hd * d);
                }
            }
            add_inplace(x, matmul(attn, layer.wo));
            const DenseMatrix h2 = rmsnorm(x, layer.norm_ffn);
            add_inplace(x, feed_forward(h2, layer));
        }
        return x;
    }

    const ModelWeights& w_;
    std::size_t l_global_;
    std::size_t l_local_;
    std::size_t l_chunk_;
    RotaryTable rope_;
    std::vector<std::vector<std::vector<float>>> k_log_;  // [layer][kv][total * d]
    std::vector<std::vector<std::vector<float>>> v_log_;
    std::vector<float> last_logits_;
};

}  // namespace reattn
