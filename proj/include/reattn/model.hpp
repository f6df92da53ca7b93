// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "reattn/dense_matrix.hpp"

namespace reattn {

enum class AttentionMode : std::uint32_t { Full = 0, Window = 1, ReAttention = 2 };

inline const char* mode_name(AttentionMode m) {
    switch (m) {
        case AttentionMode::Full: return "full";
        case AttentionMode::Window: return "window";
        case AttentionMode::ReAttention: return "reattention";
    }
    throw std::invalid_argument("unknown attention mode");
}

inline AttentionMode parse_mode(const std::string& s) {
    if (s == "full") return AttentionMode::Full;
    if (s == "window") return AttentionMode::Window;
    if (s == "reattention") return AttentionMode::ReAttention;
    throw std::invalid_argument("unknown attention mode: " + s);
}

// Decoder-only transformer shape. Defaults are the toy test model: big
// enough to exercise grouped KV heads, small enough for seconds-scale runs.
struct ModelConfig {
    std::size_t n_layer = 2;
    std::size_t n_head = 4;
    std::size_t n_kv_head = 2;
    std::size_t d_model = 128;
    std::size_t d_head = 32;
    std::size_t d_ff = 512;
    std::size_t vocab_size = 512;
    std::size_t pretrain_window = 4096;
    double rope_base = 10000.0;
    AttentionMode attention_mode = AttentionMode::ReAttention;

    void validate() const {
        if (n_layer == 0 || n_head == 0 || n_kv_head == 0 || d_model == 0 || d_head == 0 ||
            d_ff == 0 || vocab_size == 0 || pretrain_window == 0)
            throw std::invalid_argument("model config: all dimensions must be positive");
        if (n_head % n_kv_head != 0)
            throw std::invalid_argument("model config: n_head must be divisible by n_kv_head");
        if (d_model != n_head * d_head)
            throw std::invalid_argument("model config: d_model != n_head * d_head");
        if (d_head % 2 != 0)
            throw std::invalid_argument("model config: d_head must be even for rotation");
    }
};

// Pre-norm block: x += attn(norm(x)); x += ffn(norm(x)). Projections are
// stored input-major so activation * matrix applies them.
struct LayerWeights {
    DenseMatrix wq;      // d_model x (n_head * d_head)
    DenseMatrix wk;      // d_model x (n_kv_head * d_head)
    DenseMatrix wv;      // d_model x (n_kv_head * d_head)
    DenseMatrix wo;      // d_model x d_model
    DenseMatrix w_gate;  // d_model x d_ff
    DenseMatrix w_up;    // d_model x d_ff
    DenseMatrix w_down;  // d_ff x d_model
    std::vector<float> norm_attn;  // d_model
    std::vector<float> norm_ffn;   // d_model
};

struct ModelWeights {
    ModelConfig config;
    DenseMatrix embedding;  // vocab_size x d_model
    std::vector<LayerWeights> layers;
    std::vector<float> norm_final;  // d_model
    DenseMatrix lm_head;  // d_model x vocab_size
};

namespace detail {

// Box-Muller over mt19937_64 draws. std::normal_distribution is free to
// differ across standard libraries; this sequence is pinned.
class GaussianSource {
public:
    explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

    float next(float stddev) {
        if (have_spare_) {
            have_spare_ = false;
            return float(spare_ * stddev);
        }
        const double u1 = (double(rng_()) + 1.0) / (double(rng_.max()) + 2.0);  // (0,1)
        const double u2 = double(rng_()) / (double(rng_.max()) + 1.0);          // [0,1)
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return float(r * std::cos(theta) * stddev);
    }

    void fill(DenseMatrix& m, float stddev) {
        for (float& v : m.values) v = next(stddev);
    }

private:
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace detail

inline ModelWeights init_random(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelWeights w;
    w.config = cfg;
    detail::GaussianSource gauss(seed);
    const float std_init = 0.02f;

    w.embedding = DenseMatrix(cfg.vocab_size, cfg.d_model);
    gauss.fill(w.embedding, std_init);
    w.layers.resize(cfg.n_layer);
    for (LayerWeights& layer : w.layers) {
        layer.wq = DenseMatrix(cfg.d_model, cfg.n_head * cfg.d_head);
        layer.wk = DenseMatrix(cfg.d_model, cfg.n_kv_head * cfg.d_head);
        layer.wv = DenseMatrix(cfg.d_model, cfg.n_kv_head * cfg.d_head);
        layer.wo = DenseMatrix(cfg.d_model, cfg.d_model);
        layer.w_gate = DenseMatrix(cfg.d_model, cfg.d_ff);
        layer.w_up = DenseMatrix(cfg.d_model, cfg.d_ff);
        layer.w_down = DenseMatrix(cfg.d_ff, cfg.d_model);
        gauss.fill(layer.wq, std_init);
        gauss.fill(layer.wk, std_init);
        gauss.fill(layer.wv, std_init);
        gauss.fill(layer.wo, std_init);
        gauss.fill(layer.w_gate, std_init);
        gauss.fill(layer.w_up, std_init);
        gauss.fill(layer.w_down, std_init);
        layer.norm_attn.assign(cfg.d_model, 1.0f);
        layer.norm_ffn.assign(cfg.d_model, 1.0f);
    }
    w.norm_final.assign(cfg.d_model, 1.0f);
    w.lm_head = DenseMatrix(cfg.d_model, cfg.vocab_size);
    gauss.fill(w.lm_head, std_init);
    return w;
}

// RMS normalization, eps 1e-5, mean square carried in double.
inline DenseMatrix rmsnorm(const DenseMatrix& x, std::span<const float> weight) {
    if (x.cols != weight.size()) throw std::invalid_argument("rmsnorm: weight width mismatch");
    DenseMatrix out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const float* src = x.row(r);
        float* dst = out.row(r);
        double ms = 0.0;
        for (std::size_t c = 0; c < x.cols; ++c) ms += double(src[c]) * double(src[c]);
        const float inv = float(1.0 / std::sqrt(ms / double(x.cols) + 1e-5));
        for (std::size_t c = 0; c < x.cols; ++c) dst[c] = src[c] * inv * weight[c];
    }
    return out;
}

// Gated feed-forward: (silu(x Wg) * (x Wu)) Wd.
inline DenseMatrix feed_forward(const DenseMatrix& x, const LayerWeights& layer) {
    DenseMatrix gate = matmul(x, layer.w_gate);
    const DenseMatrix up = matmul(x, layer.w_up);
    for (std::size_t i = 0; i < gate.values.size(); ++i) {
        const float g = gate.values[i];
        gate.values[i] = g / (1.0f + std::exp(-g)) * up.values[i];
    }
    return matmul(gate, layer.w_down);
}

// Token embedding lookup.
inline DenseMatrix embed(std::span<const std::uint32_t> tokens, const ModelWeights& w) {
    DenseMatrix out(tokens.size(), w.config.d_model);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= w.config.vocab_size)
            throw std::out_of_range("token id outside vocabulary");
        const float* src = w.embedding.row(tokens[i]);
        std::copy(src, src + w.config.d_model, out.row(i));
    }
    return out;
}

// Greedy pick, ties to the lowest token id.
inline std::uint32_t argmax_token(std::span<const float> logits) {
    if (logits.empty()) throw std::invalid_argument("empty logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
    return std::uint32_t(best);
}

// ---- weight file: magic "RATW", version, config block, tensors with their
// dims in declared order, all little-endian, f32 payloads ----

namespace weights_io {

constexpr char kMagic[4] = {'R', 'A', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const char* what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw std::runtime_error(std::string("weights file truncated at ") + what);
    return v;
}

inline void write_tensor(std::ofstream& os, const DenseMatrix& m) {
    write_pod(os, std::uint64_t(m.rows));
    write_pod(os, std::uint64_t(m.cols));
    os.write(reinterpret_cast<const char*>(m.values.data()),
             std::streamsize(m.values.size() * sizeof(float)));
}

inline void write_vector(std::ofstream& os, const std::vector<float>& v) {
    write_pod(os, std::uint64_t(1));
    write_pod(os, std::uint64_t(v.size()));
    os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(float)));
}

inline DenseMatrix read_tensor(std::ifstream& is, const std::string& name, std::size_t want_rows,
                               std::size_t want_cols) {
    const auto rows = read_pod<std::uint64_t>(is, name.c_str());
    const auto cols = read_pod<std::uint64_t>(is, name.c_str());
    if (rows != want_rows || cols != want_cols)
        throw std::runtime_error("weights file: tensor " + name + " has shape " +
                                 std::to_string(rows) + "x" + std::to_string(cols) +
                                 ", expected " + std::to_string(want_rows) + "x" +
                                 std::to_string(want_cols));
    DenseMatrix m(rows, cols);
    if (!is.read(reinterpret_cast<char*>(m.values.data()),
                 std::streamsize(m.values.size() * sizeof(float))))
        throw std::runtime_error("weights file truncated at " + name);
    return m;
}

inline std::vector<float> read_vector(std::ifstream& is, const std::string& name,
                                      std::size_t want) {
    DenseMatrix m = read_tensor(is, name, 1, want);
    return m.values;
}

}  // namespace weights_io

inline void save_weights(const ModelWeights& w, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(weights_io::kMagic, 4);
    weights_io::write_pod(os, weights_io::kVersion);
    const ModelConfig& c = w.config;
    weights_io::write_pod(os, std::uint32_t(c.n_layer));
    weights_io::write_pod(os, std::uint32_t(c.n_head));
    weights_io::write_pod(os, std::uint32_t(c.n_kv_head));
    weights_io::write_pod(os, std::uint32_t(c.d_model));
    weights_io::write_pod(os, std::uint32_t(c.d_head));
    weights_io::write_pod(os, std::uint32_t(c.d_ff));
    weights_io::write_pod(os, std::uint32_t(c.vocab_size));
    weights_io::write_pod(os, std::uint64_t(c.pretrain_window));
    weights_io::write_pod(os, double(c.rope_base));
    weights_io::write_pod(os, std::uint32_t(c.attention_mode));
    weights_io::write_tensor(os, w.embedding);
    for (const LayerWeights& layer : w.layers) {
        weights_io::write_tensor(os, layer.wq);
        weights_io::write_tensor(os, layer.wk);
        weights_io::write_tensor(os, layer.wv);
        weights_io::write_tensor(os, layer.wo);
        weights_io::write_tensor(os, layer.w_gate);
        weights_io::write_tensor(os, layer.w_up);
        weights_io::write_tensor(os, layer.w_down);
        weights_io::write_vector(os, layer.norm_attn);
        weights_io::write_vector(os, layer.norm_ffn);
    }
    weights_io::write_vector(os, w.norm_final);
    weights_io::write_tensor(os, w.lm_head);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline ModelWeights load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open weights file: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, weights_io::kMagic, 4) != 0)
        throw std::runtime_error("weights file: bad magic");
    const auto version = weights_io::read_pod<std::uint32_t>(is, "version");
    if (version != weights_io::kVersion)
        throw std::runtime_error("weights file: unsupported version " + std::to_string(version));

    ModelConfig c;
    c.n_layer = weights_io::read_pod<std::uint32_t>(is, "config.n_layer");
    c.n_head = weights_io::read_pod<std::uint32_t>(is, "config.n_head");
    c.n_kv_head = weights_io::read_pod<std::uint32_t>(is, "config.n_kv_head");
    c.d_model = weights_io::read_pod<std::uint32_t>(is, "config.d_model");
    c.d_head = weights_io::read_pod<std::uint32_t>(is, "config.d_head");
    c.d_ff = weights_io::read_pod<std::uint32_t>(is, "config.d_ff");
    c.vocab_size = weights_io::read_pod<std::uint32_t>(is, "config.vocab_size");
    c.pretrain_window = weights_io::read_pod<std::uint64_t>(is, "config.pretrain_window");
    c.rope_base = weights_io::read_pod<double>(is, "config.rope_base");
    const auto mode = weights_io::read_pod<std::uint32_t>(is, "config.attention_mode");
    if (mode > 2) throw std::runtime_error("weights file: bad attention mode");
    c.attention_mode = AttentionMode(mode);
    c.validate();

    ModelWeights w;
    w.config = c;
    w.embedding = weights_io::read_tensor(is, "embedding", c.vocab_size, c.d_model);
    w.layers.resize(c.n_layer);
    for (std::size_t l = 0; l < c.n_layer; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerWeights& layer = w.layers[l];
        layer.wq = weights_io::read_tensor(is, p + "wq", c.d_model, c.n_head * c.d_head);
        layer.wk = weights_io::read_tensor(is, p + "wk", c.d_model, c.n_kv_head * c.d_head);
        layer.wv = weights_io::read_tensor(is, p + "wv", c.d_model, c.n_kv_head * c.d_head);
        layer.wo = weights_io::read_tensor(is, p + "wo", c.d_model, c.d_model);
        layer.w_gate = weights_io::read_tensor(is, p + "w_gate", c.d_model, c.d_ff);
        layer.w_up = weights_io::read_tensor(is, p + "w_up", c.d_model, c.d_ff);
        layer.w_down = weights_io::read_tensor(is, p + "w_down", c.d_ff, c.d_model);
        layer.norm_attn = weights_io::read_vector(is, p + "norm_attn", c.d_model);
        layer.norm_ffn = weights_io::read_vector(is, p + "norm_ffn", c.d_model);
    }
    w.norm_final = weights_io::read_vector(is, "norm_final", c.d_model);
    w.lm_head = weights_io::read_tensor(is, "lm_head", c.d_model, c.vocab_size);
    is.peek();
    if (!is.eof()) throw std::runtime_error("weights file: trailing bytes after lm_head");
    return w;
}

}  // namespace reattn
