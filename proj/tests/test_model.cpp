// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "reattn/full_attention.hpp"
#include "reattn/model.hpp"

namespace {

using reattn::AttentionMode;
using reattn::DenseMatrix;
using reattn::ModelConfig;
using reattn::ModelWeights;

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_layer = 2;
    cfg.n_head = 4;
    cfg.n_kv_head = 2;
    cfg.d_model = 32;
    cfg.d_head = 8;
    cfg.d_ff = 96;
    cfg.vocab_size = 64;
    cfg.pretrain_window = 256;
    return cfg;
}

std::vector<std::uint32_t> random_tokens(std::size_t n, std::uint32_t vocab, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_int_distribution<std::uint32_t> dist(0, vocab - 1);
    std::vector<std::uint32_t> out(n);
    for (auto& t : out) t = dist(rng);
    return out;
}

void expect_weights_equal(const ModelWeights& a, const ModelWeights& b) {
    EXPECT_EQ(a.embedding.values, b.embedding.values);
    ASSERT_EQ(a.layers.size(), b.layers.size());
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        EXPECT_EQ(a.layers[l].wq.values, b.layers[l].wq.values) << "layer " << l;
        EXPECT_EQ(a.layers[l].wk.values, b.layers[l].wk.values);
        EXPECT_EQ(a.layers[l].wv.values, b.layers[l].wv.values);
        EXPECT_EQ(a.layers[l].wo.values, b.layers[l].wo.values);
        EXPECT_EQ(a.layers[l].w_gate.values, b.layers[l].w_gate.values);
        EXPECT_EQ(a.layers[l].w_up.values, b.layers[l].w_up.values);
        EXPECT_EQ(a.layers[l].w_down.values, b.layers[l].w_down.values);
        EXPECT_EQ(a.layers[l].norm_attn, b.layers[l].norm_attn);
        EXPECT_EQ(a.layers[l].norm_ffn, b.layers[l].norm_ffn);
    }
    EXPECT_EQ(a.norm_final, b.norm_final);
    EXPECT_EQ(a.lm_head.values, b.lm_head.values);
}

TEST(ModelConfig, ValidationCatchesBadShapes) {
    ModelConfig cfg = tiny_config();
    EXPECT_NO_THROW(cfg.validate());
    cfg.n_kv_head = 3;  // 4 % 3 != 0
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.d_model = 33;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.d_head = 7;
    cfg.d_model = 28;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.vocab_size = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(ModelConfig, ModeNamesRoundTrip) {
    for (AttentionMode m :
         {AttentionMode::Full, AttentionMode::Window, AttentionMode::ReAttention})
        EXPECT_EQ(reattn::parse_mode(reattn::mode_name(m)), m);
    EXPECT_THROW(reattn::parse_mode("fancy"), std::invalid_argument);
}

TEST(ModelInit, SameSeedSameWeightsDifferentSeedDifferent) {
    const ModelConfig cfg = tiny_config();
    const ModelWeights a = reattn::init_random(cfg, 7);
    const ModelWeights b = reattn::init_random(cfg, 7);
    expect_weights_equal(a, b);
    const ModelWeights c = reattn::init_random(cfg, 8);
    EXPECT_NE(a.embedding.values, c.embedding.values);
}

TEST(ModelInit, WeightsAreFiniteAndSmall) {
    const ModelWeights w = reattn::init_random(tiny_config(), 1);
    EXPECT_TRUE(w.embedding.all_finite());
    double ss = 0;
    for (float v : w.embedding.values) ss += double(v) * v;
    const double rms = std::sqrt(ss / double(w.embedding.values.size()));
    EXPECT_NEAR(rms, 0.02, 0.002);  // init scale
}

TEST(Rmsnorm, MatchesDoubleReference) {
    std::mt19937 rng(103);
    std::uniform_real_distribution<float> dist(-2.0f, 2.0f);
    DenseMatrix x(5, 16);
    for (float& v : x.values) v = dist(rng);
    std::vector<float> weight(16);
    for (float& v : weight) v = dist(rng);
    const DenseMatrix got = reattn::rmsnorm(x, weight);
    for (std::size_t r = 0; r < 5; ++r) {
        double ms = 0;
        for (std::size_t c = 0; c < 16; ++c) ms += double(x.at(r, c)) * x.at(r, c);
        const double inv = 1.0 / std::sqrt(ms / 16.0 + 1e-5);
        for (std::size_t c = 0; c < 16; ++c)
            EXPECT_NEAR(got.at(r, c), x.at(r, c) * inv * weight[c], 1e-6);
    }
}

TEST(ArgmaxToken, TiesGoToLowestId) {
    const std::vector<float> logits{0.5f, 2.0f, 2.0f, -1.0f};
    EXPECT_EQ(reattn::argmax_token(logits), 1u);
    EXPECT_THROW(reattn::argmax_token(std::vector<float>{}), std::invalid_argument);
}

TEST(Embed, RejectsOutOfVocabToken) {
    const ModelWeights w = reattn::init_random(tiny_config(), 2);
    const std::vector<std::uint32_t> tokens{0, 63, 64};
    EXPECT_THROW(reattn::embed(tokens, w), std::out_of_range);
}

TEST(ForwardFull, FiniteAndBoundedOnRandomInput) {
    const ModelWeights w = reattn::init_random(tiny_config(), 3);
    const auto tokens = random_tokens(128, 64, 11);
    const DenseMatrix logits = reattn::forward_full(tokens, w);
    ASSERT_EQ(logits.rows, 128u);
    ASSERT_EQ(logits.cols, 64u);
    EXPECT_TRUE(logits.all_finite());
    for (float v : logits.values) EXPECT_LT(std::abs(v), 1e3f);
}

TEST(ForwardFull, DeterministicAcrossCalls) {
    const ModelWeights w = reattn::init_random(tiny_config(), 4);
    const auto tokens = random_tokens(64, 64, 12);
    const DenseMatrix a = reattn::forward_full(tokens, w);
    const DenseMatrix b = reattn::forward_full(tokens, w);
    EXPECT_EQ(a.values, b.values);
}

TEST(ForwardFull, InputLimitsEnforced) {
    const ModelWeights w = reattn::init_random(tiny_config(), 5);
    EXPECT_THROW(reattn::forward_full(std::vector<std::uint32_t>{}, w), std::invalid_argument);
    const auto too_long = random_tokens(257, 64, 13);
    EXPECT_THROW(reattn::forward_full(too_long, w), std::invalid_argument);
}

TEST(ForwardFull, SingleTokenMatchesHandPipeline) {
    // With one token, attention weights collapse to 1 and the attention
    // output is the value projection itself, rotation-free. The whole layer
    // stack reduces to dense algebra we can replay by hand.
    const ModelConfig cfg = tiny_config();
    const ModelWeights w = reattn::init_random(cfg, 6);
    const std::vector<std::uint32_t> tokens{17};
    const DenseMatrix got = reattn::forward_full(tokens, w);

    DenseMatrix x(1, cfg.d_model);
    std::copy(w.embedding.row(17), w.embedding.row(17) + cfg.d_model, x.row(0));
    for (const auto& layer : w.layers) {
        const DenseMatrix h = reattn::rmsnorm(x, layer.norm_attn);
        const DenseMatrix v = matmul(h, layer.wv);
        DenseMatrix attn(1, cfg.d_model);
        const std::size_t group = cfg.n_head / cfg.n_kv_head;
        for (std::size_t hd = 0; hd < cfg.n_head; ++hd) {
            const std::size_t kv = hd / group;
            for (std::size_t c = 0; c < cfg.d_head; ++c)
                attn.at(0, hd * cfg.d_head + c) = v.at(0, kv * cfg.d_head + c);
        }
        add_inplace(x, matmul(attn, layer.wo));
        add_inplace(x, reattn::feed_forward(reattn::rmsnorm(x, layer.norm_ffn), layer));
    }
    const DenseMatrix want = matmul(reattn::rmsnorm(x, w.norm_final), w.lm_head);
    ASSERT_EQ(got.values.size(), want.values.size());
    for (std::size_t i = 0; i < got.values.size(); ++i)
        EXPECT_NEAR(got.values[i], want.values[i], 1e-5);
}

TEST(WeightsFile, RoundTripIsBitExact) {
    const std::string path = ::testing::TempDir() + "weights_roundtrip.ratw";
    ModelConfig cfg = tiny_config();
    cfg.attention_mode = AttentionMode::Window;
    cfg.rope_base = 123456.5;
    const ModelWeights w = reattn::init_random(cfg, 9);
    reattn::save_weights(w, path);
    const ModelWeights r = reattn::load_weights(path);
    EXPECT_EQ(r.config.n_layer, cfg.n_layer);
    EXPECT_EQ(r.config.pretrain_window, cfg.pretrain_window);
    EXPECT_EQ(r.config.rope_base, cfg.rope_base);
    EXPECT_EQ(r.config.attention_mode, cfg.attention_mode);
    expect_weights_equal(w, r);
    std::filesystem::remove(path);
}

TEST(WeightsFile, TruncationIsDetected) {
    const std::string path = ::testing::TempDir() + "weights_trunc.ratw";
    const ModelWeights w = reattn::init_random(tiny_config(), 10);
    reattn::save_weights(w, path);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 11);
    try {
        reattn::load_weights(path);
        FAIL() << "expected runtime_error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST(WeightsFile, TrailingBytesRejected) {
    const std::string path = ::testing::TempDir() + "weights_trail.ratw";
    reattn::save_weights(reattn::init_random(tiny_config(), 11), path);
    std::ofstream(path, std::ios::binary | std::ios::app) << "extra";
    try {
        reattn::load_weights(path);
        FAIL() << "expected runtime_error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("trailing"), std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST(WeightsFile, ShapeMismatchNamesTheTensor) {
    // rewrite the stored d_ff so the config no longer matches the tensor
    // dims that follow; the loader must name the first offender
    const std::string path = ::testing::TempDir() + "weights_patch.ratw";
    reattn::save_weights(reattn::init_random(tiny_config(), 12), path);
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        // layout: magic(4) version(4) n_layer n_head n_kv_head d_model d_head
        // d_ff ... each u32
        f.seekp(8 + 5 * 4);
        const std::uint32_t patched_d_ff = 64;
        f.write(reinterpret_cast<const char*>(&patched_d_ff), 4);
    }
    try {
        reattn::load_weights(path);
        FAIL() << "expected runtime_error";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("layer0.w_gate"), std::string::npos) << msg;
        EXPECT_NE(msg.find("expected"), std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST(WeightsFile, BadMagicRejected) {
    const std::string path = ::testing::TempDir() + "weights_magic.ratw";
    std::ofstream(path, std::ios::binary) << "XXXX not weights";
    EXPECT_THROW(reattn::load_weights(path), std::runtime_error);
    std::filesystem::remove(path);
}

TEST(GreedyDecodeFull, ExtendsStreamDeterministically) {
    const ModelWeights w = reattn::init_random(tiny_config(), 13);
    const auto prompt = random_tokens(24, 64, 14);
    const auto a = reattn::greedy_decode_full(prompt, w, 4);
    const auto b = reattn::greedy_decode_full(prompt, w, 4);
    ASSERT_EQ(a.size(), 4u);
    EXPECT_EQ(a, b);
    for (std::uint32_t t : a) EXPECT_LT(t, 64u);
}

}  // namespace
