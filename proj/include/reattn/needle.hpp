// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "reattn/dense_matrix.hpp"
#include "reattn/kv_cache.hpp"

namespace reattn {

// Token-level haystack: uniform random tokens with one reserved marker token
// planted at needle_pos. Random-weight models cannot retrieve semantically;
// this stream exists for end-to-end plumbing and reported (not asserted)
// hit rates.
struct NeedleStream {
    std::vector<std::uint32_t> tokens;
    std::size_t needle_pos = 0;
    std::uint32_t needle_token = 0;
};

inline NeedleStream gen_needle_stream(std::size_t haystack_len, std::size_t needle_pos,
                                      std::uint32_t vocab_size, std::uint64_t seed) {
    if (needle_pos >= haystack_len)
        throw std::out_of_range("needle position outside haystack");
    if (vocab_size < 2) throw std::invalid_argument("vocab too small for a needle marker");
    NeedleStream out;
    out.needle_pos = needle_pos;
    out.needle_token = vocab_size - 1;  // reserved marker
    out.tokens.resize(haystack_len);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < haystack_len; ++i)
        out.tokens[i] = std::uint32_t(rng() % (vocab_size - 1));
    out.tokens[needle_pos] = out.needle_token;
    return out;
}

// Vector-level needle: a synthetic middle segment of unit-norm noise keys
// plus one planted key nearly parallel to the probe. Noise is rejection
// sampled below the cosine ceiling, so selection has a clean margin to find.
struct VectorNeedle {
    DenseMatrix middle_keys;  // middle_len x d, one KV head
    DenseMatrix probe_query;  // 1 x d, unit norm
    std::size_t needle_index = 0;
    double needle_cos = 0.0;
    double max_noise_cos = 0.0;

    KeySegmentView middle_view() const {
        return KeySegmentView{middle_keys.values.data(), middle_keys.rows, middle_keys.cols};
    }
};

namespace detail {

inline void fill_gaussian_unit(std::vector<float>& v, std::mt19937_64& rng) {
    // Box-Muller pairs; the vector is then normalized, so scale is irrelevant.
    for (std::size_t i = 0; i + 1 < v.size(); i += 2) {
        const double u1 = (double(rng()) + 1.0) / (double(rng.max()) + 2.0);
        const double u2 = double(rng()) / (double(rng.max()) + 1.0);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * 3.141592653589793238462643383279502884 * u2;
        v[i] = float(r * std::cos(t));
        v[i + 1] = float(r * std::sin(t));
    }
    if (v.size() % 2 == 1) {
        const double u1 = (double(rng()) + 1.0) / (double(rng.max()) + 2.0);
        v.back() = float(std::sqrt(-2.0 * std::log(u1)));
    }
    double norm = 0.0;
    for (float x : v) norm += double(x) * double(x);
    const float inv = float(1.0 / std::sqrt(norm));
    for (float& x : v) x *= inv;
}

}  // namespace detail

inline VectorNeedle gen_vector_needle(std::size_t middle_len, std::size_t d,
                                      std::size_t needle_index, std::uint64_t seed,
                                      double needle_cos = 0.95, double noise_cos_max = 0.3) {
    if (needle_index >= middle_len)
        throw std::out_of_range("needle position outside haystack");
    if (d < 2) throw std::invalid_argument("vector needle needs d >= 2");

    std::mt19937_64 rng(seed);
    VectorNeedle out;
    out.needle_index = needle_index;
    out.needle_cos = needle_cos;

    std::vector<float> probe(d);
    detail::fill_gaussian_unit(probe, rng);
    out.probe_query = DenseMatrix(1, d);
    std::copy(probe.begin(), probe.end(), out.probe_query.row(0));

    out.middle_keys = DenseMatrix(middle_len, d);
    std::vector<float> cand(d);
    for (std::size_t i = 0; i < middle_len; ++i) {
        if (i == needle_index) continue;
        double cos;
        do {
            detail::fill_gaussian_unit(cand, rng);
            cos = 0.0;
            for (std::size_t c = 0; c < d; ++c) cos += double(cand[c]) * double(probe[c]);
        } while (std::abs(cos) >= noise_cos_max);
        out.max_noise_cos = std::max(out.max_noise_cos, std::abs(cos));
        std::copy(cand.begin(), cand.end(), out.middle_keys.row(i));
    }

    // needle = cos * probe + sin * (unit vector orthogonal to probe)
    detail::fill_gaussian_unit(cand, rng);
    double proj = 0.0;
    for (std::size_t c = 0; c < d; ++c) proj += double(cand[c]) * double(probe[c]);
    double norm = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        cand[c] = float(double(cand[c]) - proj * double(probe[c]));
        norm += double(cand[c]) * double(cand[c]);
    }
    const double sin_part = std::sqrt(1.0 - needle_cos * needle_cos);
    const double inv = sin_part / std::sqrt(norm);
    float* nrow = out.middle_keys.row(needle_index);
    for (std::size_t c = 0; c < d; ++c)
        nrow[c] = float(needle_cos * double(probe[c]) + inv * double(cand[c]));
    return out;
}

}  // namespace reattn
