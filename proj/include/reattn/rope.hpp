// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "reattn/dense_matrix.hpp"

namespace reattn {

// Precomputed rotary tables for positions [0, max_position). Interleaved
// dim-pair convention: pair i rotates (2i, 2i+1) by position * base^(-2i/d).
// max_position is the pretraining window; asking for a position at or beyond
// it throws, which is exactly the out-of-distribution condition the engine
// must never trigger.
class RotaryTable {
public:
    RotaryTable(std::size_t head_dim, double base, std::size_t max_position)
        : head_dim_(head_dim), max_position_(max_position), base_(base) {
        if (head_dim == 0 || head_dim % 2 != 0)
            throw std::invalid_argument("rotary head_dim must be even and positive");
        if (base <= 0.0) throw std::invalid_argument("rotary base must be positive");
        if (max_position == 0) throw std::invalid_argument("rotary max_position must be positive");
        const std::size_t half = head_dim / 2;
        std::vector<double> inv_freq(half);
        for (std::size_t i = 0; i < half; ++i)
            inv_freq[i] = std::pow(base, -2.0 * double(i) / double(head_dim));
        cos_.resize(max_position * half);
        sin_.resize(max_position * half);
        for (std::size_t p = 0; p < max_position; ++p) {
            for (std::size_t i = 0; i < half; ++i) {
                const double angle = double(p) * inv_freq[i];
                cos_[p * half + i] = float(std::cos(angle));
                sin_[p * half + i] = float(std::sin(angle));
            }
        }
    }

    std::size_t head_dim() const { return head_dim_; }
    std::size_t max_position() const { return max_position_; }
    double base() const { return base_; }

    const float* cos_row(std::size_t pos) const { return cos_.data() + pos * (head_dim_ / 2); }
    const float* sin_row(std::size_t pos) const { return sin_.data() + pos * (head_dim_ / 2); }

    void rotate_row(float* v, std::size_t pos) const {
        if (pos >= max_position_) throw std::out_of_range("position out of pretrained range");
        const float* c = cos_row(pos);
        const float* s = sin_row(pos);
        const std::size_t half = head_dim_ / 2;
        for (std::size_t i = 0; i < half; ++i) {
            const float x = v[2 * i];
            const float y = v[2 * i + 1];
            v[2 * i] = x * c[i] - y * s[i];
            v[2 * i + 1] = x * s[i] + y * c[i];
        }
    }

private:
    std::size_t head_dim_;
    std::size_t max_position_;
    double base_;
    std::vector<float> cos_;  // [max_position][head_dim/2]
    std::vector<float> sin_;
};

inline DenseMatrix rope_rotate(const DenseMatrix& vectors, std::span<const std::size_t> positions,
                               const RotaryTable& table) {
    if (vectors.cols != table.head_dim())
        throw std::invalid_argument("rope_rotate: row width != head_dim");
    if (positions.size() != vectors.rows)
        throw std::invalid_argument("rope_rotate: one position per row required");
    DenseMatrix out = vectors;
    for (std::size_t r = 0; r < out.rows; ++r) table.rotate_row(out.row(r), positions[r]);
    return out;
}

}  // namespace reattn
