// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace reattn {

// Row-major float32 matrix. The only tensor type in the engine; heads are
// carried as column blocks (n_heads * d_head columns).
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}

    float* row(std::size_t i) { return values.data() + i * cols; }
    const float* row(std::size_t i) const { return values.data() + i * cols; }

    float& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
    float at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

    bool all_finite() const {
        for (float v : values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Fixed 8-lane float accumulation. The lane split breaks the serial FP
// dependency so the loop vectorizes; the reduction order is fixed, so results
// are reproducible run to run.
inline float dot_f32(const float* a, const float* b, std::size_t d) {
    float l0 = 0, l1 = 0, l2 = 0, l3 = 0, l4 = 0, l5 = 0, l6 = 0, l7 = 0;
    std::size_t j = 0;
    for (; j + 8 <= d; j += 8) {
        l0 += a[j + 0] * b[j + 0];
        l1 += a[j + 1] * b[j + 1];
        l2 += a[j + 2] * b[j + 2];
        l3 += a[j + 3] * b[j + 3];
        l4 += a[j + 4] * b[j + 4];
        l5 += a[j + 5] * b[j + 5];
        l6 += a[j + 6] * b[j + 6];
        l7 += a[j + 7] * b[j + 7];
    }
    for (; j < d; ++j) l0 += a[j] * b[j];
    return ((l0 + l1) + (l2 + l3)) + ((l4 + l5) + (l6 + l7));
}

// Same lane structure with 64-bit accumulators, for attention logits.
inline double dot_f64(const float* a, const float* b, std::size_t d) {
    double l0 = 0, l1 = 0, l2 = 0, l3 = 0, l4 = 0, l5 = 0, l6 = 0, l7 = 0;
    std::size_t j = 0;
    for (; j + 8 <= d; j += 8) {
        l0 += double(a[j + 0]) * double(b[j + 0]);
        l1 += double(a[j + 1]) * double(b[j + 1]);
        l2 += double(a[j + 2]) * double(b[j + 2]);
        l3 += double(a[j + 3]) * double(b[j + 3]);
        l4 += double(a[j + 4]) * double(b[j + 4]);
        l5 += double(a[j + 5]) * double(b[j + 5]);
        l6 += double(a[j + 6]) * double(b[j + 6]);
        l7 += double(a[j + 7]) * double(b[j + 7]);
    }
    for (; j < d; ++j) l0 += double(a[j]) * double(b[j]);
    return ((l0 + l1) + (l2 + l3)) + ((l4 + l5) + (l6 + l7));
}

// C = A * B, accumulate-into-row order so B is streamed row-wise.
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    DenseMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const float* arow = a.row(i);
        float* crow = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const float av = arow[k];
            const float* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

inline void add_inplace(DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] += b.values[i];
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        double d = std::abs(double(a.values[i]) - double(b.values[i]));
        if (d > m) m = d;
    }
    return m;
}

}  // namespace reattn
