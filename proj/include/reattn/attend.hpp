// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "reattn/dense_matrix.hpp"

namespace reattn {

struct AttendResult {
    DenseMatrix output;               // n_q x d
    std::vector<double> row_entropy;  // nats, one per query row
};

// Scaled-dot-product attention with one streaming pass per query row: running
// max m, denominator A = sum exp(s-m), entropy numerator B = sum (s-m)exp(s-m)
// and the value accumulator are rescaled whenever the max moves. No score
// vector is materialized. All reduction state is 64-bit.
//
// With causal_boundary set, query row i sees keys [0, boundary + i + 1).
inline AttendResult attend(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& v,
                           std::optional<std::size_t> causal_boundary = std::nullopt) {
    if (k.rows == 0) throw std::invalid_argument("empty key set");
    if (q.cols != k.cols) throw std::invalid_argument("attend: q/k width mismatch");
    if (k.rows != v.rows) throw std::invalid_argument("attend: k/v length mismatch");
    const std::size_t d = q.cols;
    const std::size_t dv = v.cols;
    const double scale = 1.0 / std::sqrt(double(d));

    AttendResult res;
    res.output = DenseMatrix(q.rows, dv);
    res.row_entropy.resize(q.rows, 0.0);
    std::vector<double> acc(dv);

    for (std::size_t i = 0; i < q.rows; ++i) {
        std::size_t visible = k.rows;
        if (causal_boundary) visible = std::min(k.rows, *causal_boundary + i + 1);
        if (visible == 0) throw std::invalid_argument("empty key set");

        const float* qrow = q.row(i);
        double m = -std::numeric_limits<double>::infinity();
        double denom = 0.0;
        double ent_num = 0.0;
        std::fill(acc.begin(), acc.end(), 0.0);

        for (std::size_t j = 0; j < visible; ++j) {
            const double s = dot_f64(qrow, k.row(j), d) * scale;
            const float* vrow = v.row(j);
            if (s <= m) {
                const double w = std::exp(s - m);
                denom += w;
                ent_num += (s - m) * w;
                for (std::size_t c = 0; c < dv; ++c) acc[c] += w * double(vrow[c]);
            } else if (denom == 0.0) {  // first visible key
                m = s;
                denom = 1.0;
                for (std::size_t c = 0; c < dv; ++c) acc[c] = double(vrow[c]);
            } else {
                const double r = std::exp(m - s);
                ent_num = r * (ent_num + (m - s) * denom);
                denom = denom * r + 1.0;
                for (std::size_t c = 0; c < dv; ++c) acc[c] = acc[c] * r + double(vrow[c]);
                m = s;
            }
        }

        float* orow = res.output.row(i);
        for (std::size_t c = 0; c < dv; ++c) orow[c] = float(acc[c] / denom);
        const double h = std::log(denom) - ent_num / denom;
        res.row_entropy[i] = h < 0.0 ? 0.0 : h;
    }
    return res;
}

}  // namespace reattn
