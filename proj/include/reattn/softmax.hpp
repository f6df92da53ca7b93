// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace reattn {

// Max-subtracted softmax. Sums are carried in double so the output stays a
// probability vector even for extreme logit magnitudes.
inline std::vector<float> stable_softmax(std::span<const float> logits) {
    if (logits.empty()) throw std::invalid_argument("empty logits");
    float max_logit = logits[0];
    for (float v : logits) max_logit = std::max(max_logit, v);
    std::vector<float> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        double e = std::exp(double(logits[i]) - double(max_logit));
        out[i] = float(e);
        sum += e;
    }
    for (float& v : out) v = float(double(v) / sum);
    return out;
}

// Shannon entropy in nats of a probability vector; 0*ln(0) counts as 0.
inline double attention_entropy(std::span<const float> weights) {
    double h = 0.0;
    for (float w : weights) {
        if (w > 0.0f) h -= double(w) * std::log(double(w));
    }
    return h < 0.0 ? 0.0 : h;
}

}  // namespace reattn
