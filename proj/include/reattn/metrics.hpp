// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reattn/engine.hpp"
#include "reattn/selection.hpp"

namespace reattn {

// One line of run output. Every field is present in every record, zeroed
// where not applicable, so the JSONL schema never shifts between run kinds.
// Latency fields are written only when timing was requested; otherwise they
// stay zero and records are byte-reproducible from (config, seed).
struct MetricsRecord {
    std::string run_id;
    std::string kind;
    std::string mode;
    std::string status = "ok";  // "ok" or "skipped"
    std::uint64_t seed = 0;
    std::size_t context_length = 0;
    std::size_t pretrain_window = 0;
    std::size_t k = 0;
    std::size_t k_prime = 0;
    std::size_t span_m = 0;
    std::size_t l_global = 0;
    std::size_t l_local = 0;
    std::size_t l_chunk = 0;
    std::size_t tile_size = 0;
    std::size_t chunks = 0;
    std::size_t decode_steps = 0;
    std::size_t scope_len_max = 0;
    std::size_t max_position_used = 0;
    std::size_t ood_positions = 0;
    double entropy_max = 0.0;
    double entropy_mean = 0.0;
    std::size_t peak_scratch_bytes = 0;
    std::size_t naive_scratch_bytes = 0;
    double latency_ms_p50 = 0.0;
    double latency_ms_mean = 0.0;
    double latency_ms_max = 0.0;
    double max_abs_logit_diff = 0.0;
    double argmax_agreement = 0.0;
    std::size_t retrieval_hits = 0;
    std::size_t trials = 0;
    double retrieval_hit_rate = 0.0;
    bool coverage_total = false;
    bool assertions_passed = true;

    nlohmann::json to_json() const {
        nlohmann::json j;  // object keys serialize alphabetically: stable bytes
        j["run_id"] = run_id;
        j["kind"] = kind;
        j["mode"] = mode;
        j["status"] = status;
        j["seed"] = seed;
        j["context_length"] = context_length;
        j["pretrain_window"] = pretrain_window;
        j["k"] = k;
        j["k_prime"] = k_prime;
        j["span_m"] = span_m;
        j["l_global"] = l_global;
        j["l_local"] = l_local;
        j["l_chunk"] = l_chunk;
        j["tile_size"] = tile_size;
        j["chunks"] = chunks;
        j["decode_steps"] = decode_steps;
        j["scope_len_max"] = scope_len_max;
        j["max_position_used"] = max_position_used;
        j["ood_positions"] = ood_positions;
        j["entropy_max"] = entropy_max;
        j["entropy_mean"] = entropy_mean;
        j["peak_scratch_bytes"] = peak_scratch_bytes;
        j["naive_scratch_bytes"] = naive_scratch_bytes;
        j["latency_ms_p50"] = latency_ms_p50;
        j["latency_ms_mean"] = latency_ms_mean;
        j["latency_ms_max"] = latency_ms_max;
        j["max_abs_logit_diff"] = max_abs_logit_diff;
        j["argmax_agreement"] = argmax_agreement;
        j["retrieval_hits"] = retrieval_hits;
        j["trials"] = trials;
        j["retrieval_hit_rate"] = retrieval_hit_rate;
        j["coverage_total"] = coverage_total;
        j["assertions_passed"] = assertions_passed;
        return j;
    }

    void write_line(std::ostream& os) const { os << to_json().dump() << '\n'; }

    void apply_selection(const SelectionConfig& cfg) {
        k = cfg.k;
        k_prime = cfg.k_prime;
        span_m = cfg.span_m;
        l_global = cfg.l_global;
        l_local = cfg.l_local;
        l_chunk = cfg.l_chunk;
        tile_size = cfg.tile_size;
    }

    void apply_stats(const RunStats& s, bool timing) {
        chunks = s.chunks_processed;
        decode_steps = s.decode_steps;
        scope_len_max = s.scope_len_max;
        max_position_used = s.max_position_used;
        ood_positions = s.ood_positions;
        entropy_max = s.entropy_max;
        entropy_mean = s.entropy_mean();
        peak_scratch_bytes = s.peak_scratch_bytes;
        coverage_total = s.coverage_total;
        if (timing && !s.decode_latency_ms.empty()) {
            std::vector<double> lat = s.decode_latency_ms;
            std::sort(lat.begin(), lat.end());
            latency_ms_p50 = lat[lat.size() / 2];
            latency_ms_max = lat.back();
            double sum = 0.0;
            for (double v : lat) sum += v;
            latency_ms_mean = sum / double(lat.size());
        }
    }
};

}  // namespace reattn
