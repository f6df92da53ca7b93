// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "reattn/harness.hpp"

namespace {

constexpr const char* kKinds[] = {"equivalence", "niah", "extrapolate", "bench", "sweep"};
constexpr const char* kKindHelp[] = {
    "compare engine logits against the full-attention oracle or window reference",
    "planted-needle selection trials (vector-level asserted, token-level reported)",
    "generate past the pretrain window; assert position/entropy ceilings",
    "fused vs naive scorer: scratch memory and wall time over synthetic middles",
    "hyperparameter grid over chunk/span/k/local with derived k_prime",
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bounded-scope long-context inference harness"};
    app.require_subcommand(1);

    std::string config_path, out_path, mode_str, dump_cache;
    std::uint64_t seed = 0;
    std::size_t k = 0, k_prime = 0, span = 0, chunk = 0, local = 0, global = 0, tile = 0;
    std::size_t decode_steps = 0, trials = 0;
    std::vector<std::size_t> contexts;
    bool timing = false;

    for (std::size_t i = 0; i < 5; ++i) {
        CLI::App* sub = app.add_subcommand(kKinds[i], kKindHelp[i]);
        sub->add_option("--config", config_path, "experiment config JSON file");
        sub->add_option("--seed", seed, "run seed");
        sub->add_option("--out", out_path, "metrics JSONL path (default: stdout)");
        sub->add_option("--mode", mode_str, "attention mode")
            ->check(CLI::IsMember({"full", "window", "reattention"}));
        sub->add_option("--k", k, "per-head/per-query top-k");
        sub->add_option("--k-prime", k_prime, "voted winners kept");
        sub->add_option("--span", span, "span size m");
        sub->add_option("--chunk", chunk, "prefill chunk length");
        sub->add_option("--local", local, "local segment capacity");
        sub->add_option("--global", global, "global segment length");
        sub->add_option("--tile", tile, "scoring tile length");
        sub->add_option("--context", contexts, "context length(s), repeatable");
        sub->add_option("--decode-steps", decode_steps, "greedy decode steps after prefill");
        sub->add_option("--trials", trials, "needle trial count");
        sub->add_option("--dump-cache", dump_cache, "write a cache snapshot after prefill");
        sub->add_flag("--timing", timing, "measure and emit wall-clock fields");
    }

    CLI11_PARSE(app, argc, argv);
    CLI::App* sub = app.get_subcommands().front();

    try {
        reattn::ExperimentConfig cfg;
        if (sub->count("--config")) cfg = reattn::load_experiment_config(config_path);
        cfg.kind = sub->get_name();
        if (sub->count("--seed")) cfg.seed = seed;
        if (sub->count("--out")) cfg.out_path = out_path;
        if (sub->count("--mode")) cfg.mode = reattn::parse_mode(mode_str);
        if (sub->count("--k")) cfg.selection.k = k;
        if (sub->count("--k-prime")) cfg.selection.k_prime = k_prime;
        if (sub->count("--span")) cfg.selection.span_m = span;
        if (sub->count("--chunk")) cfg.selection.l_chunk = chunk;
        if (sub->count("--local")) cfg.selection.l_local = local;
        if (sub->count("--global")) cfg.selection.l_global = global;
        if (sub->count("--tile")) cfg.selection.tile_size = tile;
        if (sub->count("--context")) cfg.context_lengths = contexts;
        if (sub->count("--decode-steps")) cfg.decode_steps = decode_steps;
        if (sub->count("--trials")) cfg.trials = trials;
        if (sub->count("--dump-cache")) cfg.dump_cache_path = dump_cache;
        if (sub->count("--timing")) cfg.timing = true;

        const reattn::RunOutcome outcome = reattn::run_experiment(cfg);
        if (cfg.out_path.empty()) {
            reattn::write_records(outcome, std::cout);
        } else {
            std::ofstream os(cfg.out_path);
            if (!os) throw std::runtime_error("cannot open output path: " + cfg.out_path);
            reattn::write_records(outcome, os);
        }
        for (const std::string& f : outcome.failures)
            std::cerr << "assertion failed: " << f << '\n';
        std::cerr << cfg.kind << ": " << outcome.records.size() << " record(s), "
                  << outcome.failures.size() << " failed assertion(s)\n";
        return outcome.ok() ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
