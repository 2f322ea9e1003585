// vssm: command-line driver for the hybrid-memory streaming engine.
//
//   vssm equiv            streaming vs replay / full-causal oracle checks
//   vssm bench            per-chunk latency and cache footprint vs length
//   vssm recall           needle-recall accuracy per distance bucket
//   vssm generate         chunked few-step AR sampling demo
//   vssm dump-activations per-chunk, per-layer block outputs
//   vssm init-weights     export seed-initialized weights
//
// Exit codes: 0 success, 1 a check failed, 2 usage or input error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vssm/vssm.hpp"

#ifndef VSSM_GIT_DESCRIBE
#define VSSM_GIT_DESCRIBE "unknown"
#endif

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config_path;
    std::string weights_path;
    std::uint64_t seed = 0;
};

std::uint64_t effective_seed(std::uint64_t flag_seed) {
    if (const char* env = std::getenv("VSSM_SEED"); env != nullptr && *env != '\0') {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw UsageError(std::string("VSSM_SEED is not an unsigned integer: ") + env);
        }
    }
    return flag_seed;
}

vssm::ModelConfig resolve_config(const std::string& path, const vssm::ModelConfig& fallback) {
    if (path.empty()) return fallback;
    if (!std::filesystem::exists(path)) throw UsageError("config file not found: " + path);
    try {
        return vssm::load_config(path);
    } catch (const std::exception& e) {
        throw UsageError("invalid config " + path + ": " + e.what());
    }
}

std::shared_ptr<const vssm::WeightsBundle> resolve_weights(const Common& common, const vssm::ModelConfig& config,
                                                           std::uint64_t seed) {
    if (common.weights_path.empty()) return std::make_shared<vssm::WeightsBundle>(vssm::init_weights(config, seed));
    if (!std::filesystem::exists(common.weights_path)) throw UsageError("weights manifest not found: " + common.weights_path);
    try {
        return std::make_shared<vssm::WeightsBundle>(
            vssm::tensors_to_weights(vssm::TensorFile::read(common.weights_path), config));
    } catch (const vssm::FormatError& e) {
        throw UsageError(std::string("cannot load weights: ") + e.what());
    }
}

std::vector<vssm::Matrix> random_chunks(const vssm::ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<vssm::Matrix> chunks(n, vssm::Matrix(cfg.chunk_size, cfg.d_model));
    for (auto& m : chunks) {
        for (float& v : m.data) v = normal(rng);
    }
    return chunks;
}

vssm::ModelConfig bench_default_config() {
    vssm::ModelConfig c;
    c.chunk_size = 4;
    return c;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write " + path);
    out << text;
}

// ---------------------------------------------------------------------------

int run_equiv(const Common& common, std::size_t chunks) {
    const std::uint64_t seed = effective_seed(common.seed);
    const auto cfg = resolve_config(common.config_path, vssm::ModelConfig{});
    const auto weights = resolve_weights(common, cfg, seed);
    const auto inputs = random_chunks(cfg, chunks, seed + 1);

    const auto stream = vssm::streaming_run(*weights, inputs);
    const auto replay = vssm::batch_replay_oracle(*weights, inputs);
    float replay_diff = 0.0f;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        replay_diff = std::max(replay_diff, vssm::max_abs_diff(stream.outputs[t], replay[t]));
    }

    const std::size_t short_n = std::min(chunks, cfg.sink_blocks + cfg.window_blocks);
    const std::span<const vssm::Matrix> short_in(inputs.data(), short_n);
    const auto short_stream = vssm::streaming_run(*weights, short_in);
    const auto full = vssm::full_causal_model(*weights, short_in);
    float oracle_diff = 0.0f;
    for (std::size_t t = 0; t < short_n; ++t) {
        oracle_diff = std::max(oracle_diff, vssm::max_abs_diff(short_stream.outputs[t], full[t]));
    }

    const auto gated_off = vssm::streaming_run(*weights, inputs, {vssm::MemoryMode::hybrid, 0.0f});
    const auto local = vssm::streaming_run(*weights, inputs, {vssm::MemoryMode::local_only, std::nullopt});
    bool degenerate_exact = true;
    for (std::size_t t = 0; t < inputs.size(); ++t) degenerate_exact &= gated_off.outputs[t] == local.outputs[t];

    const bool ok = replay_diff <= 1e-5f && oracle_diff <= 1e-5f && degenerate_exact &&
                    stream.peak_cached_tokens <= cfg.cache().capacity_tokens();
    json out = {{"seed", seed},
                {"chunks", chunks},
                {"replay_max_abs_diff", replay_diff},
                {"full_causal_max_abs_diff", oracle_diff},
                {"full_causal_chunks", short_n},
                {"gamma_zero_bit_exact", degenerate_exact},
                {"peak_cached_tokens", stream.peak_cached_tokens},
                {"memory_updates", stream.memory_updates},
                {"pass", ok}};
    std::cout << out.dump(2) << '\n';
    return ok ? kExitOk : kExitCheckFailed;
}

int run_bench(const Common& common, const std::vector<std::size_t>& lengths, const std::string& out_path,
              const std::string& csv_path, std::size_t repeats, std::size_t warmup, bool check) {
    const std::uint64_t seed = effective_seed(common.seed);
    const auto cfg = resolve_config(common.config_path, bench_default_config());
    for (std::size_t len : lengths) {
        if (len % cfg.chunk_size != 0) throw UsageError("length " + std::to_string(len) + " is not a multiple of chunk_size");
        if (len / cfg.chunk_size <= warmup) throw UsageError("length " + std::to_string(len) + " too short for warm-up");
    }
    for (std::size_t i = 1; i < lengths.size(); ++i) {
        if (lengths[i - 1] >= lengths[i]) throw UsageError("--lengths must be strictly ascending");
    }
    const auto weights = resolve_weights(common, cfg, seed);
    vssm::BenchOptions bo;
    bo.repeats = repeats;
    bo.warmup_chunks = warmup;
    bo.seed = seed;
    const auto report = vssm::bench_latency(weights, lengths, bo, VSSM_GIT_DESCRIBE);
    const json j = vssm::to_json(report);
    if (out_path.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_text(out_path, j.dump(2) + "\n");
    }
    if (!csv_path.empty()) write_text(csv_path, vssm::per_chunk_csv(report));

    if (!check || lengths.size() < 2) return kExitOk;
    const auto& h = report.hybrid;
    const auto& o = report.oracle;
    const double hybrid_ratio = h.back().mean_ns / h.front().mean_ns;
    const double oracle_ratio = o.back().mean_ns / o.front().mean_ns;
    bool footprint = true;
    for (const auto& p : h) footprint &= p.peak_tokens == cfg.cache().capacity_tokens();
    const bool ok = hybrid_ratio <= 1.5 && oracle_ratio >= 4.0 && footprint;
    std::cerr << "hybrid ratio " << hybrid_ratio << ", oracle ratio " << oracle_ratio
              << ", constant footprint " << (footprint ? "yes" : "no") << '\n';
    return ok ? kExitOk : kExitCheckFailed;
}

int run_recall(const Common& common, std::size_t n_tasks, std::size_t length, const std::vector<std::size_t>& distances,
               bool local_only, const std::string& out_path) {
    const std::uint64_t seed = effective_seed(common.seed);
    auto defaults = vssm::ModelConfig{};
    defaults.chunk_size = 4;
    const auto cfg = resolve_config(common.config_path, defaults);
    if (cfg.vocab < 3) throw UsageError("recall needs a config with vocab >= 3");
    if (length % cfg.chunk_size != 0) throw UsageError("--length must be a multiple of chunk_size");
    const auto weights = resolve_weights(common, cfg, seed);

    std::vector<vssm::NeedleTask> tasks;
    for (std::size_t d : distances) {
        if (d < 2 || d >= length) throw UsageError("distance " + std::to_string(d) + " must lie in [2, length)");
        for (std::size_t i = 0; i < n_tasks; ++i) {
            tasks.push_back(vssm::gen_needle_task(cfg.vocab, length, d, seed * 1000003ull + d * 7919ull + i));
        }
    }
    vssm::EngineOptions options;
    if (local_only) options.mode = vssm::MemoryMode::local_only;
    const auto buckets = vssm::run_recall_eval(weights, tasks, options);
    json j = {{"seed", seed}, {"length", length}, {"local_only", local_only}, {"buckets", json::array()}};
    for (const auto& b : buckets) {
        j["buckets"].push_back({{"distance", b.distance}, {"correct", b.correct}, {"total", b.total},
                                {"accuracy", b.accuracy()}});
    }
    if (out_path.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_text(out_path, j.dump(2) + "\n");
    }
    return kExitOk;
}

int run_generate(const Common& common, std::size_t n_chunks, std::size_t steps, const std::string& out_prefix,
                 const std::string& checkpoint) {
    const std::uint64_t seed = effective_seed(common.seed);
    auto defaults = vssm::ModelConfig{};
    defaults.vocab = 0;
    defaults.io_dim = 8;
    const auto cfg = resolve_config(common.config_path, defaults);
    if (cfg.io_dim == 0) throw UsageError("generate needs a config with io_dim > 0");
    if (steps == 0) throw UsageError("--steps must be >= 1");
    const auto weights = resolve_weights(common, cfg, seed);

    vssm::SampleStats stats;
    const vssm::Matrix samples = vssm::chunked_ar_sample(weights, n_chunks, steps, seed, &stats);
    vssm::TensorFile file;
    file.add("samples", samples);
    file.write(out_prefix);
    const json metrics = {{"config", cfg},
                          {"seed", seed},
                          {"chunks", n_chunks},
                          {"steps", steps},
                          {"levels", vssm::sampling_levels(steps)},
                          {"denoise_passes", stats.denoise_passes},
                          {"commits", stats.commits},
                          {"peak_cached_tokens", stats.peak_cached_tokens},
                          {"cache_capacity_tokens", cfg.cache().capacity_tokens()}};
    write_text(out_prefix + ".metrics.json", metrics.dump(2) + "\n");

    if (!checkpoint.empty()) {
        // Replays the commits to obtain the final engine state for the snapshot.
        vssm::StreamingEngine engine(weights);
        for (std::size_t t = 0; t < n_chunks; ++t) {
            engine.step(vssm::project_in(*weights, vssm::slice_rows(samples, t * cfg.chunk_size, cfg.chunk_size)));
        }
        vssm::save_checkpoint(engine.state(), checkpoint);
    }
    return kExitOk;
}

int run_dump(const Common& common, std::size_t n_chunks, const std::string& input_path, const std::string& out_prefix,
             bool local_only, const std::string& checkpoint) {
    const std::uint64_t seed = effective_seed(common.seed);
    const auto cfg = resolve_config(common.config_path, vssm::ModelConfig{});
    const auto weights = resolve_weights(common, cfg, seed);

    std::vector<vssm::Matrix> inputs;
    if (input_path.empty()) {
        inputs = random_chunks(cfg, n_chunks, seed + 1);
    } else {
        if (!std::filesystem::exists(input_path)) throw UsageError("input manifest not found: " + input_path);
        const auto file = vssm::TensorFile::read(input_path);
        for (std::size_t t = 0; file.contains("input.chunk" + std::to_string(t)); ++t) {
            inputs.push_back(file.matrix("input.chunk" + std::to_string(t)));
            if (inputs.back().rows != cfg.chunk_size || inputs.back().cols != cfg.d_model) {
                throw UsageError("input chunk " + std::to_string(t) + " has the wrong shape");
            }
        }
    }

    vssm::EngineOptions options;
    if (local_only) options.mode = vssm::MemoryMode::local_only;
    vssm::StreamingEngine engine(weights, options);
    vssm::TensorFile file;
    for (std::size_t t = 0; t < inputs.size(); ++t) file.add("input.chunk" + std::to_string(t), inputs[t]);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        std::vector<vssm::Matrix> layers;
        engine.step(inputs[t], &layers);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            file.add("chunk" + std::to_string(t) + ".layer" + std::to_string(l) + ".out", layers[l]);
        }
    }
    file.write(out_prefix);
    if (!checkpoint.empty()) vssm::save_checkpoint(engine.state(), checkpoint);
    return kExitOk;
}

int run_init(const Common& common, const std::string& out_prefix) {
    const std::uint64_t seed = effective_seed(common.seed);
    const auto cfg = resolve_config(common.config_path, vssm::ModelConfig{});
    vssm::weights_to_tensors(vssm::init_weights(cfg, seed)).write(out_prefix);
    return kExitOk;
}

std::vector<std::size_t> parse_list(const std::string& text, const char* flag) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(std::string(flag) + ": not a list of integers: " + text);
        }
    }
    if (out.empty()) throw UsageError(std::string(flag) + " must not be empty");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid-memory streaming sequence engine"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "ModelConfig JSON file");
        sub->add_option("--weights", common.weights_path, "weights manifest (default: seed init)");
        sub->add_option("--seed", common.seed, "RNG seed (VSSM_SEED overrides)");
    };

    std::size_t equiv_chunks = 64;
    auto* equiv = app.add_subcommand("equiv", "check streaming/replay and full-causal equivalence");
    add_common(equiv);
    equiv->add_option("--chunks", equiv_chunks, "chunks to stream")->check(CLI::PositiveNumber);

    std::string lengths_text = "256,1024,4096";
    std::string out_path;
    std::string csv_path;
    std::size_t repeats = 3;
    std::size_t warmup = 20;
    bool check = false;
    auto* bench = app.add_subcommand("bench", "latency and footprint vs sequence length");
    add_common(bench);
    bench->add_option("--lengths", lengths_text, "ascending token counts, comma separated");
    bench->add_option("--out", out_path, "report JSON path (default stdout)");
    bench->add_option("--csv", csv_path, "per-chunk timing CSV path");
    bench->add_option("--repeats", repeats, "runs per length; best mean kept")->check(CLI::PositiveNumber);
    bench->add_option("--warmup", warmup, "warm-up chunks discarded")->check(CLI::Range(20, 1 << 20));
    bench->add_flag("--check", check, "fail unless the complexity thresholds hold");

    std::size_t tasks = 1000;
    std::size_t length = 160;
    std::string distances_text = "8,128";
    bool local_only = false;
    auto* recall = app.add_subcommand("recall", "needle recall accuracy per distance");
    add_common(recall);
    recall->add_option("--tasks", tasks, "tasks per distance")->check(CLI::PositiveNumber);
    recall->add_option("--length", length, "tokens per task");
    recall->add_option("--distances", distances_text, "needle distances, comma separated");
    recall->add_flag("--local-only", local_only, "disable the global memory path");
    recall->add_option("--out", out_path, "result JSON path (default stdout)");

    std::size_t gen_chunks = 20;
    std::size_t steps = 4;
    std::string out_prefix;
    std::string checkpoint;
    auto* generate = app.add_subcommand("generate", "chunked few-step AR sampling demo");
    add_common(generate);
    generate->add_option("--chunks", gen_chunks, "chunks to generate")->check(CLI::PositiveNumber);
    generate->add_option("--steps", steps, "denoising passes per chunk");
    generate->add_option("--out", out_prefix, "output prefix")->required();
    generate->add_option("--checkpoint", checkpoint, "write final engine snapshot here");

    std::size_t dump_chunks = 8;
    std::string input_path;
    auto* dump = app.add_subcommand("dump-activations", "write per-chunk, per-layer outputs");
    add_common(dump);
    dump->add_option("--chunks", dump_chunks, "random input chunks when no --input")->check(CLI::PositiveNumber);
    dump->add_option("--input", input_path, "manifest holding input.chunk<t> tensors");
    dump->add_option("--out", out_prefix, "output prefix")->required();
    dump->add_flag("--local-only", local_only, "disable the global memory path");
    dump->add_option("--checkpoint", checkpoint, "write final engine snapshot here");

    auto* init = app.add_subcommand("init-weights", "export seed-initialized weights");
    add_common(init);
    init->add_option("--out", out_prefix, "output prefix")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (equiv->parsed()) return run_equiv(common, equiv_chunks);
        if (bench->parsed()) {
            return run_bench(common, parse_list(lengths_text, "--lengths"), out_path, csv_path, repeats, warmup, check);
        }
        if (recall->parsed()) {
            return run_recall(common, tasks, length, parse_list(distances_text, "--distances"), local_only, out_path);
        }
        if (generate->parsed()) return run_generate(common, gen_chunks, steps, out_prefix, checkpoint);
        if (dump->parsed()) return run_dump(common, dump_chunks, input_path, out_prefix, local_only, checkpoint);
        if (init->parsed()) return run_init(common, out_prefix);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const vssm::ContractViolation& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCheckFailed;
    }
    return kExitUsage;
}
