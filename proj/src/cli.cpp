#include "mamere/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mamere/complexity.hpp"
#include "mamere/errors.hpp"
#include "mamere/merge.hpp"
#include "mamere/restore.hpp"
#include "mamere/transformer.hpp"

namespace mamere {
namespace cli {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<std::string> split_csv_field(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
}

tokenio::GenSpec parse_pattern(const std::string& text) {
    tokenio::GenSpec spec;
    if (text == "gaussian") {
        spec.pattern = tokenio::Pattern::gaussian;
        return spec;
    }
    const auto parts = split_csv_field(text, ':');
    if (parts.size() == 3 && parts[0] == "clustered") {
        spec.pattern = tokenio::Pattern::clustered;
        try {
            spec.clusters = std::stoll(parts[1]);
            spec.noise_scale = std::stod(parts[2]);
        } catch (const std::exception&) {
            throw std::invalid_argument("--pattern: cannot parse '" + text + "'");
        }
        if (spec.clusters < 1 || spec.noise_scale < 0.0) {
            throw std::invalid_argument("--pattern: clustered needs K >= 1 and NOISE >= 0");
        }
        return spec;
    }
    throw std::invalid_argument("--pattern must be gaussian or clustered:K:NOISE, got '" +
                                text + "'");
}

Dtype parse_dtype(const std::string& s) {
    if (s == "f32") return Dtype::f32;
    if (s == "f64") return Dtype::f64;
    throw std::invalid_argument("--dtype must be f32 or f64, got '" + s + "'");
}

MetricSource parse_metric(const std::string& s) {
    if (s == "hidden") return MetricSource::hidden;
    if (s == "keys") return MetricSource::keys;
    if (s == "keys-head-mean") return MetricSource::keys_head_mean;
    throw std::invalid_argument("--metric must be hidden, keys or keys-head-mean, got '" + s +
                                "'");
}

std::vector<index_t> parse_index_list(const std::string& s, const char* flag) {
    std::vector<index_t> out;
    for (const std::string& item : split_csv_field(s, ',')) {
        try {
            out.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string(flag) + ": cannot parse '" + item + "'");
        }
    }
    if (out.empty()) throw std::invalid_argument(std::string(flag) + ": empty list");
    return out;
}

std::vector<double> parse_double_list(const std::string& s, const char* flag) {
    std::vector<double> out;
    for (const std::string& item : split_csv_field(s, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string(flag) + ": cannot parse '" + item + "'");
        }
    }
    if (out.empty()) throw std::invalid_argument(std::string(flag) + ": empty list");
    return out;
}

void summary(std::ostream& err, const char* cmd, index_t L, index_t L_prime,
             index_t preserved, double wall_ms) {
    err << "[" << cmd << "] L=" << L << " -> L'=" << L_prime << " preserved=" << preserved
        << " wall_ms=" << wall_ms << "\n";
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError(path + ": cannot open for writing");
    return f;
}

// Plain quadratic self-attention on raw tokens (Q = K = V = X), row-streamed.
// This is the cost the merge is supposed to beat.
void toy_attention(const TokenMatrix& x, TokenMatrix& out) {
    const index_t B = x.batch, L = x.length, d = x.dim;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> scores(static_cast<std::size_t>(L));
    for (index_t b = 0; b < B; ++b) {
        for (index_t i = 0; i < L; ++i) {
            double mx = -1e300;
            for (index_t j = 0; j < L; ++j) {
                double s = 0.0;
                const auto qi = x.row(b, i);
                const auto kj = x.row(b, j);
                for (index_t k = 0; k < d; ++k) {
                    s += qi[static_cast<std::size_t>(k)] * kj[static_cast<std::size_t>(k)];
                }
                scores[static_cast<std::size_t>(j)] = s * inv_sqrt;
                if (scores[static_cast<std::size_t>(j)] > mx) {
                    mx = scores[static_cast<std::size_t>(j)];
                }
            }
            double denom = 0.0;
            for (index_t j = 0; j < L; ++j) {
                scores[static_cast<std::size_t>(j)] = std::exp(scores[static_cast<std::size_t>(j)] - mx);
                denom += scores[static_cast<std::size_t>(j)];
            }
            auto yi = out.row(b, i);
            for (index_t k = 0; k < d; ++k) yi[static_cast<std::size_t>(k)] = 0.0;
            for (index_t j = 0; j < L; ++j) {
                const double a = scores[static_cast<std::size_t>(j)] / denom;
                const auto vj = x.row(b, j);
                for (index_t k = 0; k < d; ++k) {
                    yi[static_cast<std::size_t>(k)] += a * vj[static_cast<std::size_t>(k)];
                }
            }
        }
    }
}

struct GlobalOpts {
    std::uint64_t seed = 0;
    std::string dtype_name = "f64";
    double epsilon = -1.0;  // < 0 means "pick by dtype"

    Dtype dtype() const { return parse_dtype(dtype_name); }
    double eps() const {
        if (epsilon >= 0.0) return epsilon;
        return dtype() == Dtype::f64 ? 1e-12 : 1e-6;
    }
};

int run_gen(const GlobalOpts& g, index_t B, index_t L, index_t d, index_t l_spec,
            const std::string& pattern, const std::string& out_path, std::ostream& err) {
    const auto start = Clock::now();
    const tokenio::GenSpec spec = parse_pattern(pattern);
    const TokenMatrix t = tokenio::gen_synthetic(B, L, d, l_spec, g.seed, spec);
    tokenio::write_tokens(t, out_path, g.dtype());
    summary(err, "gen", L, L, 0, ms_since(start));
    return 0;
}

int run_merge(const GlobalOpts& g, const std::string& in_path, double tau,
              const std::string& sim, const std::string& partition_name, double ratio_src,
              bool no_refine, bool causal, bool partition_given, const std::string& out_path,
              const std::string& state_path, std::ostream& err) {
    MergeConfig cfg;
    cfg.function = mame::similarity_from_name(sim);
    cfg.tau = tau;
    cfg.epsilon = g.eps();
    cfg.refine = !no_refine;
    cfg.causal = causal;
    PartitionStyle style = partition::style_from_name(partition_name);
    if (causal) {
        if (!partition_given) {
            style = PartitionStyle::causal;
        } else if (style != PartitionStyle::causal) {
            throw std::invalid_argument("--causal requires --partition causal");
        }
    }

    const auto start = Clock::now();
    const TokenMatrix t = tokenio::read_tokens(in_path);
    const PartitionPlan plan = partition::make_plan(t.length, t.l_spec, style, ratio_src, g.seed);
    const MergedSequence merged = mame::merge(t, plan, cfg);
    tokenio::write_tokens(merged.tokens, out_path, g.dtype());
    tokenio::write_fusion_state(merged.state.to_file(), state_path);
    summary(err, "merge", t.length, merged.tokens.length, merged.state.preserved_count(),
            ms_since(start));
    return 0;
}

int run_restore(const GlobalOpts& g, const std::string& in_path, const std::string& state_path,
                const std::string& out_path, std::ostream& err) {
    const auto start = Clock::now();
    const TokenMatrix merged = tokenio::read_tokens(in_path);
    const FusionStateFile state = tokenio::read_fusion_state(state_path);
    const TokenMatrix restored = mare::restore(merged, state);
    tokenio::write_tokens(restored, out_path, g.dtype());
    summary(err, "restore", merged.length, restored.length,
            state.preserved_count(), ms_since(start));
    return 0;
}

int run_block(const GlobalOpts& g, const std::string& mode, const std::string& layers,
              index_t depth, index_t heads, double tau, const std::string& in_path,
              const std::string& out_path, const std::string& metric,
              const std::string& partition_name, double ratio_src, const std::string& sim,
              std::ostream& err) {
    BlockConfig cfg;
    if (mode == "perception") {
        cfg.mode = BlockMode::perception;
    } else if (mode == "synthesis") {
        cfg.mode = BlockMode::synthesis;
    } else {
        throw std::invalid_argument("--mode must be perception or synthesis, got '" + mode + "'");
    }
    cfg.heads = heads;
    cfg.seed = g.seed;
    cfg.plan_style = partition::style_from_name(partition_name);
    cfg.ratio_src = ratio_src;
    cfg.merge_cfg.function = mame::similarity_from_name(sim);
    cfg.merge_cfg.tau = tau;
    cfg.merge_cfg.epsilon = g.eps();
    cfg.merge_cfg.metric_source = parse_metric(metric);
    const std::vector<index_t> layer_list = parse_index_list(layers, "--layers");
    if (depth < 1) throw std::invalid_argument("--depth must be >= 1");

    const auto start = Clock::now();
    const TokenMatrix x = tokenio::read_tokens(in_path);
    cfg.d_model = x.dim;
    if (cfg.d_model % cfg.heads != 0) {
        throw std::invalid_argument("--heads must divide the input feature dim " +
                                    std::to_string(cfg.d_model));
    }
    std::set<index_t> merge_layers(layer_list.begin(), layer_list.end());
    const transformer::StackResult result =
        transformer::run_stack(x, depth, merge_layers, cfg);
    tokenio::write_tokens(result.tokens, out_path, g.dtype());
    index_t preserved = 0;
    for (const FusionState& st : result.states) preserved += st.preserved_count();
    summary(err, "block", x.length, result.tokens.length, preserved, ms_since(start));
    return 0;
}

int run_analyze(const GlobalOpts& g, index_t samples, index_t grid, index_t L, index_t d,
                const std::string& out_path, std::ostream& err) {
    if (samples < 1 || grid < 2) {
        throw std::invalid_argument("--samples must be >= 1 and --grid >= 2");
    }
    const auto start = Clock::now();
    std::ofstream out = open_out(out_path);
    out << "alpha,beta,bound,efficient,overhead_flops,attention_saved\n";
    for (int ai = 1; ai <= 19; ++ai) {
        const double alpha = 0.05 * ai;
        for (int bi = ai; bi <= 20; ++bi) {
            const double beta = 0.05 * bi;
            const index_t M = static_cast<index_t>(std::llround(alpha * static_cast<double>(L)));
            const index_t N = L - M;
            const index_t L_prime =
                static_cast<index_t>(std::llround(beta * static_cast<double>(L)));
            const FlopReport rep = complexity::flop_report(L, d, M, N, L_prime);
            const double bound = std::sqrt(alpha * alpha - alpha + 1.0);
            out << alpha << ',' << beta << ',' << bound << ','
                << (complexity::efficiency_condition(alpha, beta) ? 1 : 0) << ','
                << rep.overhead() << ','
                << (rep.attention_flops_baseline - rep.attention_flops_merged) << "\n";
        }
    }
    out.flush();
    if (!out) throw IoError(out_path + ": write failure");

    const double integral = complexity::condition_integral(grid);
    const double probability = complexity::condition_probability(samples, g.seed);
    err << "[analyze] integral=" << integral << " closed_form=" << 0.375 * std::log(3.0)
        << " probability=" << probability << " samples=" << samples << " grid=" << grid << "\n";
    summary(err, "analyze", L, L, 0, ms_since(start));
    return 0;
}

int run_bench(const GlobalOpts& g, const std::string& L_list, index_t d,
              const std::string& tau_list, index_t repeat, const std::string& out_path,
              std::ostream& err) {
    const std::vector<index_t> Ls = parse_index_list(L_list, "--L-list");
    const std::vector<double> taus = parse_double_list(tau_list, "--tau-list");
    if (repeat < 1) throw std::invalid_argument("--repeat must be >= 1");
    if (d < 1) throw std::invalid_argument("--d must be >= 1");

    const auto start = Clock::now();
    std::ofstream out = open_out(out_path);
    out << "L,d,tau,L_prime,beta,merge_ms,attention_ms_baseline,attention_ms_merged,"
           "total_speedup\n";

    index_t last_L = 0, last_Lp = 0, last_pres = 0;
    for (index_t L : Ls) {
        if (L < 2) throw std::invalid_argument("--L-list entries must be >= 2");
        // Clustered input with an odd cluster count so the alternating split
        // leaves every source cluster with in-cluster destinations.
        tokenio::GenSpec spec;
        spec.pattern = tokenio::Pattern::clustered;
        spec.clusters = std::min<index_t>(7, L);
        spec.noise_scale = 0.02;
        const TokenMatrix tokens = tokenio::gen_synthetic(1, L, d, 0, g.seed, spec);
        const PartitionPlan plan =
            partition::make_plan(L, 0, PartitionStyle::alternating, 0.5, g.seed);

        for (double tau : taus) {
            MergeConfig cfg;
            cfg.tau = tau;
            cfg.epsilon = g.eps();
            for (index_t rep = 0; rep < repeat; ++rep) {
                const auto t0 = Clock::now();
                const MergedSequence merged = mame::merge(tokens, plan, cfg);
                const double merge_ms = ms_since(t0);

                TokenMatrix sink_full(tokens.batch, tokens.length, d, tokens.l_spec);
                const auto t1 = Clock::now();
                toy_attention(tokens, sink_full);
                const double base_ms = ms_since(t1);

                TokenMatrix sink_merged(merged.tokens.batch, merged.tokens.length, d,
                                        merged.tokens.l_spec);
                const auto t2 = Clock::now();
                toy_attention(merged.tokens, sink_merged);
                const double merged_ms = ms_since(t2);

                const double beta = static_cast<double>(merged.tokens.length) /
                                    static_cast<double>(L);
                out << L << ',' << d << ',' << tau << ',' << merged.tokens.length << ','
                    << beta << ',' << merge_ms << ',' << base_ms << ',' << merged_ms << ','
                    << base_ms / (merge_ms + merged_ms) << "\n";
                last_L = L;
                last_Lp = merged.tokens.length;
                last_pres = merged.state.preserved_count();
            }
        }
    }
    out.flush();
    if (!out) throw IoError(out_path + ": write failure");
    summary(err, "bench", last_L, last_Lp, last_pres, ms_since(start));
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Matrix-based token merging and restoration toolkit"};
    app.require_subcommand(1);
    app.fallthrough(true);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "Seed for every random draw");
    app.add_option("--dtype", g.dtype_name, "Output value type: f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--epsilon", g.epsilon, "Numerical stabilizer (default by dtype)");

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic token file");
    index_t gen_B = 1, gen_L = 0, gen_d = 0, gen_lspec = 0;
    std::string gen_pattern = "gaussian", gen_out;
    gen->add_option("--B", gen_B, "Batch size")->check(CLI::PositiveNumber);
    gen->add_option("--L", gen_L, "Sequence length")->required()->check(CLI::PositiveNumber);
    gen->add_option("--d", gen_d, "Feature dim")->required()->check(CLI::PositiveNumber);
    gen->add_option("--l-spec", gen_lspec, "Leading special tokens")
        ->check(CLI::NonNegativeNumber);
    gen->add_option("--pattern", gen_pattern, "gaussian or clustered:K:NOISE");
    gen->add_option("--out", gen_out, "Output .mamt path")->required();

    // merge
    auto* merge_cmd = app.add_subcommand("merge", "Merge a token file");
    std::string merge_in, merge_sim = "cosine", merge_partition = "alternating";
    std::string merge_out, merge_state;
    double merge_tau = 0.8, merge_ratio = 0.5;
    bool merge_norefine = false, merge_causal = false;
    merge_cmd->add_option("--input", merge_in, "Input .mamt path")->required();
    merge_cmd->add_option("--tau", merge_tau, "Similarity threshold");
    merge_cmd->add_option("--sim", merge_sim, "cosine|euclidean|dot|softmax")
        ->check(CLI::IsMember({"cosine", "euclidean", "dot", "softmax"}));
    auto* partition_opt =
        merge_cmd->add_option("--partition", merge_partition,
                              "alternating|sequential|random|causal")
            ->check(CLI::IsMember({"alternating", "sequential", "random", "causal"}));
    merge_cmd->add_option("--ratio-src", merge_ratio, "Source fraction (sequential/random)");
    merge_cmd->add_flag("--no-refine", merge_norefine, "Disable adaptive weight refining");
    merge_cmd->add_flag("--causal", merge_causal, "Causal merging (causal partition)");
    merge_cmd->add_option("--out", merge_out, "Merged .mamt path")->required();
    merge_cmd->add_option("--state", merge_state, "Fusion state JSON path")->required();

    // restore
    auto* restore_cmd = app.add_subcommand("restore", "Restore a merged token file");
    std::string restore_in, restore_state, restore_out;
    restore_cmd->add_option("--input", restore_in, "Merged .mamt path")->required();
    restore_cmd->add_option("--state", restore_state, "Fusion state JSON path")->required();
    restore_cmd->add_option("--out", restore_out, "Restored .mamt path")->required();

    // block
    auto* block_cmd = app.add_subcommand("block", "Run a toy transformer stack");
    std::string block_mode = "perception", block_layers = "3,6,9", block_in, block_out;
    std::string block_metric = "hidden", block_partition = "alternating", block_sim = "cosine";
    index_t block_depth = 12, block_heads = 4;
    double block_tau = 0.5, block_ratio = 0.5;
    block_cmd->add_option("--mode", block_mode, "perception|synthesis")
        ->check(CLI::IsMember({"perception", "synthesis"}));
    block_cmd->add_option("--layers", block_layers, "1-based merge layers, e.g. 3,6,9");
    block_cmd->add_option("--depth", block_depth, "Number of blocks")
        ->check(CLI::PositiveNumber);
    block_cmd->add_option("--heads", block_heads, "Attention heads")
        ->check(CLI::PositiveNumber);
    block_cmd->add_option("--tau", block_tau, "Similarity threshold");
    block_cmd->add_option("--input", block_in, "Input .mamt path")->required();
    block_cmd->add_option("--out", block_out, "Output .mamt path")->required();
    block_cmd->add_option("--metric", block_metric, "hidden|keys|keys-head-mean")
        ->check(CLI::IsMember({"hidden", "keys", "keys-head-mean"}));
    block_cmd->add_option("--partition", block_partition,
                          "alternating|sequential|random|causal");
    block_cmd->add_option("--ratio-src", block_ratio, "Source fraction");
    block_cmd->add_option("--sim", block_sim, "Similarity function");

    // analyze
    auto* analyze_cmd = app.add_subcommand("analyze", "Sweep the attention cost model");
    index_t an_samples = 1000000, an_grid = 10000, an_L = 197, an_d = 768;
    std::string an_out;
    analyze_cmd->add_option("--samples", an_samples, "Monte Carlo samples");
    analyze_cmd->add_option("--grid", an_grid, "Quadrature grid");
    analyze_cmd->add_option("--L", an_L, "Sequence length for flop columns");
    analyze_cmd->add_option("--d", an_d, "Feature dim for flop columns");
    analyze_cmd->add_option("--out", an_out, "Output CSV path")->required();

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Time merge overhead vs attention savings");
    std::string bench_L = "256,1024,4096", bench_tau = "0.5,0.8", bench_out;
    index_t bench_d = 64, bench_repeat = 5;
    bench_cmd->add_option("--L-list", bench_L, "Comma-separated lengths");
    bench_cmd->add_option("--d", bench_d, "Feature dim");
    bench_cmd->add_option("--tau-list", bench_tau, "Comma-separated thresholds");
    bench_cmd->add_option("--repeat", bench_repeat, "Repeats per configuration");
    bench_cmd->add_option("--out", bench_out, "Output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*gen) {
            return run_gen(g, gen_B, gen_L, gen_d, gen_lspec, gen_pattern, gen_out, err);
        }
        if (*merge_cmd) {
            return run_merge(g, merge_in, merge_tau, merge_sim, merge_partition, merge_ratio,
                             merge_norefine, merge_causal, partition_opt->count() > 0,
                             merge_out, merge_state, err);
        }
        if (*restore_cmd) {
            return run_restore(g, restore_in, restore_state, restore_out, err);
        }
        if (*block_cmd) {
            return run_block(g, block_mode, block_layers, block_depth, block_heads, block_tau,
                             block_in, block_out, block_metric, block_partition, block_ratio,
                             block_sim, err);
        }
        if (*analyze_cmd) {
            return run_analyze(g, an_samples, an_grid, an_L, an_d, an_out, err);
        }
        if (*bench_cmd) {
            return run_bench(g, bench_L, bench_d, bench_tau, bench_repeat, bench_out, err);
        }
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << "error: no subcommand selected\n";
    return 2;
}

}  // namespace cli
}  // namespace mamere
