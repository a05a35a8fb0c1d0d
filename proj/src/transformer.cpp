#include "mamere/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mamere/restore.hpp"
#include "mamere/rng.hpp"

namespace mamere {

BlockWeights BlockWeights::init(const BlockConfig& cfg, std::uint64_t seed) {
    if (cfg.d_model < 1 || cfg.heads < 1 || cfg.d_model % cfg.heads != 0) {
        throw std::invalid_argument("BlockWeights: d_model must be divisible by heads");
    }
    if (cfg.mlp_ratio < 1) throw std::invalid_argument("BlockWeights: mlp_ratio must be >= 1");

    BlockWeights w;
    w.d_model = cfg.d_model;
    w.heads = cfg.heads;
    w.mlp_hidden = cfg.mlp_ratio * cfg.d_model;
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto hd = static_cast<std::size_t>(w.mlp_hidden);
    w.ln1_gain.assign(d, 1.0);
    w.ln1_bias.assign(d, 0.0);
    w.ln2_gain.assign(d, 1.0);
    w.ln2_bias.assign(d, 0.0);

    NormalStream normals(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    auto fill = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        for (double& x : v) x = scale * normals.next();
    };
    fill(w.wq, d * d);
    fill(w.wk, d * d);
    fill(w.wv, d * d);
    fill(w.wo, d * d);
    fill(w.w1, d * hd);
    fill(w.b1, hd);
    fill(w.w2, hd * d);
    fill(w.b2, d);
    return w;
}

namespace transformer {
namespace {

constexpr double kLnEps = 1e-5;

double gelu_tanh(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

// y[l] = x[l] * W with W row-major d_in x d_out.
void project(std::span<const double> x, const std::vector<double>& W,
             index_t d_in, index_t d_out, std::span<double> y) {
    for (index_t o = 0; o < d_out; ++o) y[static_cast<std::size_t>(o)] = 0.0;
    for (index_t k = 0; k < d_in; ++k) {
        const double xv = x[static_cast<std::size_t>(k)];
        const double* wrow = W.data() + k * d_out;
        for (index_t o = 0; o < d_out; ++o) y[static_cast<std::size_t>(o)] += xv * wrow[o];
    }
}

TokenMatrix add(const TokenMatrix& a, const TokenMatrix& b) {
    TokenMatrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

}  // namespace

TokenMatrix layer_norm(const TokenMatrix& x, const std::vector<double>& gain,
                       const std::vector<double>& bias) {
    if (static_cast<index_t>(gain.size()) != x.dim ||
        static_cast<index_t>(bias.size()) != x.dim) {
        throw std::invalid_argument("layer_norm: gain/bias length must equal d");
    }
    TokenMatrix out = x;
    for (index_t b = 0; b < x.batch; ++b) {
        for (index_t l = 0; l < x.length; ++l) {
            auto row = out.row(b, l);
            double mean = 0.0;
            for (double v : row) mean += v;
            mean /= static_cast<double>(x.dim);
            double var = 0.0;
            for (double v : row) {
                const double c = v - mean;
                var += c * c;
            }
            var /= static_cast<double>(x.dim);
            const double inv = 1.0 / std::sqrt(var + kLnEps);
            for (index_t k = 0; k < x.dim; ++k) {
                row[static_cast<std::size_t>(k)] =
                    (row[static_cast<std::size_t>(k)] - mean) * inv *
                        gain[static_cast<std::size_t>(k)] +
                    bias[static_cast<std::size_t>(k)];
            }
        }
    }
    return out;
}

MsaOutput msa(const TokenMatrix& x, const BlockWeights& w) {
    if (x.dim != w.d_model) throw std::invalid_argument("msa: feature dim != d_model");
    const index_t B = x.batch, L = x.length, d = x.dim, h = w.heads;
    const index_t dh = d / h;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    MsaOutput out;
    out.y = TokenMatrix(B, L, d, x.l_spec);
    out.keys = TokenMatrix(B, L, d, x.l_spec);

    TokenMatrix q(B, L, d, x.l_spec), v(B, L, d, x.l_spec);
    for (index_t b = 0; b < B; ++b) {
        for (index_t l = 0; l < L; ++l) {
            project(x.row(b, l), w.wq, d, d, q.row(b, l));
            project(x.row(b, l), w.wk, d, d, out.keys.row(b, l));
            project(x.row(b, l), w.wv, d, d, v.row(b, l));
        }
    }

    TokenMatrix heads_out(B, L, d, x.l_spec);
    std::vector<double> scores(static_cast<std::size_t>(L));
    for (index_t b = 0; b < B; ++b) {
        for (index_t head = 0; head < h; ++head) {
            const index_t off = head * dh;
            for (index_t i = 0; i < L; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (index_t j = 0; j < L; ++j) {
                    double s = 0.0;
                    for (index_t k = 0; k < dh; ++k) {
                        s += q.at(b, i, off + k) * out.keys.at(b, j, off + k);
                    }
                    scores[static_cast<std::size_t>(j)] = s * inv_sqrt;
                    mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
                }
                double denom = 0.0;
                for (index_t j = 0; j < L; ++j) {
                    scores[static_cast<std::size_t>(j)] =
                        std::exp(scores[static_cast<std::size_t>(j)] - mx);
                    denom += scores[static_cast<std::size_t>(j)];
                }
                for (index_t k = 0; k < dh; ++k) {
                    double acc = 0.0;
                    for (index_t j = 0; j < L; ++j) {
                        acc += scores[static_cast<std::size_t>(j)] * v.at(b, j, off + k);
                    }
                    heads_out.at(b, i, off + k) = acc / denom;
                }
            }
        }
        for (index_t l = 0; l < L; ++l) {
            project(heads_out.row(b, l), w.wo, d, d, out.y.row(b, l));
        }
    }
    return out;
}

std::vector<Matrix> msa_attention(const TokenMatrix& x, const BlockWeights& w, index_t b) {
    const index_t L = x.length, d = x.dim, h = w.heads;
    const index_t dh = d / h;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix q(L, d), k(L, d);
    for (index_t l = 0; l < L; ++l) {
        project(x.row(b, l), w.wq, d, d, q.row(l));
        project(x.row(b, l), w.wk, d, d, k.row(l));
    }
    std::vector<Matrix> attn(static_cast<std::size_t>(h), Matrix(L, L));
    for (index_t head = 0; head < h; ++head) {
        Matrix& a = attn[static_cast<std::size_t>(head)];
        const index_t off = head * dh;
        for (index_t i = 0; i < L; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (index_t j = 0; j < L; ++j) {
                double s = 0.0;
                for (index_t kk = 0; kk < dh; ++kk) s += q(i, off + kk) * k(j, off + kk);
                a(i, j) = s * inv_sqrt;
                mx = std::max(mx, a(i, j));
            }
            double denom = 0.0;
            for (index_t j = 0; j < L; ++j) {
                a(i, j) = std::exp(a(i, j) - mx);
                denom += a(i, j);
            }
            for (index_t j = 0; j < L; ++j) a(i, j) /= denom;
        }
    }
    return attn;
}

TokenMatrix mlp(const TokenMatrix& x, const BlockWeights& w) {
    const index_t B = x.batch, L = x.length, d = x.dim;
    TokenMatrix out(B, L, d, x.l_spec);
    std::vector<double> hidden(static_cast<std::size_t>(w.mlp_hidden));
    for (index_t b = 0; b < B; ++b) {
        for (index_t l = 0; l < L; ++l) {
            project(x.row(b, l), w.w1, d, w.mlp_hidden, hidden);
            for (index_t k = 0; k < w.mlp_hidden; ++k) {
                hidden[static_cast<std::size_t>(k)] =
                    gelu_tanh(hidden[static_cast<std::size_t>(k)] +
                              w.b1[static_cast<std::size_t>(k)]);
            }
            project(hidden, w.w2, w.mlp_hidden, d, out.row(b, l));
            for (index_t k = 0; k < d; ++k) {
                out.at(b, l, k) += w.b2[static_cast<std::size_t>(k)];
            }
        }
    }
    return out;
}

namespace {

// Head-averaged keys: one reading of the "k-mean" feature-choice ablation.
TokenMatrix mean_keys(const TokenMatrix& keys, index_t heads) {
    const index_t dh = keys.dim / heads;
    TokenMatrix out(keys.batch, keys.length, dh, keys.l_spec);
    for (index_t b = 0; b < keys.batch; ++b) {
        for (index_t l = 0; l < keys.length; ++l) {
            for (index_t k = 0; k < dh; ++k) {
                double acc = 0.0;
                for (index_t head = 0; head < heads; ++head) {
                    acc += keys.at(b, l, head * dh + k);
                }
                out.at(b, l, k) = acc / static_cast<double>(heads);
            }
        }
    }
    return out;
}

PartitionPlan block_plan(const TokenMatrix& x, const BlockConfig& cfg) {
    return partition::make_plan(x.length, x.l_spec, cfg.plan_style, cfg.ratio_src, cfg.seed);
}

bool mergeable(const TokenMatrix& x) { return x.length - x.l_spec >= 2; }

}  // namespace

TokenMatrix vanilla_block(const TokenMatrix& x, const BlockConfig& cfg,
                          const BlockWeights& w) {
    (void)cfg;
    const TokenMatrix attended = add(msa(layer_norm(x, w.ln1_gain, w.ln1_bias), w).y, x);
    return add(mlp(layer_norm(attended, w.ln2_gain, w.ln2_bias), w), attended);
}

BlockOutput perception_block(const TokenMatrix& x, const BlockConfig& cfg,
                             const BlockWeights& w) {
    BlockOutput out;
    if (!mergeable(x)) {
        out.tokens = vanilla_block(x, cfg, w);
        return out;
    }
    const MsaOutput attn = msa(layer_norm(x, w.ln1_gain, w.ln1_bias), w);
    const TokenMatrix attended = add(attn.y, x);

    const PartitionPlan plan = block_plan(x, cfg);
    MergedSequence merged;
    switch (cfg.merge_cfg.metric_source) {
        case MetricSource::hidden:
            merged = mame::merge(attended, plan, cfg.merge_cfg);
            break;
        case MetricSource::keys:
            merged = mame::merge(attended, attn.keys, plan, cfg.merge_cfg);
            break;
        case MetricSource::keys_head_mean:
            merged = mame::merge(attended, mean_keys(attn.keys, w.heads), plan, cfg.merge_cfg);
            break;
    }

    out.tokens = add(mlp(layer_norm(merged.tokens, w.ln2_gain, w.ln2_bias), w), merged.tokens);
    out.states.push_back(std::move(merged.state));
    out.merged = true;
    return out;
}

BlockOutput synthesis_block(const TokenMatrix& x, const BlockConfig& cfg,
                            const BlockWeights& w) {
    BlockOutput out;
    if (!mergeable(x)) {
        out.tokens = vanilla_block(x, cfg, w);
        return out;
    }
    const TokenMatrix normed = layer_norm(x, w.ln1_gain, w.ln1_bias);

    const PartitionPlan plan = block_plan(x, cfg);
    MergedSequence merged;
    if (cfg.merge_cfg.metric_source == MetricSource::hidden) {
        merged = mame::merge(normed, plan, cfg.merge_cfg);
    } else {
        // MaMe runs before this block's attention, so the key features are
        // the block's own key projection of the sequence being merged.
        TokenMatrix keys(normed.batch, normed.length, normed.dim, normed.l_spec);
        for (index_t b = 0; b < normed.batch; ++b) {
            for (index_t l = 0; l < normed.length; ++l) {
                project(normed.row(b, l), w.wk, normed.dim, normed.dim, keys.row(b, l));
            }
        }
        if (cfg.merge_cfg.metric_source == MetricSource::keys_head_mean) {
            keys = mean_keys(keys, w.heads);
        }
        merged = mame::merge(normed, keys, plan, cfg.merge_cfg);
    }

    MergedSequence attended_reduced;
    attended_reduced.tokens = msa(merged.tokens, w).y;
    attended_reduced.state = merged.state;
    const TokenMatrix restored = mare::restore(attended_reduced);

    const TokenMatrix residual = add(restored, x);
    out.tokens = add(mlp(layer_norm(residual, w.ln2_gain, w.ln2_bias), w), residual);
    out.states.push_back(std::move(attended_reduced.state));
    out.merged = true;
    return out;
}

StackResult run_stack(const TokenMatrix& x, index_t n_blocks,
                      const std::set<index_t>& merge_layers, const BlockConfig& cfg) {
    if (n_blocks < 1) throw std::invalid_argument("run_stack: need at least one block");
    for (index_t layer : merge_layers) {
        if (layer < 1) throw std::invalid_argument("run_stack: merge layers are 1-based");
    }
    SplitMix64 seeds(cfg.seed);

    StackResult result;
    result.tokens = x;
    for (index_t block = 1; block <= n_blocks; ++block) {
        BlockConfig block_cfg = cfg;
        const std::uint64_t block_seed = seeds.next();
        block_cfg.seed = block_seed;
        const BlockWeights w = BlockWeights::init(block_cfg, block_seed);

        if (merge_layers.count(block) == 0) {
            result.tokens = vanilla_block(result.tokens, block_cfg, w);
        } else if (cfg.mode == BlockMode::perception) {
            BlockOutput out = perception_block(result.tokens, block_cfg, w);
            result.tokens = std::move(out.tokens);
            for (auto& st : out.states) result.states.push_back(std::move(st));
        } else {
            BlockOutput out = synthesis_block(result.tokens, block_cfg, w);
            result.tokens = std::move(out.tokens);
        }
        result.lengths.push_back(result.tokens.length);
    }
    return result;
}

}  // namespace transformer
}  // namespace mamere
