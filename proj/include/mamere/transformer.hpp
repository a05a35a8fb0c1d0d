#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "mamere/merge.hpp"
#include "mamere/tensor.hpp"

namespace mamere {

enum class BlockMode { perception, synthesis };

struct BlockConfig {
    index_t d_model = 64;
    index_t heads = 4;         // d_model must be divisible by heads
    index_t mlp_ratio = 4;
    std::uint64_t seed = 0;
    BlockMode mode = BlockMode::perception;
    MergeConfig merge_cfg;
    PartitionStyle plan_style = PartitionStyle::alternating;
    double ratio_src = 0.5;
};

// Deterministic toy weights: LN gains/biases start at 1/0, projections and
// MLP parameters are splitmix64 + Box-Muller normals scaled by 1/sqrt(d).
struct BlockWeights {
    index_t d_model = 0;
    index_t heads = 0;
    index_t mlp_hidden = 0;
    std::vector<double> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    std::vector<double> wq, wk, wv, wo;  // d x d, row-major in -> out
    std::vector<double> w1, b1;          // d x mlp_hidden
    std::vector<double> w2, b2;          // mlp_hidden x d

    static BlockWeights init(const BlockConfig& cfg, std::uint64_t seed);
};

struct MsaOutput {
    TokenMatrix y;     // attention output after the O projection
    TokenMatrix keys;  // per-head-concatenated key projections, B x L x d
};

struct BlockOutput {
    TokenMatrix tokens;
    // Present when the block merged; maps output slots to input positions.
    std::vector<FusionState> states;
    bool merged = false;
};

namespace transformer {

// LayerNorm over the feature dim, eps = 1e-5.
TokenMatrix layer_norm(const TokenMatrix& x, const std::vector<double>& gain,
                       const std::vector<double>& bias);

// Standard multi-head self-attention; also returns the key tensors so the
// merge metric can reuse them.
MsaOutput msa(const TokenMatrix& x, const BlockWeights& w);

// Optional probe: per-head attention rows (softmax(QK^T / sqrt(d_h))) for one
// sample, h x L x L. Test surface only.
std::vector<Matrix> msa_attention(const TokenMatrix& x, const BlockWeights& w, index_t b);

// affine -> GELU (tanh form) -> affine.
TokenMatrix mlp(const TokenMatrix& x, const BlockWeights& w);

// x' = MSA(LN(x)) + x; x'' = MaMe(x'); out = MLP(LN(x'')) + x''.
// Shrinks the sequence; the fusion state is returned for alignment.
BlockOutput perception_block(const TokenMatrix& x, const BlockConfig& cfg,
                             const BlockWeights& w);

// x' = MaRe(MSA(MaMe(LN(x)))) + x; out = MLP(LN(x')) + x'.
// Attention runs at the reduced length; output keeps the input length.
BlockOutput synthesis_block(const TokenMatrix& x, const BlockConfig& cfg,
                            const BlockWeights& w);

// Plain ViT block (no merging); the tau >= 1 reference point.
TokenMatrix vanilla_block(const TokenMatrix& x, const BlockConfig& cfg,
                          const BlockWeights& w);

struct StackResult {
    TokenMatrix tokens;
    std::vector<index_t> lengths;       // sequence length after each block
    std::vector<FusionState> states;    // one per merging perception block
};

// n_blocks sequential blocks with per-block weights derived from cfg.seed.
// merge_layers holds 1-based block indices that apply MaMe (or MaMe+MaRe in
// synthesis mode); other blocks run vanilla. In perception mode the reduced
// length propagates to later blocks.
StackResult run_stack(const TokenMatrix& x, index_t n_blocks,
                      const std::set<index_t>& merge_layers, const BlockConfig& cfg);

}  // namespace transformer
}  // namespace mamere
