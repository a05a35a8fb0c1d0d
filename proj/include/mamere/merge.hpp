#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mamere/partition.hpp"
#include "mamere/tensor.hpp"
#include "mamere/tokenio.hpp"

namespace mamere {

enum class Similarity { cosine, euclidean, dot, softmax };
enum class MetricSource { hidden, keys, keys_head_mean };

struct MergeConfig {
    Similarity function = Similarity::cosine;
    double tau = 0.8;
    double epsilon = 1e-12;
    bool refine = true;          // adaptive weight refining on/off
    bool causal = false;         // requires a causal partition plan
    MetricSource metric_source = MetricSource::hidden;

    // Soft nonzero count C_j = sum W/(W+eps) instead of the exact indicator.
    bool soft_count = false;
    // Divide the unpruned W by the pruned column sum instead of re-normalizing
    // the pruned matrix. Blows up as 1/eps on fully pruned columns; kept only
    // for studying that variant, never the default.
    bool unpruned_renorm = false;
};

// Per-sample intermediates of the weight computation, kept for inspection
// and tests. Matrices are M x N, vectors are per source column.
struct SampleFusion {
    Matrix S;        // raw similarities
    Matrix S_sparse; // ReLU(S - tau)
    Matrix W;        // column-normalized
    std::vector<double> C;     // nonzero counts (indicator or soft)
    std::vector<double> zeta;  // column prune thresholds
    Matrix W_pruned;           // ReLU(W - zeta)
    Matrix W_fused;            // final fusion weights for this sample
    std::vector<std::uint8_t> mask;  // per-sample preservation mask
};

struct FusionComputation {
    index_t batch = 0;
    index_t M = 0;
    index_t N = 0;
    std::vector<SampleFusion> samples;
    std::vector<std::uint8_t> mask_final;       // N, OR over samples
    std::vector<std::vector<double>> R;         // per sample, M row scales
};

// Deterministic operation counters maintained by the pipeline. Multiply-add
// counts as 2 flops; refine is pinned at 8 elementwise ops per matrix entry.
struct MergeStats {
    std::int64_t sim_flops = 0;
    std::int64_t refine_flops = 0;
    std::int64_t aggregate_flops = 0;
    std::int64_t preserve_flops = 0;
    std::int64_t normalize_flops = 0;  // the 1/R_i de-scaling, counted apart
};

// Everything MaRe needs to restore the original sequence exactly.
struct FusionState {
    index_t batch = 0;
    index_t M = 0;
    index_t N = 0;
    index_t l_spec = 0;
    std::vector<index_t> dst_index;
    std::vector<index_t> src_index;
    std::vector<std::uint8_t> preserved_mask;  // final batch-wide mask
    std::vector<double> weights;               // dense B*M*N corrected W^F
    std::vector<double> row_scale;             // B*M, R_i = 1 + sum_j W^F_ij
    std::vector<index_t> layout_order;         // merged slot -> original position

    double weight(index_t b, index_t i, index_t j) const {
        return weights[static_cast<std::size_t>((b * M + i) * N + j)];
    }
    double& weight(index_t b, index_t i, index_t j) {
        return weights[static_cast<std::size_t>((b * M + i) * N + j)];
    }
    index_t preserved_count() const;
    index_t original_length() const { return l_spec + M + N; }
    index_t merged_length() const { return l_spec + M + preserved_count(); }

    FusionStateFile to_file() const;
    // B is taken from the token tensor the state is applied to.
    static FusionState from_file(const FusionStateFile& f, index_t batch);
};

// Reduced sequence [specials | fused destinations | preserved sources].
struct MergedSequence {
    TokenMatrix tokens;  // B x L' x d, l_spec carried over
    FusionState state;
    MergeStats stats;

    index_t M() const { return state.M; }
    std::vector<index_t> preserved_src() const;
};

namespace mame {

// S_ij between destination row i and source row j:
//   cosine:    dot / (|x_i| * |x_j| + eps)
//   euclidean: -|x_i - x_j|_2
//   dot:       raw dot product
//   softmax:   row-wise softmax of the dot matrix
Matrix similarity_matrix(const Matrix& x_dst, const Matrix& x_src, const MergeConfig& cfg);

// ReLU with a shifting threshold; emits exact zeros.
Matrix sparsify(const Matrix& S, double tau);

// W_ij = S~_ij / (colsum_j + eps); all-zero columns stay all-zero.
Matrix column_normalize(const Matrix& S_sparse, double eps);

struct RefineResult {
    std::vector<double> C;
    std::vector<double> zeta;
    Matrix W_pruned;
    Matrix W_fused;
};

// Per-column prune against the mean of nonzero weights, then re-normalize.
// With cfg.refine = false, W_fused is W itself.
RefineResult refine_weights(const Matrix& W, const MergeConfig& cfg);

// m_j = 1 exactly when column j sums to exactly zero.
std::vector<std::uint8_t> preservation_mask(const Matrix& W_fused);

// OR across samples: preserved anywhere means preserved everywhere.
std::vector<std::uint8_t> batch_consistent_mask(
    const std::vector<std::vector<std::uint8_t>>& per_sample);

// Zeroes out the columns the final mask preserves; applied at every batch
// size including B = 1.
void correct_fusion(Matrix& W_fused, const std::vector<std::uint8_t>& mask_final);

// Zeroes every entry whose source sits at a strictly later original position
// than its destination, then re-normalizes surviving columns. Requires
// plan.style == causal.
void causal_mask(Matrix& W_fused, const PartitionPlan& plan);

struct AggregateResult {
    Matrix fused;           // M x d, already divided by R
    std::vector<double> R;  // R_i = 1 + sum_j W^F_ij
};

// x'_i = x_dst_i + sum_j W^F_ij x_src_j, then y_i = x'_i / R_i.
AggregateResult aggregate(const Matrix& x_dst, const Matrix& x_src, const Matrix& W_fused);

// Full weight computation for a batch (split -> S -> sparsify -> normalize ->
// refine -> causal -> masks -> OR -> correction), without aggregation.
FusionComputation compute_fusion(const SplitTokens& parts, const PartitionPlan& plan,
                                 const MergeConfig& cfg, MergeStats* stats = nullptr,
                                 const SplitTokens* metric_parts = nullptr);

// The whole merging pipeline. Output order per sample:
// [specials, fused destinations in dst order, preserved sources in src order].
MergedSequence merge(const TokenMatrix& t, const PartitionPlan& plan, const MergeConfig& cfg);

// Same, but similarity is computed on `metric` (e.g. attention keys) while
// aggregation applies to `t`. Shapes must agree on B and L.
MergedSequence merge(const TokenMatrix& t, const TokenMatrix& metric,
                     const PartitionPlan& plan, const MergeConfig& cfg);

Similarity similarity_from_name(const std::string& name);
const char* similarity_name(Similarity s);

}  // namespace mame
}  // namespace mamere
