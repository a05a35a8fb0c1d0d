#include "mamere/merge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "mamere/errors.hpp"

namespace mamere {

index_t FusionState::preserved_count() const {
    return static_cast<index_t>(std::count(preserved_mask.begin(), preserved_mask.end(), 1));
}

FusionStateFile FusionState::to_file() const {
    FusionStateFile f;
    f.version = 1;
    f.M = M;
    f.N = N;
    f.l_spec = l_spec;
    f.dst_index = dst_index;
    f.src_index = src_index;
    f.preserved_mask = preserved_mask;
    f.layout_order = layout_order;
    for (index_t b = 0; b < batch; ++b) {
        for (index_t i = 0; i < M; ++i) {
            for (index_t j = 0; j < N; ++j) {
                const double v = weight(b, i, j);
                if (v != 0.0) f.weights.push_back({b, i, j, v});
            }
        }
    }
    return f;
}

FusionState FusionState::from_file(const FusionStateFile& f, index_t batch) {
    f.validate();
    if (batch < 1) throw StateError("fusion state: batch must be >= 1");
    FusionState s;
    s.batch = batch;
    s.M = f.M;
    s.N = f.N;
    s.l_spec = f.l_spec;
    s.dst_index = f.dst_index;
    s.src_index = f.src_index;
    s.preserved_mask = f.preserved_mask;
    s.layout_order = f.layout_order;
    s.weights.assign(static_cast<std::size_t>(batch * f.M * f.N), 0.0);
    for (const WeightTriplet& t : f.weights) {
        if (t.b >= batch) {
            throw StateError("fusion state: triplet sample " + std::to_string(t.b) +
                             " out of range for batch " + std::to_string(batch));
        }
        s.weight(t.b, t.i, t.j) = t.value;
    }
    s.row_scale.assign(static_cast<std::size_t>(batch * f.M), 0.0);
    for (index_t b = 0; b < batch; ++b) {
        for (index_t i = 0; i < f.M; ++i) {
            double sum = 0.0;
            for (index_t j = 0; j < f.N; ++j) sum += s.weight(b, i, j);
            s.row_scale[static_cast<std::size_t>(b * f.M + i)] = 1.0 + sum;
        }
    }
    return s;
}

std::vector<index_t> MergedSequence::preserved_src() const {
    std::vector<index_t> out;
    for (index_t j = 0; j < state.N; ++j) {
        if (state.preserved_mask[static_cast<std::size_t>(j)]) {
            out.push_back(state.src_index[static_cast<std::size_t>(j)]);
        }
    }
    return out;
}

namespace mame {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
    return acc;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace

Matrix similarity_matrix(const Matrix& x_dst, const Matrix& x_src, const MergeConfig& cfg) {
    const index_t M = x_dst.rows, N = x_src.rows;
    if (x_dst.cols != x_src.cols) {
        throw std::invalid_argument("similarity_matrix: feature dims disagree");
    }
    Matrix S(M, N);
    switch (cfg.function) {
        case Similarity::cosine: {
            std::vector<double> dst_norm(static_cast<std::size_t>(M));
            std::vector<double> src_norm(static_cast<std::size_t>(N));
            for (index_t i = 0; i < M; ++i) dst_norm[static_cast<std::size_t>(i)] = norm(x_dst.row(i));
            for (index_t j = 0; j < N; ++j) src_norm[static_cast<std::size_t>(j)] = norm(x_src.row(j));
            for (index_t i = 0; i < M; ++i) {
                for (index_t j = 0; j < N; ++j) {
                    S(i, j) = dot(x_dst.row(i), x_src.row(j)) /
                              (dst_norm[static_cast<std::size_t>(i)] *
                                   src_norm[static_cast<std::size_t>(j)] +
                               cfg.epsilon);
                }
            }
            break;
        }
        case Similarity::euclidean:
            for (index_t i = 0; i < M; ++i) {
                for (index_t j = 0; j < N; ++j) {
                    double acc = 0.0;
                    for (index_t k = 0; k < x_dst.cols; ++k) {
                        const double diff = x_dst(i, k) - x_src(j, k);
                        acc += diff * diff;
                    }
                    S(i, j) = -std::sqrt(acc);
                }
            }
            break;
        case Similarity::dot:
            for (index_t i = 0; i < M; ++i) {
                for (index_t j = 0; j < N; ++j) S(i, j) = dot(x_dst.row(i), x_src.row(j));
            }
            break;
        case Similarity::softmax:
            for (index_t i = 0; i < M; ++i) {
                for (index_t j = 0; j < N; ++j) S(i, j) = dot(x_dst.row(i), x_src.row(j));
                double mx = -std::numeric_limits<double>::infinity();
                for (index_t j = 0; j < N; ++j) mx = std::max(mx, S(i, j));
                double sum = 0.0;
                for (index_t j = 0; j < N; ++j) {
                    S(i, j) = std::exp(S(i, j) - mx);
                    sum += S(i, j);
                }
                for (index_t j = 0; j < N; ++j) S(i, j) /= sum;
            }
            break;
    }
    return S;
}

Matrix sparsify(const Matrix& S, double tau) {
    Matrix out(S.rows, S.cols);
    for (std::size_t i = 0; i < S.v.size(); ++i) out.v[i] = std::max(S.v[i] - tau, 0.0);
    return out;
}

Matrix column_normalize(const Matrix& S_sparse, double eps) {
    Matrix W(S_sparse.rows, S_sparse.cols);
    for (index_t j = 0; j < S_sparse.cols; ++j) {
        double sum = 0.0;
        for (index_t i = 0; i < S_sparse.rows; ++i) sum += S_sparse(i, j);
        if (sum == 0.0) continue;  // all-zero columns stay all-zero
        const double inv = 1.0 / (sum + eps);
        for (index_t i = 0; i < S_sparse.rows; ++i) W(i, j) = S_sparse(i, j) * inv;
    }
    return W;
}

RefineResult refine_weights(const Matrix& W, const MergeConfig& cfg) {
    const index_t M = W.rows, N = W.cols;
    RefineResult r;
    r.C.assign(static_cast<std::size_t>(N), 0.0);
    r.zeta.assign(static_cast<std::size_t>(N), 0.0);

    for (index_t j = 0; j < N; ++j) {
        double sum = 0.0, soft = 0.0;
        double min_nonzero = std::numeric_limits<double>::infinity();
        index_t count = 0;
        for (index_t i = 0; i < M; ++i) {
            const double w = W(i, j);
            sum += w;
            if (w > 0.0) {
                ++count;
                soft += w / (w + cfg.epsilon);
                min_nonzero = std::min(min_nonzero, w);
            }
        }
        r.C[static_cast<std::size_t>(j)] =
            cfg.soft_count ? soft : static_cast<double>(count);
        if (count == 0) continue;
        // The mean of the nonzero weights can round just below the smallest
        // of them when they are all equal; the clamp keeps exact ties pruning
        // to exact zero. The true mean never falls below the minimum.
        const double mean = cfg.soft_count
                                ? sum / (soft + cfg.epsilon)
                                : sum / static_cast<double>(count);
        r.zeta[static_cast<std::size_t>(j)] = std::max(mean, min_nonzero);
    }

    if (!cfg.refine) {
        r.W_pruned = W;
        r.W_fused = W;
        return r;
    }

    r.W_pruned = Matrix(M, N);
    for (index_t j = 0; j < N; ++j) {
        const double z = r.zeta[static_cast<std::size_t>(j)];
        for (index_t i = 0; i < M; ++i) {
            r.W_pruned(i, j) = std::max(W(i, j) - z, 0.0);
        }
    }

    r.W_fused = Matrix(M, N);
    for (index_t j = 0; j < N; ++j) {
        double pruned_sum = 0.0;
        for (index_t i = 0; i < M; ++i) pruned_sum += r.W_pruned(i, j);
        if (cfg.unpruned_renorm) {
            // Study variant: divides the unpruned weights by the pruned
            // column sum, which grows as 1/eps on fully pruned columns.
            const double inv = 1.0 / (pruned_sum + cfg.epsilon);
            for (index_t i = 0; i < M; ++i) r.W_fused(i, j) = W(i, j) * inv;
        } else {
            if (pruned_sum == 0.0) continue;
            const double inv = 1.0 / (pruned_sum + cfg.epsilon);
            for (index_t i = 0; i < M; ++i) r.W_fused(i, j) = r.W_pruned(i, j) * inv;
        }
    }
    return r;
}

std::vector<std::uint8_t> preservation_mask(const Matrix& W_fused) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(W_fused.cols), 0);
    for (index_t j = 0; j < W_fused.cols; ++j) {
        double sum = 0.0;
        for (index_t i = 0; i < W_fused.rows; ++i) sum += W_fused(i, j);
        mask[static_cast<std::size_t>(j)] = (sum == 0.0) ? 1 : 0;
    }
    return mask;
}

std::vector<std::uint8_t> batch_consistent_mask(
    const std::vector<std::vector<std::uint8_t>>& per_sample) {
    if (per_sample.empty()) throw std::invalid_argument("batch_consistent_mask: empty batch");
    std::vector<std::uint8_t> final_mask(per_sample.front().size(), 0);
    for (const auto& m : per_sample) {
        if (m.size() != final_mask.size()) {
            throw std::invalid_argument("batch_consistent_mask: ragged masks");
        }
        for (std::size_t j = 0; j < m.size(); ++j) final_mask[j] |= m[j];
    }
    return final_mask;
}

void correct_fusion(Matrix& W_fused, const std::vector<std::uint8_t>& mask_final) {
    if (static_cast<index_t>(mask_final.size()) != W_fused.cols) {
        throw std::invalid_argument("correct_fusion: mask length != column count");
    }
    for (index_t j = 0; j < W_fused.cols; ++j) {
        if (!mask_final[static_cast<std::size_t>(j)]) continue;
        for (index_t i = 0; i < W_fused.rows; ++i) W_fused(i, j) = 0.0;
    }
}

void causal_mask(Matrix& W_fused, const PartitionPlan& plan) {
    if (plan.style != PartitionStyle::causal) {
        throw std::invalid_argument("causal_mask: plan style must be causal");
    }
    if (W_fused.rows != plan.M() || W_fused.cols != plan.N()) {
        throw std::invalid_argument("causal_mask: weight shape does not match plan");
    }
    for (index_t j = 0; j < W_fused.cols; ++j) {
        bool changed = false;
        double sum = 0.0;
        for (index_t i = 0; i < W_fused.rows; ++i) {
            if (plan.src_index[static_cast<std::size_t>(j)] >
                plan.dst_index[static_cast<std::size_t>(i)]) {
                if (W_fused(i, j) != 0.0) changed = true;
                W_fused(i, j) = 0.0;
            } else {
                sum += W_fused(i, j);
            }
        }
        // Keep surviving columns stochastic; untouched ones stay bit-exact.
        if (changed && sum > 0.0) {
            for (index_t i = 0; i < W_fused.rows; ++i) W_fused(i, j) /= sum;
        }
    }
}

AggregateResult aggregate(const Matrix& x_dst, const Matrix& x_src, const Matrix& W_fused) {
    const index_t M = x_dst.rows, N = x_src.rows, d = x_dst.cols;
    if (W_fused.rows != M || W_fused.cols != N || x_src.cols != d) {
        throw std::invalid_argument("aggregate: shape mismatch");
    }
    AggregateResult out;
    out.fused = Matrix(M, d);
    out.R.assign(static_cast<std::size_t>(M), 1.0);
    for (index_t i = 0; i < M; ++i) {
        double wsum = 0.0;
        for (index_t j = 0; j < N; ++j) wsum += W_fused(i, j);
        const double R = 1.0 + wsum;
        out.R[static_cast<std::size_t>(i)] = R;
        for (index_t k = 0; k < d; ++k) {
            double acc = x_dst(i, k);
            for (index_t j = 0; j < N; ++j) acc += W_fused(i, j) * x_src(j, k);
            out.fused(i, k) = acc / R;
        }
    }
    return out;
}

namespace {

Matrix sample_matrix(const Slab& s, index_t b) {
    Matrix m(s.rows, s.dim);
    std::copy_n(s.data.data() + b * s.rows * s.dim, s.rows * s.dim, m.v.data());
    return m;
}

}  // namespace

FusionComputation compute_fusion(const SplitTokens& parts, const PartitionPlan& plan,
                                 const MergeConfig& cfg, MergeStats* stats,
                                 const SplitTokens* metric_parts) {
    if (cfg.causal && plan.style != PartitionStyle::causal) {
        throw std::invalid_argument("compute_fusion: causal merging needs a causal plan");
    }
    if (!(cfg.epsilon > 0.0)) {
        throw std::invalid_argument("compute_fusion: epsilon must be > 0");
    }
    const SplitTokens& metric = metric_parts ? *metric_parts : parts;
    const index_t B = parts.dst.batch;
    const index_t M = plan.M();
    const index_t N = plan.N();

    FusionComputation fc;
    fc.batch = B;
    fc.M = M;
    fc.N = N;
    fc.samples.resize(static_cast<std::size_t>(B));

    std::vector<std::vector<std::uint8_t>> masks;
    masks.reserve(static_cast<std::size_t>(B));
    for (index_t b = 0; b < B; ++b) {
        SampleFusion& sf = fc.samples[static_cast<std::size_t>(b)];
        const Matrix x_dst = sample_matrix(metric.dst, b);
        const Matrix x_src = sample_matrix(metric.src, b);
        sf.S = similarity_matrix(x_dst, x_src, cfg);
        if (stats) stats->sim_flops += 2 * M * N * metric.dst.dim;
        sf.S_sparse = sparsify(sf.S, cfg.tau);
        sf.W = column_normalize(sf.S_sparse, cfg.epsilon);
        RefineResult rr = refine_weights(sf.W, cfg);
        if (stats) stats->refine_flops += (cfg.refine ? 8 : 2) * M * N;
        sf.C = std::move(rr.C);
        sf.zeta = std::move(rr.zeta);
        sf.W_pruned = std::move(rr.W_pruned);
        sf.W_fused = std::move(rr.W_fused);
        if (cfg.causal) causal_mask(sf.W_fused, plan);
        sf.mask = preservation_mask(sf.W_fused);
        if (stats) stats->preserve_flops += M * N;
        masks.push_back(sf.mask);
    }

    fc.mask_final = batch_consistent_mask(masks);
    for (index_t b = 0; b < B; ++b) {
        correct_fusion(fc.samples[static_cast<std::size_t>(b)].W_fused, fc.mask_final);
    }
    return fc;
}

namespace {

MergedSequence merge_impl(const TokenMatrix& t, const TokenMatrix* metric,
                          const PartitionPlan& plan, const MergeConfig& cfg) {
    t.validate();
    if (metric) {
        metric->validate();
        if (metric->batch != t.batch || metric->length != t.length ||
            metric->l_spec != t.l_spec) {
            throw std::invalid_argument("merge: metric tensor must match tokens on B, L, l_spec");
        }
    }

    MergedSequence out;
    const SplitTokens parts = partition::split(t, plan);
    SplitTokens metric_parts;
    if (metric) metric_parts = partition::split(*metric, plan);

    FusionComputation fc = compute_fusion(parts, plan, cfg, &out.stats,
                                          metric ? &metric_parts : nullptr);
    const index_t B = t.batch, M = fc.M, N = fc.N, d = t.dim;

    FusionState& st = out.state;
    st.batch = B;
    st.M = M;
    st.N = N;
    st.l_spec = t.l_spec;
    st.dst_index = plan.dst_index;
    st.src_index = plan.src_index;
    st.preserved_mask = fc.mask_final;
    st.weights.assign(static_cast<std::size_t>(B * M * N), 0.0);
    st.row_scale.assign(static_cast<std::size_t>(B * M), 1.0);

    const index_t r = st.preserved_count();
    const bool nothing_merged = (r == N);

    const index_t L_prime = t.l_spec + M + r;
    out.tokens = TokenMatrix(B, L_prime, d, t.l_spec);

    for (index_t b = 0; b < B; ++b) {
        const SampleFusion& sf = fc.samples[static_cast<std::size_t>(b)];
        for (index_t i = 0; i < M; ++i) {
            for (index_t j = 0; j < N; ++j) {
                st.weight(b, i, j) = sf.W_fused(i, j);
            }
        }

        for (index_t s = 0; s < t.l_spec; ++s) {
            std::copy_n(parts.specials.row(b, s).data(), d, out.tokens.row(b, s).data());
        }

        if (nothing_merged) {
            // Preserving every source keeps destinations untouched (R_i = 1);
            // the dense aggregation is skipped entirely.
            for (index_t i = 0; i < M; ++i) {
                std::copy_n(parts.dst.row(b, i).data(), d,
                            out.tokens.row(b, t.l_spec + i).data());
            }
        } else {
            const Matrix x_dst = sample_matrix(parts.dst, b);
            const Matrix x_src = sample_matrix(parts.src, b);
            AggregateResult agg = aggregate(x_dst, x_src, sf.W_fused);
            out.stats.aggregate_flops += 2 * M * N * d;
            out.stats.normalize_flops += M * N + M * d;
            for (index_t i = 0; i < M; ++i) {
                std::copy_n(agg.fused.row(i).data(), d, out.tokens.row(b, t.l_spec + i).data());
                st.row_scale[static_cast<std::size_t>(b * M + i)] =
                    agg.R[static_cast<std::size_t>(i)];
            }
        }

        index_t slot = t.l_spec + M;
        for (index_t j = 0; j < N; ++j) {
            if (!fc.mask_final[static_cast<std::size_t>(j)]) continue;
            std::copy_n(parts.src.row(b, j).data(), d, out.tokens.row(b, slot).data());
            ++slot;
        }
    }

    st.layout_order.clear();
    st.layout_order.reserve(static_cast<std::size_t>(L_prime));
    for (index_t p = 0; p < t.l_spec; ++p) st.layout_order.push_back(p);
    for (index_t i = 0; i < M; ++i) st.layout_order.push_back(plan.dst_index[static_cast<std::size_t>(i)]);
    for (index_t j = 0; j < N; ++j) {
        if (fc.mask_final[static_cast<std::size_t>(j)]) {
            st.layout_order.push_back(plan.src_index[static_cast<std::size_t>(j)]);
        }
    }
    return out;
}

}  // namespace

MergedSequence merge(const TokenMatrix& t, const PartitionPlan& plan, const MergeConfig& cfg) {
    return merge_impl(t, nullptr, plan, cfg);
}

MergedSequence merge(const TokenMatrix& t, const TokenMatrix& metric,
                     const PartitionPlan& plan, const MergeConfig& cfg) {
    return merge_impl(t, &metric, plan, cfg);
}

Similarity similarity_from_name(const std::string& name) {
    if (name == "cosine") return Similarity::cosine;
    if (name == "euclidean") return Similarity::euclidean;
    if (name == "dot") return Similarity::dot;
    if (name == "softmax") return Similarity::softmax;
    throw std::invalid_argument("unknown similarity function '" + name + "'");
}

const char* similarity_name(Similarity s) {
    switch (s) {
        case Similarity::cosine: return "cosine";
        case Similarity::euclidean: return "euclidean";
        case Similarity::dot: return "dot";
        case Similarity::softmax: return "softmax";
    }
    return "?";
}

}  // namespace mame
}  // namespace mamere
