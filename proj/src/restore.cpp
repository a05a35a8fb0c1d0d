#include "mamere/restore.hpp"

#include <algorithm>
#include <string>

#include "mamere/errors.hpp"

namespace mamere {
namespace mare {

MergedParts split_merged(const MergedSequence& m) {
    const FusionState& st = m.state;
    const index_t r = st.preserved_count();
    const index_t L_prime = st.l_spec + st.M + r;
    if (m.tokens.length != L_prime) {
        throw StateError("split_merged: merged length " + std::to_string(m.tokens.length) +
                         " does not match state (l_spec + M + r = " + std::to_string(L_prime) +
                         ")");
    }
    if (m.tokens.batch != st.batch) {
        throw StateError("split_merged: batch mismatch between tokens and state");
    }
    const index_t B = m.tokens.batch, d = m.tokens.dim;
    MergedParts parts;
    parts.specials = Slab(B, st.l_spec, d);
    parts.dst = Slab(B, st.M, d);
    parts.preserved = Slab(B, r, d);
    for (index_t b = 0; b < B; ++b) {
        for (index_t s = 0; s < st.l_spec; ++s) {
            std::copy_n(m.tokens.row(b, s).data(), d, parts.specials.row(b, s).data());
        }
        for (index_t i = 0; i < st.M; ++i) {
            std::copy_n(m.tokens.row(b, st.l_spec + i).data(), d, parts.dst.row(b, i).data());
        }
        for (index_t p = 0; p < r; ++p) {
            std::copy_n(m.tokens.row(b, st.l_spec + st.M + p).data(), d,
                        parts.preserved.row(b, p).data());
        }
    }
    return parts;
}

Matrix reconstruct_dst(const Matrix& y_dst, const std::vector<double>& R) {
    if (static_cast<index_t>(R.size()) != y_dst.rows) {
        throw StateError("reconstruct_dst: R length does not match destination count");
    }
    // The stored tokens are already y_i = x'_i / R_i; de-scaling happened at
    // merge time, so the best destination estimate is y_i itself.
    return y_dst;
}

Matrix reconstruct_src(const Matrix& W_fused, const Matrix& x_dst_rec,
                       const std::vector<std::uint8_t>& mask_final,
                       const Matrix& x_pres) {
    const index_t M = W_fused.rows, N = W_fused.cols, d = x_dst_rec.cols;
    if (x_dst_rec.rows != M) {
        throw StateError("reconstruct_src: destination count disagrees with weights");
    }
    const index_t r = static_cast<index_t>(
        std::count(mask_final.begin(), mask_final.end(), 1));
    if (x_pres.rows != r) {
        throw StateError("reconstruct_src: preserved token count " + std::to_string(x_pres.rows) +
                         " does not match mask (" + std::to_string(r) + ")");
    }
    Matrix out(N, d);
    index_t pres = 0;
    for (index_t j = 0; j < N; ++j) {
        if (mask_final[static_cast<std::size_t>(j)]) {
            std::copy_n(x_pres.row(pres).data(), d, out.row(j).data());
            ++pres;
            continue;
        }
        for (index_t k = 0; k < d; ++k) {
            double acc = 0.0;
            for (index_t i = 0; i < M; ++i) acc += W_fused(i, j) * x_dst_rec(i, k);
            out(j, k) = acc;
        }
    }
    return out;
}

TokenMatrix restore(const MergedSequence& m) {
    const FusionState& st = m.state;
    const MergedParts parts = split_merged(m);
    const index_t B = m.tokens.batch, d = m.tokens.dim;
    const index_t L = st.original_length();

    TokenMatrix out(B, L, d, st.l_spec);
    for (index_t b = 0; b < B; ++b) {
        Matrix w(st.M, st.N);
        for (index_t i = 0; i < st.M; ++i) {
            for (index_t j = 0; j < st.N; ++j) w(i, j) = st.weight(b, i, j);
        }
        Matrix y(st.M, d);
        for (index_t i = 0; i < st.M; ++i) {
            std::copy_n(parts.dst.row(b, i).data(), d, y.row(i).data());
        }
        std::vector<double> R(st.row_scale.begin() + b * st.M,
                              st.row_scale.begin() + (b + 1) * st.M);
        const Matrix dst_rec = reconstruct_dst(y, R);
        Matrix pres(parts.preserved.rows, d);
        for (index_t p = 0; p < parts.preserved.rows; ++p) {
            std::copy_n(parts.preserved.row(b, p).data(), d, pres.row(p).data());
        }
        const Matrix src_rec = reconstruct_src(w, dst_rec, st.preserved_mask, pres);

        // Scatter everything back to its original position; each index is
        // written exactly once.
        for (index_t s = 0; s < st.l_spec; ++s) {
            std::copy_n(parts.specials.row(b, s).data(), d, out.row(b, s).data());
        }
        for (index_t i = 0; i < st.M; ++i) {
            std::copy_n(dst_rec.row(i).data(), d,
                        out.row(b, st.dst_index[static_cast<std::size_t>(i)]).data());
        }
        for (index_t j = 0; j < st.N; ++j) {
            std::copy_n(src_rec.row(j).data(), d,
                        out.row(b, st.src_index[static_cast<std::size_t>(j)]).data());
        }
    }
    return out;
}

TokenMatrix restore(const TokenMatrix& merged_tokens, const FusionStateFile& state) {
    merged_tokens.validate();
    FusionState st = FusionState::from_file(state, merged_tokens.batch);
    if (merged_tokens.l_spec != st.l_spec) {
        throw StateError("restore: merged tokens and state disagree on l_spec");
    }
    MergedSequence m;
    m.tokens = merged_tokens;
    m.state = std::move(st);
    return restore(m);
}

}  // namespace mare
}  // namespace mamere
