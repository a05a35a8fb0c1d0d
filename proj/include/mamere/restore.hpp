#pragma once

#include "mamere/merge.hpp"
#include "mamere/tensor.hpp"

namespace mamere {
namespace mare {

struct MergedParts {
    Slab specials;  // B x l_spec x d
    Slab dst;       // B x M x d, the stored y_i
    Slab preserved; // B x r x d
};

// Slices a merged sequence by the recorded layout. Throws StateError when
// the state and tensor disagree on L'.
MergedParts split_merged(const MergedSequence& m);

// The merged sequence already stores y_i = x'_i / R_i, so the destination
// estimate is y_i itself; R is kept for callers that work on unnormalized
// aggregates.
Matrix reconstruct_dst(const Matrix& y_dst, const std::vector<double>& R);

// Preserved sources come back verbatim from the preserved slab; merged ones
// as sum_i W^F_ij y_i, a convex combination of the destinations they joined.
Matrix reconstruct_src(const Matrix& W_fused, const Matrix& x_dst_rec,
                       const std::vector<std::uint8_t>& mask_final,
                       const Matrix& x_pres);

// Full restoration: split, reconstruct, then scatter every token back to its
// original position via the recorded layout. Specials pass through untouched.
TokenMatrix restore(const MergedSequence& m);

// Restoration from persisted pieces (merged .mamt + fusion-state file).
TokenMatrix restore(const TokenMatrix& merged_tokens, const FusionStateFile& state);

}  // namespace mare
}  // namespace mamere
