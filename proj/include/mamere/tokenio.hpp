#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mamere/tensor.hpp"

namespace mamere {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

// One nonzero entry of the final fusion weights: sample b, destination i,
// source j.
struct WeightTriplet {
    index_t b = 0;
    index_t i = 0;
    index_t j = 0;
    double value = 0.0;

    friend bool operator==(const WeightTriplet&, const WeightTriplet&) = default;
};

// On-disk form of a fusion state. Weights are stored as sparse triplets
// sorted by (b, i, j); preserved columns carry no triplets at all.
struct FusionStateFile {
    int version = 1;
    index_t M = 0;
    index_t N = 0;
    index_t l_spec = 0;
    std::vector<index_t> dst_index;
    std::vector<index_t> src_index;
    std::vector<std::uint8_t> preserved_mask;  // N flags, final batch-wide mask
    std::vector<WeightTriplet> weights;
    std::vector<index_t> layout_order;  // merged slot -> original position

    index_t original_length() const { return l_spec + M + N; }
    index_t preserved_count() const;

    // Checks every structural invariant; throws StateError naming the rule.
    void validate() const;

    friend bool operator==(const FusionStateFile&, const FusionStateFile&) = default;
};

namespace tokenio {

// .mamt binary format: magic "MAMT", u16 version=1, u8 dtype (0=f32, 1=f64),
// u8 zero, u32 B, u32 L, u32 d, u32 l_spec, then B*L*d values, everything
// little-endian and row-major. 24-byte header.
void write_tokens(const TokenMatrix& t, const std::string& path, Dtype dtype = Dtype::f64);
TokenMatrix read_tokens(const std::string& path);

// Dtype code stored in the file header (f32 writes are lossy; reads widen).
Dtype read_dtype(const std::string& path);

void write_fusion_state(const FusionStateFile& s, const std::string& path);
FusionStateFile read_fusion_state(const std::string& path);

enum class Pattern { gaussian, clustered };

struct GenSpec {
    Pattern pattern = Pattern::gaussian;
    index_t clusters = 1;      // clustered only; k <= L
    double noise_scale = 0.0;  // clustered only
};

// Deterministic synthetic tokens from the splitmix64 + Box-Muller stream.
// gaussian: i.i.d. standard normals. clustered: k random unit centers, each
// non-special token assigned round-robin to a center plus noise_scale * N(0,1)
// per coordinate; special tokens are plain normals.
TokenMatrix gen_synthetic(index_t B, index_t L, index_t d, index_t l_spec,
                          std::uint64_t seed, const GenSpec& spec);

}  // namespace tokenio
}  // namespace mamere
