#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mamere/tensor.hpp"

namespace mamere {

enum class PartitionStyle { alternating, sequential, random, causal };

// Disjoint destination/source split of the non-special positions. Plans are
// batch-global: every sample of a batch uses the same index sets.
struct PartitionPlan {
    PartitionStyle style = PartitionStyle::alternating;
    std::vector<index_t> dst_index;  // ascending original positions
    std::vector<index_t> src_index;  // ascending original positions
    index_t l_spec = 0;

    index_t M() const { return static_cast<index_t>(dst_index.size()); }
    index_t N() const { return static_cast<index_t>(src_index.size()); }
    index_t length() const { return l_spec + M() + N(); }
};

struct SplitTokens {
    Slab specials;  // B x l_spec x d
    Slab dst;       // B x M x d
    Slab src;       // B x N x d
};

namespace partition {

// Splits {l_spec..L-1} into destinations and sources.
//   alternating: even non-special ordinal -> dst, odd -> src (ratio ignored).
//   sequential:  first ceil((1-ratio_src)*(L-l_spec)) positions -> dst.
//   random:      seeded shuffle, first ceil((1-ratio_src)*count) -> dst.
//   causal:      odd non-special ordinal -> dst, even -> src (ratio ignored),
//                so every source has later destinations available.
// Requires L - l_spec >= 2 so that both sets are nonempty.
PartitionPlan make_plan(index_t L, index_t l_spec, PartitionStyle style,
                        double ratio_src = 0.5, std::uint64_t seed = 0);

// Gathers rows per index set, keeping ascending original order in each part.
SplitTokens split(const TokenMatrix& t, const PartitionPlan& p);

const char* style_name(PartitionStyle s);
PartitionStyle style_from_name(const std::string& name);

}  // namespace partition
}  // namespace mamere
