#include "mamere/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mamere/rng.hpp"

namespace mamere {
namespace partition {

PartitionPlan make_plan(index_t L, index_t l_spec, PartitionStyle style,
                        double ratio_src, std::uint64_t seed) {
    if (l_spec < 0 || L - l_spec < 2) {
        throw std::invalid_argument("make_plan: nothing to partition, need L - l_spec >= 2");
    }
    const index_t count = L - l_spec;

    PartitionPlan p;
    p.style = style;
    p.l_spec = l_spec;

    switch (style) {
        case PartitionStyle::alternating:
            for (index_t o = 0; o < count; ++o) {
                (o % 2 == 0 ? p.dst_index : p.src_index).push_back(l_spec + o);
            }
            break;
        case PartitionStyle::causal:
            // Odd ordinals absorb, even ordinals merge forward; every source
            // then has at least one later destination.
            for (index_t o = 0; o < count; ++o) {
                (o % 2 == 1 ? p.dst_index : p.src_index).push_back(l_spec + o);
            }
            break;
        case PartitionStyle::sequential: {
            if (!(ratio_src > 0.0 && ratio_src < 1.0)) {
                throw std::invalid_argument("make_plan: ratio_src must lie in (0, 1)");
            }
            const index_t m = static_cast<index_t>(
                std::ceil((1.0 - ratio_src) * static_cast<double>(count)));
            const index_t m_clamped = std::clamp<index_t>(m, 1, count - 1);
            for (index_t o = 0; o < count; ++o) {
                (o < m_clamped ? p.dst_index : p.src_index).push_back(l_spec + o);
            }
            break;
        }
        case PartitionStyle::random: {
            if (!(ratio_src > 0.0 && ratio_src < 1.0)) {
                throw std::invalid_argument("make_plan: ratio_src must lie in (0, 1)");
            }
            std::vector<index_t> pos(static_cast<std::size_t>(count));
            std::iota(pos.begin(), pos.end(), l_spec);
            SplitMix64 rng(seed);
            for (index_t i = count - 1; i > 0; --i) {
                const auto j = static_cast<index_t>(
                    rng.next_below(static_cast<std::uint64_t>(i + 1)));
                std::swap(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(j)]);
            }
            const index_t m = static_cast<index_t>(
                std::ceil((1.0 - ratio_src) * static_cast<double>(count)));
            const index_t m_clamped = std::clamp<index_t>(m, 1, count - 1);
            p.dst_index.assign(pos.begin(), pos.begin() + m_clamped);
            p.src_index.assign(pos.begin() + m_clamped, pos.end());
            std::sort(p.dst_index.begin(), p.dst_index.end());
            std::sort(p.src_index.begin(), p.src_index.end());
            break;
        }
    }
    return p;
}

SplitTokens split(const TokenMatrix& t, const PartitionPlan& p) {
    if (p.length() != t.length || p.l_spec != t.l_spec) {
        throw std::invalid_argument("split: plan was built for L=" + std::to_string(p.length()) +
                                    ", l_spec=" + std::to_string(p.l_spec) +
                                    " but tensor has L=" + std::to_string(t.length) +
                                    ", l_spec=" + std::to_string(t.l_spec));
    }
    SplitTokens out;
    out.specials = Slab(t.batch, t.l_spec, t.dim);
    out.dst = Slab(t.batch, p.M(), t.dim);
    out.src = Slab(t.batch, p.N(), t.dim);
    for (index_t b = 0; b < t.batch; ++b) {
        for (index_t s = 0; s < t.l_spec; ++s) {
            std::copy_n(t.row(b, s).data(), t.dim, out.specials.row(b, s).data());
        }
        for (index_t i = 0; i < p.M(); ++i) {
            std::copy_n(t.row(b, p.dst_index[static_cast<std::size_t>(i)]).data(), t.dim,
                        out.dst.row(b, i).data());
        }
        for (index_t j = 0; j < p.N(); ++j) {
            std::copy_n(t.row(b, p.src_index[static_cast<std::size_t>(j)]).data(), t.dim,
                        out.src.row(b, j).data());
        }
    }
    return out;
}

const char* style_name(PartitionStyle s) {
    switch (s) {
        case PartitionStyle::alternating: return "alternating";
        case PartitionStyle::sequential: return "sequential";
        case PartitionStyle::random: return "random";
        case PartitionStyle::causal: return "causal";
    }
    return "?";
}

PartitionStyle style_from_name(const std::string& name) {
    if (name == "alternating") return PartitionStyle::alternating;
    if (name == "sequential") return PartitionStyle::sequential;
    if (name == "random") return PartitionStyle::random;
    if (name == "causal") return PartitionStyle::causal;
    throw std::invalid_argument("unknown partition style '" + name + "'");
}

}  // namespace partition
}  // namespace mamere
