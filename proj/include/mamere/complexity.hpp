#pragma once

#include <cstdint>

#include "mamere/merge.hpp"

namespace mamere {

// Analytic cost model. Conventions fixed so counters can match exactly:
// multiply-add = 2 flops, attention counts only the QK^T and AV products,
// refine costs 8 elementwise ops per similarity-matrix entry.
struct FlopReport {
    index_t L = 0;
    index_t d = 0;
    double alpha = 0.0;  // M / L
    double beta = 0.0;   // L' / L
    std::int64_t sim_flops = 0;
    std::int64_t refine_flops = 0;
    std::int64_t aggregate_flops = 0;
    std::int64_t preserve_flops = 0;
    std::int64_t attention_flops_baseline = 0;
    std::int64_t attention_flops_merged = 0;
    bool efficient = false;

    std::int64_t overhead() const {
        return sim_flops + refine_flops + aggregate_flops + preserve_flops;
    }
};

namespace complexity {

FlopReport flop_report(index_t L, index_t d, index_t M, index_t N, index_t L_prime);

// beta < sqrt(alpha^2 - alpha + 1), the point where shorter attention beats
// the merge overhead.
bool efficiency_condition(double alpha, double beta);

// Simpson quadrature of the favorable-region area integral
// int_0^1 (sqrt(a^2 - a + 1) - a) da; closed form is (3/8) ln 3.
double condition_integral(index_t grid);

// Monte Carlo estimate of P(beta < bound) for (alpha, beta) uniform on the
// triangle 0 < alpha <= beta <= 1; converges to 2 * condition_integral.
double condition_probability(index_t samples, std::uint64_t seed);

}  // namespace complexity
}  // namespace mamere
