#include "mamere/complexity.hpp"

#include <cmath>
#include <stdexcept>

#include "mamere/rng.hpp"

namespace mamere {
namespace complexity {

FlopReport flop_report(index_t L, index_t d, index_t M, index_t N, index_t L_prime) {
    if (L < 1 || d < 1 || M < 0 || N < 0 || L_prime < 0 || L_prime > L) {
        throw std::invalid_argument("flop_report: inconsistent shape parameters");
    }
    FlopReport r;
    r.L = L;
    r.d = d;
    r.alpha = static_cast<double>(M) / static_cast<double>(L);
    r.beta = static_cast<double>(L_prime) / static_cast<double>(L);
    r.sim_flops = 2 * M * N * d;
    r.aggregate_flops = 2 * M * N * d;
    r.refine_flops = 8 * M * N;
    r.preserve_flops = M * N;
    r.attention_flops_baseline = 4 * L * L * d;
    r.attention_flops_merged = 4 * L_prime * L_prime * d;
    r.efficient = efficiency_condition(r.alpha, r.beta);
    return r;
}

bool efficiency_condition(double alpha, double beta) {
    return beta < std::sqrt(alpha * alpha - alpha + 1.0);
}

double condition_integral(index_t grid) {
    if (grid < 2) throw std::invalid_argument("condition_integral: grid must be >= 2");
    index_t n = grid;
    if (n % 2 == 1) ++n;  // Simpson needs an even interval count
    const double h = 1.0 / static_cast<double>(n);
    auto f = [](double a) { return std::sqrt(a * a - a + 1.0) - a; };
    double sum = f(0.0) + f(1.0);
    for (index_t i = 1; i < n; ++i) {
        const double a = h * static_cast<double>(i);
        sum += (i % 2 == 1 ? 4.0 : 2.0) * f(a);
    }
    return sum * h / 3.0;
}

double condition_probability(index_t samples, std::uint64_t seed) {
    if (samples < 1) throw std::invalid_argument("condition_probability: samples must be >= 1");
    SplitMix64 rng(seed);
    index_t hits = 0;
    for (index_t s = 0; s < samples; ++s) {
        const double u = rng.next_unit();
        const double v = rng.next_unit();
        const double alpha = std::min(u, v);
        const double beta = std::max(u, v);
        if (efficiency_condition(alpha, beta)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples);
}

}  // namespace complexity
}  // namespace mamere
