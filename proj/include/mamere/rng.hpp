#pragma once

#include <cmath>
#include <cstdint>

namespace mamere {

// Fixed-increment splitmix64 (Vigna's public-domain stream). Every random
// draw in this project goes through this generator so that a (seed, shape)
// pair reproduces the same values on any platform.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += UINT64_C(0x9E3779B97F4A7C15));
        z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
        return z ^ (z >> 31);
    }

    // Uniform double in (0, 1]; never returns 0 so it is safe under log().
    double next_unit() {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }

    // Uniform double in [0, 1).
    double next_unit_open() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Uniform index in [0, bound). bound must be nonzero.
    std::uint64_t next_below(std::uint64_t bound) { return next() % bound; }

private:
    std::uint64_t state_;
};

// Standard normals via Box-Muller on the splitmix64 stream. Draws come in
// pairs; the second value is cached so consumption order is well defined.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : rng_(seed) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = rng_.next_unit();
        const double u2 = rng_.next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    SplitMix64& raw() { return rng_; }

private:
    SplitMix64 rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mamere
