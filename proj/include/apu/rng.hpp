// Seeded random stream with hand-rolled distributions.
//
// The standard mt19937_64 engine is bit-exact everywhere, but the standard
// <random> distributions are implementation-defined, so uniform and normal
// draws are derived here directly from engine words: identical seeds must
// replay identical noise wherever a run is reproduced.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace apu {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t raw() { return gen_(); }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on {lo, ..., hi} inclusive. Modulo bias is below 2^-57
    // for any span that fits an int.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    // Standard normal via Box-Muller; two uniforms per draw, no cached spare.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1] keeps the log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

  private:
    static constexpr double kTwoPi = 6.283185307179586476925286766559;
    std::mt19937_64 gen_;
};

}  // namespace apu
