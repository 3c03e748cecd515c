#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace spoilcal {

// Portable seeded generator. The engine is std::mt19937_64, whose output
// sequence is fixed by the C++ standard; the distributions below are written
// out here because the std:: distributions are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Independent stream keyed by a seed plus integer tags (date, band, ...).
    static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

    std::uint64_t next_u64() { return engine_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, bound), unbiased by rejection.
    std::uint64_t below(std::uint64_t bound);

    // Standard normal via the Marsaglia polar method (one value per call).
    double normal();

private:
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

} // namespace spoilcal
