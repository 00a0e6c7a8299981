#pragma once

#include <cstdint>
#include <string_view>

namespace rowflow {

/* Deterministic 64-bit generator (SplitMix64).
 *
 * Recurrence, fixed for all platforms:
 *   state  <- state + 0x9E3779B97F4A7C15
 *   z      <- state
 *   z      <- (z xor (z >> 30)) * 0xBF58476D1CE4E5B9
 *   z      <- (z xor (z >> 27)) * 0x94D049BB133111EB
 *   output <- z xor (z >> 31)
 *
 * The same seed yields the same stream everywhere; unit tests freeze a few
 * outputs to make accidental changes loud. Uniform doubles take the top 53
 * bits, normals come from Box-Muller on consecutive uniforms.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /* Uniform in [0, 1), 53-bit resolution. */
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /* Standard normal via Box-Muller; consumes two uniforms per pair. */
    double next_normal();

    /* Label-derived subseed so independent streams (init, shuffle, per-layer
     * pruning, ...) never share state. FNV-1a over the label folded into a
     * SplitMix64 scramble of the base seed. */
    static std::uint64_t derive(std::uint64_t seed, std::string_view label);

    /* Numeric variant for per-row / per-sample substreams. */
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                std::uint64_t c = 0);

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace rowflow
