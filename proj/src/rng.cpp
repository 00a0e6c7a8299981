#include "rowflow/rng.hpp"

#include <cmath>

namespace rowflow {

namespace {

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

double Rng::next_normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // u1 in (0,1] so the log is finite.
    double u1 = 1.0 - next_unit();
    double u2 = next_unit();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
}

std::uint64_t Rng::derive(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = 0xCBF29CE484222325ULL; // FNV-1a offset basis
    for (char ch : label) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001B3ULL;
    }
    return mix64(mix64(seed + 0x9E3779B97F4A7C15ULL) ^ h);
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = mix64(seed + 0x9E3779B97F4A7C15ULL);
    h = mix64(h ^ mix64(a + 0xD1B54A32D192ED03ULL));
    h = mix64(h ^ mix64(b + 0x8CB92BA72F3D8DD7ULL));
    h = mix64(h ^ mix64(c + 0xABCC5167CCAD925FULL));
    return h;
}

} // namespace rowflow
