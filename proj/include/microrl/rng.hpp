#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>

namespace microrl {

// Deterministic RNG used everywhere in the engine. Wraps mt19937_64 but owns
// the uniform/normal conversion so draw counts never depend on the standard
// library's distribution internals, which keeps runs reproducible and makes
// the engine state serializable as plain text.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1), 53 random bits.
    double next_double() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    // Box-Muller; always consumes exactly two uniforms (no cached spare, so
    // serialized state fully describes the stream position).
    double next_normal() {
        double u1 = 1.0 - next_double();  // (0, 1], keeps log finite
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    void save(std::ostream& os) const { os << eng_; }
    void load(std::istream& is) { is >> eng_; }

    bool operator==(const Rng& other) const { return eng_ == other.eng_; }

private:
    std::mt19937_64 eng_;
};

// SplitMix64 finalizer; good avalanche for seed derivation.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Derives an independent substream seed from a master seed and up to three
// stream coordinates (e.g. step, prompt index, completion index). Sampling
// each completion from its own substream makes rollouts independent of
// batch processing order and thread count.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ (a + 0x9E3779B97F4A7C15ull));
    h = splitmix64(h ^ (b + 0xC2B2AE3D27D4EB4Full));
    h = splitmix64(h ^ (c + 0x165667B19E3779F9ull));
    return h;
}

}  // namespace microrl
