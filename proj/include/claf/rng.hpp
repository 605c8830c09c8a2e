#pragma once

#include <cstdint>
#include <initializer_list>

namespace claf {

// Deterministic random stream (splitmix64). Streams are derived, not shared:
// fork(k) yields an independent stream keyed on (root seed, k), so the result
// of a forked draw never depends on how many draws the parent has made.
// Uniform doubles are built from the top 53 bits, identical on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // multiply-shift; bias is negligible for the n used here (< 2^32)
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

    Rng fork(std::uint64_t k) const { return Rng(mix(seed_, k)); }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
        std::uint64_t h = 0x51afd7ed558ccd6dULL;
        for (std::uint64_t p : parts) h = mix(h, p);
        return h;
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
};

}  // namespace claf
