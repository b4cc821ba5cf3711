#pragma once

#include <cstdint>
#include <utility>

namespace mmfuse::rng {

// splitmix64: used only to expand a user seed into stream state.
struct SplitMix64 {
    std::uint64_t state;

    explicit SplitMix64(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
};

// xoshiro256++ seeded via splitmix64. All randomness in the engine flows
// through this generator so datasets and training runs are bit-reproducible
// across platforms and implementations.
class Xoshiro256pp {
public:
    explicit Xoshiro256pp(std::uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& w : s_) w = sm.next();
        has_cached_normal_ = false;
        cached_normal_ = 0.0;
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Integer in [0, n). Modulo bias is below 2^-52 for the n used here.
    std::uint64_t next_below(std::uint64_t n) {
        return next() % n;
    }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double normal();

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
    bool has_cached_normal_;
    double cached_normal_;
};

// Derives an independent stream seed from a base seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// In-place Fisher-Yates shuffle of indices [0, n); T must be swappable.
template <typename Container>
void shuffle(Container& items, Xoshiro256pp& gen) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(gen.next_below(i + 1));
        std::swap(items[i], items[j]);
    }
}

} // namespace mmfuse::rng
