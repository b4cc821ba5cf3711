#include "mmfuse/rng.hpp"

#include <cmath>
#include <numbers>

namespace mmfuse::rng {

double Xoshiro256pp::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = next_double();
    const double u2 = next_double();
    if (u1 == 0.0) u1 = 0x1.0p-53; // log(0) guard; probability 2^-53
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(phi);
    has_cached_normal_ = true;
    return r * std::cos(phi);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    SplitMix64 tag(stream);
    SplitMix64 sm(base ^ tag.next());
    return sm.next();
}

} // namespace mmfuse::rng
