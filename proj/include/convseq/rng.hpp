#pragma once

#include <cstdint>
#include <cmath>

namespace convseq {

// Counter-free splitmix64 stream. Identical seeds give identical streams on
// every platform; no libstdc++ distribution objects are involved.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed + 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        return lo + next_u64() % (hi - lo + 1);
    }

    // Box-Muller; one fresh pair per call keeps the stream position predictable.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Independent substream derived from (this seed, index).
    Rng stream(std::uint64_t index) const {
        Rng r(state_ ^ (0x9e3779b97f4a7c15ull * (index + 1)));
        r.next_u64();
        return r;
    }

private:
    std::uint64_t state_;
};

}  // namespace convseq
