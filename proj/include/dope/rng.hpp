#pragma once

#include <cstdint>

namespace dope {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// xoshiro256++ generator. All randomness in the project flows through this
/// so that results are reproducible across platforms and standard library
/// versions (std::uniform_*_distribution is implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
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

    /// Unbiased draw from [0, n). n must be > 0.
    std::uint32_t uniform_u32(std::uint32_t n) {
        const std::uint64_t threshold = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
        std::uint64_t x = next();
        while (x >= threshold) x = next();
        return static_cast<std::uint32_t>(x % n);
    }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    float uniformf(float lo, float hi) {
        return lo + (hi - lo) * static_cast<float>(uniform());
    }

    bool coin() { return (next() & 1u) != 0; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4];
};

/// Deterministic seed derivation for substreams: mixes a root seed with a
/// stream tag and indices so independent components never share a stream.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t s = root;
    std::uint64_t h = splitmix64(s);
    s ^= tag * 0x9e3779b97f4a7c15ULL;
    h ^= splitmix64(s);
    s ^= a + 0xd1b54a32d192ed03ULL;
    h ^= splitmix64(s);
    s ^= b + 0x8cb92ba72f3d8dd7ULL;
    h ^= splitmix64(s);
    return h;
}

} // namespace dope
