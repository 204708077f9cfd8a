#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace edl {

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256++ (Blackman & Vigna). Cheap to seed, so every trajectory can
// own a substream derived from (seed, trajectory_id).
class Rng {
public:
    using result_type = std::uint64_t;

    Rng(std::uint64_t seed, std::uint64_t stream) noexcept {
        std::uint64_t sm = seed;
        const std::uint64_t mixed_seed = splitmix64(sm);
        std::uint64_t st = mixed_seed ^ (stream * 0xd1b54a32d192ed03ULL + 0x8bb84b93962eacc9ULL);
        for (auto& w : s_) {
            w = splitmix64(st);
        }
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
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

    // Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double exponential(double mean) noexcept { return -mean * std::log1p(-uniform()); }

    // Box-Muller, one variate per call so the draw count per event is fixed.
    double normal() noexcept {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4]{};
};

// Independent child seed for the key-th sub-run of a seeded job.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) noexcept {
    Rng r(seed, key ^ 0x6a09e667f3bcc908ULL);
    return r();
}

} // namespace edl
