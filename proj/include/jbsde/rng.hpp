#pragma once

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <numbers>

namespace jbsde {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Hash-combine used for counter-based seed derivation: results depend only on
/// (master, ids...), never on draw order elsewhere, so parallel callers get
/// independent streams regardless of thread count.
inline uint64_t seed_mix(uint64_t master, uint64_t id) {
    uint64_t s = master ^ (0x9e3779b97f4a7c15ull + (id << 6) + (id >> 2) + id * 0xd1342543de82ef95ull);
    return splitmix64(s);
}

/// xoshiro256++ with splitmix64 seeding. Self-contained so draws are
/// bit-identical across platforms and standard-library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    static Rng child(uint64_t master, std::initializer_list<uint64_t> ids) {
        uint64_t s = master;
        for (uint64_t id : ids) s = seed_mix(s, id);
        return Rng(s);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform on [0,1) with 53 random bits.
    double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on (0,1], safe as a log argument.
    double u01_open() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * u01(); }

    /// Standard normal via Box-Muller. Two uniforms per draw, no cached spare,
    /// so the stream position is a pure function of the call count.
    double normal() {
        const double u1 = u01_open();
        const double u2 = u01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Poisson by inversion; chunked so the product never underflows.
    int poisson(double mean) {
        int total = 0;
        while (mean > 30.0) {
            total += poisson_small(30.0);
            mean -= 30.0;
        }
        if (mean > 0.0) total += poisson_small(mean);
        return total;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    int poisson_small(double mean) {
        const double l = std::exp(-mean);
        int k = 0;
        double p = u01_open();
        while (p > l) {
            ++k;
            p *= u01_open();
        }
        return k;
    }

    uint64_t s_[4];
};

}  // namespace jbsde
