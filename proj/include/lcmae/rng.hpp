#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace lcmae {

// Explicit RNG state: (seed, stream) fully determines the sequence within a
// build. Parallel workers take disjoint stream ids. No global RNG anywhere.
struct RngState {
    uint64_t seed = 0;
    uint64_t stream = 0;
};

namespace detail {
inline uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace detail

// xoshiro256++ seeded from (seed, stream) through splitmix64.
class Rng {
public:
    explicit Rng(RngState st) {
        uint64_t x = st.seed ^ (st.stream * 0x9e3779b97f4a7c15ULL + 0x6a09e667f3bcc909ULL);
        for (auto& w : s_) w = detail::splitmix64(x);
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
    }
    explicit Rng(uint64_t seed, uint64_t stream = 0) : Rng(RngState{seed, stream}) {}

    uint64_t next_u64() {
        const uint64_t result = rotl_(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl_(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n), n >= 1; Lemire multiply-shift with rejection
    int64_t below(int64_t n) {
        const uint64_t bound = static_cast<uint64_t>(n);
        while (true) {
            const uint64_t x = next_u64();
            const __uint128_t m = static_cast<__uint128_t>(x) * bound;
            const uint64_t lo = static_cast<uint64_t>(m);
            if (lo >= bound || lo >= static_cast<uint64_t>(-static_cast<int64_t>(bound)) % bound)
                return static_cast<int64_t>(m >> 64);
        }
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename V>
    void shuffle(std::vector<V>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            const int64_t j = below(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

private:
    static uint64_t rotl_(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lcmae
