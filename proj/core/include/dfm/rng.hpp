#pragma once

// Deterministic, serializable RNG: xoshiro256++ seeded through splitmix64.
// The 4-word state round-trips through checkpoints byte-exactly, which a
// std::mt19937_64 (312-word state, unspecified text format) would make
// painful. Gaussians use plain Box-Muller without a cached spare so the
// state is exactly the 4 words.

#include <array>
#include <cmath>
#include <cstdint>

namespace dfm {

class Rng {
public:
    Rng() : Rng(0x9e3779b97f4a7c15ull) {}

    explicit Rng(uint64_t seed) { reseed(seed); }

    // Independent stream for (seed, stream_index), used for per-sample RNGs.
    Rng(uint64_t seed, uint64_t stream) {
        reseed(seed ^ splitmix(stream + 0x632be59bd9b4e019ull));
    }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : state_) {
            x += 0x9e3779b97f4a7c15ull;
            w = splitmix(x);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        // Box-Muller; the sine branch is discarded to keep the state minimal.
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586477 * u2);
    }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

private:
    static uint64_t splitmix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }
    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
};

}  // namespace dfm
