#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string_view>
#include <vector>

namespace hfx {

// 64-bit FNV-1a, used for checkpoint fingerprints and per-prompt stream keys.
inline uint64_t fnv1a64(const void* bytes, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

// Self-contained xoshiro256** generator so every artifact is reproducible
// bit-for-bit regardless of standard-library internals.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : state_) {
            word = splitmix64(x);
        }
        has_spare_ = false;
        spare_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Inclusive on both ends.
    int uniform_int(int lo, int hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Standard normal via Box-Muller with a cached spare.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = next_u64() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent stream key from a base seed and a label,
    // so per-prompt sampling is identical whether prompts run serially
    // or fanned out.
    static uint64_t stream(uint64_t seed, std::string_view label) {
        uint64_t x = seed ^ fnv1a64(label);
        return splitmix64(x);
    }

private:
    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ull;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t state_[4];
    bool has_spare_;
    double spare_;
};

}  // namespace hfx
