#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace ladder {

// All randomness in the engine flows from a single run seed through the
// derivation helpers below. SplitMix64 (Steele, Lea, Flood 2014) is the
// generator: pure 64-bit integer arithmetic, so streams are identical on
// every platform. Never use std::shuffle or <random> distributions here;
// their outputs are implementation defined.

inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Order-sensitive combine, one mix round per component. String parts enter
// through their fnv1a hash, integer parts as-is.
inline uint64_t derive_seed(uint64_t seed) { return mix64(seed + 0x9e3779b97f4a7c15ULL); }

template <typename First, typename... Rest>
inline uint64_t derive_seed(uint64_t seed, const First& part, Rest&&... rest) {
    uint64_t bits;
    if constexpr (std::is_convertible_v<const First&, std::string_view>)
        bits = fnv1a64(std::string_view(part));
    else
        bits = static_cast<uint64_t>(part);
    return derive_seed(mix64(seed ^ (bits + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2))),
                       std::forward<Rest>(rest)...);
}

class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n). Lemire's multiply-shift with rejection.
    uint64_t below(uint64_t n) {
        unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
        auto lo = static_cast<uint64_t>(m);
        if (lo < n) {
            uint64_t t = (0 - n) % n;
            while (lo < t) {
                m = static_cast<unsigned __int128>(next()) * n;
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

  private:
    uint64_t state_;
};

// Fisher-Yates, descending, driven by Rng::below so results are stable
// across platforms.
template <typename T>
inline void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace ladder
