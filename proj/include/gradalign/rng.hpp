#pragma once

#include <cstdint>
#include <cmath>
#include <span>
#include <string_view>
#include <vector>

namespace gradalign {

// splitmix64 finalizer (Steele, Lea, Flood; Vigna's fixed-increment variant).
inline std::uint64_t mix64(std::uint64_t z) {
    z += UINT64_C(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = UINT64_C(0xCBF29CE484222325);
    for (unsigned char c : s) {
        h ^= c;
        h *= UINT64_C(0x100000001B3);
    }
    return h;
}

// Counter-based stream: output i is mix64(key + i * GOLDEN), so a stream is
// fully determined by its key and position. Streams for different
// (seed, purpose, ctx_a, ctx_b) tuples are independent for all practical
// purposes, which is what makes parallel evaluation order-insensitive.
class RngStream {
public:
    RngStream() : RngStream(0) {}
    explicit RngStream(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64() {
        std::uint64_t v = mix64(key_ ^ (counter_ * UINT64_C(0x9E3779B97F4A7C15)));
        ++counter_;
        return v;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, bound). Unbiased via rejection.
    std::uint64_t next_below(std::uint64_t bound) {
        if (bound <= 1) return 0;
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    bool bernoulli(double p) { return next_double() < p; }

    // Box-Muller; the spare is kept so pairs are consumed efficiently.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        // u1 = 0 would take log(0); shift into (0, 1].
        u1 = 1.0 - u1;
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * M_PI * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    // Inverse-CDF draw from a probability vector (entries sum to ~1).
    int categorical(std::span<const double> probs) {
        const double u = next_double();
        double cum = 0.0;
        for (std::size_t a = 0; a + 1 < probs.size(); ++a) {
            cum += probs[a];
            if (u < cum) return static_cast<int>(a);
        }
        return static_cast<int>(probs.size()) - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t position() const { return counter_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Every stochastic site derives its own stream from the run seed, a purpose
// label, and up to two context words (round or step, problem id). No RNG
// state flows between sites, so any site can be replayed in isolation.
inline std::uint64_t derive_key(std::uint64_t seed, std::string_view purpose,
                                std::uint64_t ctx_a = 0, std::uint64_t ctx_b = 0) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ fnv1a64(purpose));
    h = mix64(h ^ ctx_a);
    h = mix64(h ^ ctx_b);
    return h;
}

inline RngStream derive_stream(std::uint64_t seed, std::string_view purpose,
                               std::uint64_t ctx_a = 0, std::uint64_t ctx_b = 0) {
    return RngStream(derive_key(seed, purpose, ctx_a, ctx_b));
}

} // namespace gradalign
