#pragma once

#include <cstdint>
#include <string_view>

namespace recserve {

// The two named generators everything deterministic is built on. Both are
// fixed bit-for-bit so traces, vectors, and interleavings replay across
// platforms and reimplementations.

constexpr std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char byte : data) {
        h ^= byte;
        h *= 0x100000001b3ull;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    std::uint64_t z = x + 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Counter-mode splitmix64 stream. next() == splitmix64 applied to an
// advancing state, the standard construction.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, bound). bound must be > 0. Rejection-free modulo is
    // acceptable here: bounds are tiny against 2^64 and the bias is far
    // below anything an interleaving sweep could notice, while keeping the
    // stream trivially portable.
    std::uint64_t below(std::uint64_t bound) { return next() % bound; }

    // Uniform in [0,1), via the same u / 2^64 mapping the trainer uses.
    double unit() { return static_cast<double>(next()) / 18446744073709551616.0; }

private:
    std::uint64_t state_;
};

} // namespace recserve
