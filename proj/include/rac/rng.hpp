#pragma once

#include <cstdint>
#include <cstddef>
#include <span>
#include <utility>

namespace rac {

/// SplitMix64. The whole state is one word, so it persists trivially and
/// produces identical streams on every platform (unlike std distributions).
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

    std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in (0, 1].
    double uniform_open_closed() noexcept {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Unbiased integer in [0, bound) by rejection; bound must be > 0.
    std::uint64_t below(std::uint64_t bound) noexcept {
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return r % bound;
        }
    }

    bool coin() noexcept { return (next() >> 63) != 0; }

    std::uint64_t state() const noexcept { return state_; }
    void set_state(std::uint64_t state) noexcept { state_ = state; }

private:
    std::uint64_t state_;
};

/// Fisher-Yates with SplitMix64 so shuffles are reproducible across standard libraries.
template <typename T>
void seeded_shuffle(std::span<T> items, std::uint64_t seed) {
    SplitMix64 rng(seed);
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

}  // namespace rac
