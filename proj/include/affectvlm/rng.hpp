#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>

namespace avlm {

// SplitMix64 finalizer. Every random decision in the library is derived
// from this function so that results are identical across platforms and
// standard library implementations.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Counter-based hash of an arbitrary key tuple.
constexpr std::uint64_t hash_keys(std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = 0x6A09E667F3BCC908ULL;
    for (auto k : keys) h = mix64(h ^ mix64(k));
    return h;
}

// 53-bit uniform in [0, 1).
constexpr double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Sequential stream over a counter: the n-th draw is mix64(key + n).
class Rng {
public:
    explicit constexpr Rng(std::uint64_t key) noexcept : key_(mix64(key)) {}
    Rng(std::initializer_list<std::uint64_t> keys) noexcept : key_(hash_keys(keys)) {}

    constexpr std::uint64_t next() noexcept { return mix64(key_ + 0x632BE59BD9B4E019ULL * ++counter_); }

    constexpr double uniform() noexcept { return to_unit(next()); }
    constexpr double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) by rejection.
    constexpr std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t r = next();
        while (r >= limit) r = next();
        return r % n;
    }

    template <class T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace avlm
