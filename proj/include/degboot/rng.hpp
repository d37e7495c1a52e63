#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace degboot {

/// SplitMix64 finalizer. Used for seeding and for deriving child stream keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Combine a key path into a single 64-bit seed. Order matters.
template <class... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t base, Keys... keys) noexcept {
    std::uint64_t h = mix64(base);
    ((h = mix64(h ^ mix64(static_cast<std::uint64_t>(keys) + 0x632be59bd9b4e019ull))), ...);
    return h;
}

/**
 * Splittable random stream (xoshiro256** core).
 *
 * Every stream carries an identity key fixed at construction. `split(i)`
 * derives a child stream from that key alone, so children do not depend on
 * how many values the parent has already produced. This is what makes
 * bootstrap replicate b and Monte Carlo replication i reproducible
 * regardless of scheduling.
 *
 * Normal variates use Box-Muller on the stream's own uniforms so output is
 * identical across standard library implementations.
 */
class RandomStream {
  public:
    using result_type = std::uint64_t;

    explicit RandomStream(std::uint64_t seed) : key_(mix64(seed ^ 0xd1b54a32d192ed03ull)) {
        std::uint64_t s = key_;
        for (auto& word : state_) {
            s = mix64(s);
            word = s;
        }
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~std::uint64_t{0}; }

    result_type operator()() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    [[nodiscard]] RandomStream split(std::uint64_t index) const { return RandomStream(derive_seed(key_, index)); }

    [[nodiscard]] std::uint64_t key() const noexcept { return key_; }

    /// Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
    std::uint64_t index(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        std::uint64_t x = (*this)();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                x = (*this)();
                m = static_cast<__uint128_t>(x) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(angle);
        has_spare_ = true;
        return r * std::cos(angle);
    }

  private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

    std::uint64_t key_;
    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace degboot
