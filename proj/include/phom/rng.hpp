#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace phom {

/// Philox4x32-10 counter-based block cipher (Salmon et al., Random123).
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter apply(Counter ctr, Key key) {
        for (int r = 0; r < 10; ++r) {
            if (r > 0) {
                key[0] += 0x9E3779B9u;
                key[1] += 0xBB67AE85u;
            }
            const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
                   static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
                   static_cast<std::uint32_t>(p0)};
        }
        return ctr;
    }
};

/// Independent lanes of one path stream. Gaussian increments and bridge
/// uniforms draw from different lanes so switching the exit rule does not
/// perturb the driving noise.
enum class Lane : std::uint32_t { Gaussian = 0, Uniform = 1, Design = 2 };

/// Reproducible random stream addressed by (seed, stream index, lane).
/// Draw k of a stream is a pure function of those three values and k.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream, Lane lane = Lane::Gaussian)
        : key_{static_cast<std::uint32_t>(seed),
               static_cast<std::uint32_t>(seed >> 32) ^
                   (static_cast<std::uint32_t>(lane) * 0x85EBCA6Bu)},
          stream_(stream) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() {
        if (buffered_ == 0) refill();
        const std::uint64_t bits = words_[--buffered_];
        return static_cast<double>(bits >> 11) * 0x1.0p-53;
    }

    /// Uniform on (0, 1].
    double uniform_open0() { return 1.0 - uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open0();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    std::uint64_t blocks_used() const { return block_; }

private:
    void refill() {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_),
                                      static_cast<std::uint32_t>(block_ >> 32),
                                      static_cast<std::uint32_t>(stream_),
                                      static_cast<std::uint32_t>(stream_ >> 32)};
        const auto out = Philox4x32::apply(ctr, key_);
        ++block_;
        // consumed back to front
        words_[1] = (std::uint64_t{out[0]} << 32) | out[1];
        words_[0] = (std::uint64_t{out[2]} << 32) | out[3];
        buffered_ = 2;
    }

    Philox4x32::Key key_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    std::array<std::uint64_t, 2> words_{};
    int buffered_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Derives a child seed for an independent experiment component.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace phom
