#pragma once

#include <cstdint>
#include <vector>

namespace crab {

// Deterministic xorshift64* stream. Every piece of randomness in the library
// flows through this generator so runs are bit-reproducible across platforms
// and independent of any runtime's default engine.
//
// Seed scrambling (splitmix64 step):
//   s += 0x9E3779B97F4A7C15
//   s = (s ^ (s >> 30)) * 0xBF58476D1CE4E5B9
//   s = (s ^ (s >> 27)) * 0x94D049BB133111EB
//   s ^= s >> 31
// State update (xorshift64*):
//   x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27;  output = x * 0x2545F4914F6CDD1D
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(scramble(seed)) {}

    static std::uint64_t scramble(std::uint64_t s) {
        s += 0x9E3779B97F4A7C15ULL;
        s = (s ^ (s >> 30)) * 0xBF58476D1CE4E5B9ULL;
        s = (s ^ (s >> 27)) * 0x94D049BB133111EBULL;
        s ^= s >> 31;
        return s != 0 ? s : 0x9E3779B97F4A7C15ULL;  // xorshift state must be nonzero
    }

    // Derives an independent stream from a base seed and a salt (epoch index,
    // sub-component id, ...). Pure function of its arguments.
    static std::uint64_t derive(std::uint64_t base, std::uint64_t salt) {
        return scramble(base ^ (salt * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL));
    }

    std::uint64_t next() {
        state_ ^= state_ >> 12;
        state_ ^= state_ << 25;
        state_ ^= state_ >> 27;
        return state_ * 0x2545F4914F6CDD1DULL;
    }

    // Uniform integer in [0, n). Plain modulo; the bias is irrelevant at the
    // corpus sizes involved and keeps the update rule trivially documentable.
    std::uint64_t below(std::uint64_t n) { return next() % n; }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Fisher-Yates, descending index, j = below(i + 1).
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace crab
