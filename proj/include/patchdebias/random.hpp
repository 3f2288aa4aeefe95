#pragma once

// Portable random streams. std::mt19937_64's output sequence is fixed by the
// standard but the <random> distributions are not, so every draw that must
// be reproducible across toolchains goes through these helpers instead.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace patchdebias {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Derives an independent stream from several integers (seed, stream tag,
    // epoch, step ...).
    Rng(std::initializer_list<std::uint64_t> key) {
        const Words words = expand(key);
        std::seed_seq seq(words.begin(), words.end());
        engine_.seed(seq);
    }

    std::uint64_t next() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller (one value per call, the pair's second
    // half is discarded to keep the stream stateless).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    struct Words {
        std::uint32_t data[16];
        std::size_t n = 0;
        const std::uint32_t* begin() const { return data; }
        const std::uint32_t* end() const { return data + n; }
    };

    static Words expand(std::initializer_list<std::uint64_t> key) {
        Words w{};
        for (std::uint64_t k : key) {
            if (w.n + 2 > 16) {
                break;
            }
            w.data[w.n++] = static_cast<std::uint32_t>(k & 0xFFFFFFFFu);
            w.data[w.n++] = static_cast<std::uint32_t>(k >> 32);
        }
        return w;
    }

    std::mt19937_64 engine_;
};

}  // namespace patchdebias
