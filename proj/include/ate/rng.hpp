#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ate {

// Deterministic random source. std::mt19937_64 is bit-exact by the standard;
// the distributions below are hand-rolled because the std:: distribution
// classes are implementation-defined and would break cross-platform
// reproducibility of checkpoints and logs.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit mantissa.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n); n == 0 returns 0.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) return 0;
        // Multiply-shift; bias is < 2^-64 per draw, irrelevant at our scales
        // but still deterministic.
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(engine_()) * n) >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Marsaglia polar method, fixed consumption order.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// splitmix64 finalizer; used to derive independent child seeds.
inline uint64_t mix_seed(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = mix_seed(base ^ 0x6c62272e07bb0142ull);
    s = mix_seed(s ^ a);
    s = mix_seed(s ^ b);
    return mix_seed(s ^ c);
}

} // namespace ate
