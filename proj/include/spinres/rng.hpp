#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace spinres {

// Counter-based random stream.  Each draw hashes (seed, stream, counter)
// with splitmix64, so streams indexed by (seed, module-name, index) are
// reproducible regardless of thread count or evaluation order.
class Rng {
public:
    Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0)
        : state_(mix(mix(mix(seed) ^ fnv1a(stream)) ^ index)), counter_(0) {}

    std::uint64_t next_u64() { return mix(state_ + kGamma * ++counter_); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal (Box-Muller; avoids libstdc++-specific distributions).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925287 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Poisson via summed exponentials; exact for the moderate means used here.
    std::uint64_t poisson(double mean) {
        double sum = 0.0;
        std::uint64_t k = 0;
        while (true) {
            double u = 0.0;
            while (u <= 1e-300) u = uniform();
            sum += -std::log(u);
            if (sum >= mean) return k;
            ++k;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

    static std::uint64_t mix(std::uint64_t z) {
        z += kGamma;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

    std::uint64_t state_;
    std::uint64_t counter_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace spinres
