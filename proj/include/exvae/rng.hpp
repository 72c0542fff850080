#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "exvae/errors.hpp"

namespace exvae {

// Seeded random stream with hand-rolled distributions.
//
// std::*_distribution output is implementation-defined, which would make
// checkpoints and logs depend on the standard library version. Everything
// here is defined in terms of raw mt19937_64 draws only, so a (seed, call
// sequence) pair produces identical bytes on any conforming platform.
//
// Every component derives its own named substream from the root seed
// (data/init/train/eval/...), so adding draws in one component never
// shifts another component's stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    static std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
        // FNV-1a over the name, then splitmix64 finalization mixed with root.
        std::uint64_t h = 1469598103934665603ull;
        for (char c : name) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
            h *= 1099511628211ull;
        }
        std::uint64_t z = root + 0x9e3779b97f4a7c15ull + h;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static Rng substream(std::uint64_t root, std::string_view name) {
        return Rng(substream_seed(root, name));
    }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw ArgumentError("uniform_below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    int uniform_int(int n) { return static_cast<int>(uniform_below(static_cast<std::uint64_t>(n))); }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace exvae
