// Seeded random generation. One SeededRng per worker; never share across
// threads. Independent streams for parallel work are derived by hashing the
// base seed with stream keys, so output does not depend on scheduling order.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>

#include "xmid/tensor.hpp"

namespace xmid {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t s = splitmix64(seed);
    for (std::uint64_t k : keys) s = splitmix64(s ^ splitmix64(k));
    return s;
}

class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t seed() const { return seed_; }

    double normal(double mean, double stddev) {
        if (!(stddev >= 0.0)) throw std::invalid_argument("normal stddev must be >= 0");
        if (stddev == 0.0) return mean;
        std::normal_distribution<double> dist(mean, stddev);
        return dist(gen_);
    }

    double uniform() {
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        return dist(gen_);
    }

    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (lo > hi) throw std::invalid_argument("uniform_int empty range");
        std::uniform_int_distribution<std::int64_t> dist(lo, hi);
        return dist(gen_);
    }

    template <typename Container>
    void shuffle(Container& c) {
        std::shuffle(c.begin(), c.end(), gen_);
    }

    SeededRng derive(std::initializer_list<std::uint64_t> keys) const {
        return SeededRng(derive_seed(seed_, keys));
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
};

// i.i.d. normal draws, row-major fill order; identical seeds give identical
// tensors on the same build.
template <typename T>
Tensor<T> rng_normal(SeededRng& rng, const Shape& shape, T mean, T stddev) {
    if (!(static_cast<double>(stddev) >= 0.0)) {
        throw std::invalid_argument("rng_normal stddev must be >= 0");
    }
    Tensor<T> out = Tensor<T>::zeros(shape);
    if (static_cast<double>(stddev) == 0.0) {
        out.fill(mean);
        return out;
    }
    std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
    T* p = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) p[i] = static_cast<T>(dist(rng.engine()));
    detail::require_finite(out, "rng_normal");
    return out;
}

}  // namespace xmid
