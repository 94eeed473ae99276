#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace sf2m {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Bad user-supplied configuration (unknown dataset name, mismatched dims, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed external input (CSV, config file, checkpoint).
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numerical failure inside an algorithm (NaN gradient, solver breakdown).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace detail

// Deterministic counter-seeded generator (xoshiro256++ core, splitmix64 seeding).
// Every stochastic operation in the library takes an explicit Rng or seed;
// fork(stream) is a pure function of (seed, stream), so independent streams can
// be derived without sharing state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = detail::splitmix64(sm);
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = detail::rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Unbiased integer in [0, bound) via rejection.
    std::uint64_t uniform_int(std::uint64_t bound) {
        if (bound == 0) throw ConfigError("Rng::uniform_int: bound must be positive");
        const std::uint64_t threshold = (~bound + 1) % bound; // 2^64 mod bound
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    /// Standard normal draw (Box-Muller, cached spare).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = uniform01();
        while (u <= 0.0) u = uniform01();
        const double v = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 2.0 * M_PI * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    void fill_normal(Eigen::Ref<Matrix> out) {
        for (Index i = 0; i < out.rows(); ++i)
            for (Index j = 0; j < out.cols(); ++j) out(i, j) = normal();
    }

    /// Independent generator derived from (seed, stream); pure, state-free derivation.
    Rng fork(std::uint64_t stream) const {
        std::uint64_t mix = seed_ ^ (0x6a09e667f3bcc909ULL + stream);
        return Rng(detail::splitmix64(mix));
    }

    /// k distinct indices from [0, n), partial Fisher-Yates order.
    std::vector<Index> sample_without_replacement(Index n, Index k) {
        if (k > n) throw ConfigError("sample_without_replacement: k > n");
        std::vector<Index> pool(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        std::vector<Index> out(static_cast<std::size_t>(k));
        for (Index i = 0; i < k; ++i) {
            const Index j = i + static_cast<Index>(uniform_int(static_cast<std::uint64_t>(n - i)));
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
            out[static_cast<std::size_t>(i)] = pool[static_cast<std::size_t>(i)];
        }
        return out;
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_[4]{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline double logsumexp(const Eigen::Ref<const Vector>& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m; // all -inf (or a nan) propagates
    return m + std::log((v.array() - m).exp().sum());
}

} // namespace sf2m
