#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedegg/errors.hpp"

namespace fedegg {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

/// Deterministic random stream identified by (master_seed, purpose, t, k).
///
/// The bit generator is std::mt19937_64, whose output sequence is fixed by the
/// standard. The distributions are implemented here rather than taken from
/// <random>, because the standard leaves those implementation-defined and a
/// replay must be bit-identical on every toolchain.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::string_view purpose, std::uint64_t t, std::uint64_t k)
        : master_seed_(master_seed), purpose_(purpose), t_(t), k_(k) {
        // Each path component passes through its own mixing round, so streams
        // differing in any one component get unrelated seeds.
        std::uint64_t h = detail::splitmix64(master_seed);
        h = detail::splitmix64(h ^ detail::fnv1a64(purpose));
        h = detail::splitmix64(h ^ detail::splitmix64(t + 0x632be59bd9b4e019ULL));
        h = detail::splitmix64(h ^ detail::splitmix64(k + 0x8cb92ba72f3d8dd7ULL));
        const std::uint64_t h2 = detail::splitmix64(h ^ 0xd1b54a32d192ed03ULL);
        std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                          static_cast<std::uint32_t>(h2), static_cast<std::uint32_t>(h2 >> 32)};
        engine_.seed(seq);
    }

    std::uint64_t master_seed() const noexcept { return master_seed_; }
    const std::string& purpose() const noexcept { return purpose_; }
    std::uint64_t round_index() const noexcept { return t_; }
    std::uint64_t sub_index() const noexcept { return k_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1).
    double uniform_open() {
        double u;
        do {
            u = uniform();
        } while (u == 0.0);
        return u;
    }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw DomainError("RngStream::below: empty range");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via the Marsaglia polar method.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    /// log of a Gamma(shape, 1) draw. Working in log space keeps tiny shapes
    /// (Dirichlet alpha = 0.05) from underflowing to exact zeros.
    double log_gamma_variate(double shape) {
        if (!(shape > 0.0)) throw DomainError("gamma: shape must be positive");
        if (shape < 1.0) {
            // Gamma(a) = Gamma(a + 1) * U^(1/a)
            return log_gamma_variate(shape + 1.0) + std::log(uniform_open()) / shape;
        }
        // Marsaglia & Tsang
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v);
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return std::log(d * v);
        }
    }

    double gamma_variate(double shape) { return std::exp(log_gamma_variate(shape)); }

    /// Symmetric Dirichlet(alpha * 1_n) sample.
    std::vector<double> dirichlet(double alpha, std::size_t n) {
        if (n == 0) throw DomainError("dirichlet: n must be positive");
        std::vector<double> logs(n);
        for (auto& l : logs) l = log_gamma_variate(alpha);
        double mx = -std::numeric_limits<double>::infinity();
        for (double l : logs) mx = std::max(mx, l);
        double total = 0.0;
        for (auto& l : logs) {
            l = std::exp(l - mx);
            total += l;
        }
        for (auto& l : logs) l /= total;
        return logs;
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::span<T> xs) {
        for (std::size_t i = xs.size(); i > 1; --i) {
            const std::size_t j = below(i);
            std::swap(xs[i - 1], xs[j]);
        }
    }

    /// m distinct values from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m) {
        if (m > n) throw DomainError("sample_without_replacement: m > n");
        std::vector<std::size_t> pool(n);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = i + below(n - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(m);
        return pool;
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t master_seed_;
    std::string purpose_;
    std::uint64_t t_;
    std::uint64_t k_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline RngStream derive_stream(std::uint64_t master_seed, std::string_view purpose, std::uint64_t t,
                               std::uint64_t k) {
    return RngStream(master_seed, purpose, t, k);
}

}  // namespace fedegg
