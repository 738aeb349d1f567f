#pragma once

#include "sigsep/common.hpp"

#include <cstdint>
#include <random>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace sigsep {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// A named, splittable random stream. Every consumer of randomness derives its
// own stream from (seed, name, index) so results never depend on scheduling.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0)
        : engine_(detail::splitmix64(detail::splitmix64(seed ^ detail::fnv1a(name)) + index))
    {
    }

    RandomStream split(std::string_view name, std::uint64_t index = 0)
    {
        return RandomStream(engine_(), name, index);
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal()
    {
        // Marsaglia polar method; kept local so the sequence is library independent.
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

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

    Matrix gaussian(Eigen::Index rows, Eigen::Index cols)
    {
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
        return m;
    }

    // Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
    Matrix orthogonal(Eigen::Index d)
    {
        const Matrix g = gaussian(d, d);
        Eigen::HouseholderQR<Matrix> qr(g);
        Matrix q = qr.householderQ() * Matrix::Identity(d, d);
        const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
        for (Eigen::Index j = 0; j < d; ++j)
            if (r(j, j) < 0) q.col(j) *= -1.0;
        return q;
    }

    // U diag(s) V^T with log-uniform singular values spanning exactly `condition`.
    Matrix with_condition(Eigen::Index d, double condition)
    {
        require(condition >= 1.0, "with_condition: condition must be >= 1");
        const Matrix u = orthogonal(d);
        const Matrix v = orthogonal(d);
        Vector s(d);
        for (Eigen::Index i = 0; i < d; ++i) {
            const double frac = d == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(d - 1);
            s(i) = std::pow(condition, -frac);
        }
        return u * s.asDiagonal() * v.transpose();
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Uniform subset of {0, ..., n - 1} of size k (Floyd's algorithm), sorted.
inline std::vector<std::size_t> sample_without_replacement(RandomStream& rng, std::size_t n, std::size_t k)
{
    require(k <= n, "sample_without_replacement: k exceeds n");
    std::unordered_set<std::size_t> chosen;
    for (std::size_t j = n - k; j < n; ++j) {
        const std::size_t t = rng.index(j + 1);
        if (!chosen.insert(t).second) chosen.insert(j);
    }
    std::vector<std::size_t> out(chosen.begin(), chosen.end());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace sigsep
