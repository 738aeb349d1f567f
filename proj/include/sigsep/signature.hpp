#pragma once

#include "sigsep/path.hpp"

#include <span>
#include <vector>

namespace sigsep {

// Levels 1..3 of the signature of a path. Indices are 0-based; level 3 is
// stored flat in row-major (i, j, k) order.
struct TruncatedSignature {
    Vector level1;
    Matrix level2;
    std::vector<double> level3;

    TruncatedSignature() = default;
    explicit TruncatedSignature(Eigen::Index d)
        : level1(Vector::Zero(d)), level2(Matrix::Zero(d, d)), level3(static_cast<std::size_t>(d * d * d), 0.0)
    {
    }

    Eigen::Index dimension() const noexcept { return level1.size(); }

    double& at(Eigen::Index i, Eigen::Index j, Eigen::Index k)
    {
        const Eigen::Index d = dimension();
        return level3[static_cast<std::size_t>((i * d + j) * d + k)];
    }
    double at(Eigen::Index i, Eigen::Index j, Eigen::Index k) const
    {
        const Eigen::Index d = dimension();
        return level3[static_cast<std::size_t>((i * d + j) * d + k)];
    }

    // Coefficient for a 0-based word of length 0..3. The empty word gives 1.
    double coefficient(std::span<const int> word) const
    {
        require(word.size() <= 3, "signature coefficient: word longer than 3");
        for (int w : word) require(w >= 0 && w < dimension(), "signature coefficient: letter out of range");
        switch (word.size()) {
        case 0: return 1.0;
        case 1: return level1(word[0]);
        case 2: return level2(word[0], word[1]);
        default: return at(word[0], word[1], word[2]);
        }
    }

    // All d + d^2 + d^3 coefficients, level by level.
    Vector flatten() const
    {
        const Eigen::Index d = dimension();
        Vector out(d + d * d + d * d * d);
        out.head(d) = level1;
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j) out(d + i * d + j) = level2(i, j);
        for (std::size_t k = 0; k < level3.size(); ++k) out(d + d * d + static_cast<Eigen::Index>(k)) = level3[k];
        return out;
    }
};

// Truncated tensor exponential of a single increment v.
inline TruncatedSignature segment_signature(const Vector& v)
{
    const Eigen::Index d = v.size();
    TruncatedSignature s(d);
    s.level1 = v;
    s.level2 = 0.5 * v * v.transpose();
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            for (Eigen::Index k = 0; k < d; ++k) s.at(i, j, k) = v(i) * v(j) * v(k) / 6.0;
    return s;
}

// Truncated tensor product: the signature of the concatenation x * y.
inline TruncatedSignature chen_product(const TruncatedSignature& x, const TruncatedSignature& y)
{
    const Eigen::Index d = x.dimension();
    require(y.dimension() == d, "chen_product: dimension mismatch");
    TruncatedSignature z(d);
    z.level1 = x.level1 + y.level1;
    z.level2 = x.level2 + x.level1 * y.level1.transpose() + y.level2;
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            for (Eigen::Index k = 0; k < d; ++k)
                z.at(i, j, k) = x.at(i, j, k) + x.level2(i, j) * y.level1(k) + x.level1(i) * y.level2(j, k) + y.at(i, j, k);
    return z;
}

// Exact levels 1..3 of a piecewise-linear path: Chen products of segment
// exponentials, accumulated with compensated summation entry by entry.
inline TruncatedSignature signature3(const PiecewiseLinearPath& path)
{
    const Eigen::Index d = path.dimension();
    const std::size_t d2 = static_cast<std::size_t>(d * d);
    std::vector<CompensatedSum> s1(static_cast<std::size_t>(d)), s2(d2), s3(d2 * static_cast<std::size_t>(d));
    Vector a1(d);
    Matrix a2(d, d);
    Vector v(d);

    for (std::size_t seg = 1; seg < path.size(); ++seg) {
        for (Eigen::Index i = 0; i < d; ++i) {
            v(i) = path.values()(static_cast<Eigen::Index>(seg), i) - path.values()(static_cast<Eigen::Index>(seg - 1), i);
            a1(i) = s1[static_cast<std::size_t>(i)].value();
        }
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j) a2(i, j) = s2[static_cast<std::size_t>(i * d + j)].value();
        // x <- x * exp(v), written as increments so every entry is a running sum.
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = 0; j < d; ++j) {
                const double vv = 0.5 * v(i) * v(j);
                for (Eigen::Index k = 0; k < d; ++k) {
                    const double inc = a2(i, j) * v(k) + a1(i) * 0.5 * v(j) * v(k) + vv * v(k) / 3.0;
                    s3[static_cast<std::size_t>((i * d + j) * d + k)].add(inc);
                }
                s2[static_cast<std::size_t>(i * d + j)].add(a1(i) * v(j) + vv);
            }
            s1[static_cast<std::size_t>(i)].add(v(i));
        }
    }

    TruncatedSignature out(d);
    for (Eigen::Index i = 0; i < d; ++i) out.level1(i) = s1[static_cast<std::size_t>(i)].value();
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) out.level2(i, j) = s2[static_cast<std::size_t>(i * d + j)].value();
    for (std::size_t k = 0; k < s3.size(); ++k) out.level3[k] = s3[k].value();
    return out;
}

}  // namespace sigsep
