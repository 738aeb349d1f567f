#pragma once

#include "sigsep/common.hpp"

#include <utility>
#include <vector>

namespace sigsep {

// A continuous path in R^d, linear between consecutive (time, value) vertices.
//
// Times are affinely normalized to [0, 1] on construction; the original
// interval is kept as metadata. Values are stored one vertex per row.
// Zero-length and collinear segments are kept as given (see canonicalized()).
class PiecewiseLinearPath {
public:
    PiecewiseLinearPath() = default;

    PiecewiseLinearPath(std::vector<double> times, Matrix values) : values_(std::move(values))
    {
        require(times.size() >= 2, "path needs at least two vertices");
        require(static_cast<Eigen::Index>(times.size()) == values_.rows(),
                "path: times and values differ in length");
        require(values_.cols() >= 1, "path: dimension must be positive");
        for (std::size_t k = 1; k < times.size(); ++k)
            require(times[k] > times[k - 1], "path: times must be strictly increasing");
        for (Eigen::Index k = 0; k < values_.size(); ++k)
            require(std::isfinite(values_.data()[k]), "path: non-finite value");
        raw_start_ = times.front();
        raw_end_ = times.back();
        const double span = raw_end_ - raw_start_;
        times_.resize(times.size());
        for (std::size_t k = 0; k < times.size(); ++k) times_[k] = (times[k] - raw_start_) / span;
        times_.front() = 0.0;
        times_.back() = 1.0;
    }

    std::size_t size() const noexcept { return times_.size(); }
    Eigen::Index dimension() const noexcept { return values_.cols(); }
    const std::vector<double>& times() const noexcept { return times_; }
    const Matrix& values() const noexcept { return values_; }
    std::pair<double, double> raw_interval() const noexcept { return {raw_start_, raw_end_}; }

    Vector vertex(std::size_t k) const { return values_.row(static_cast<Eigen::Index>(k)).transpose(); }
    Vector start() const { return vertex(0); }
    Vector end() const { return vertex(size() - 1); }
    Vector increment() const { return end() - start(); }

    // Index of the segment [t_k, t_{k+1}] containing t (right-continuous).
    std::size_t segment_at(double t) const
    {
        if (t <= 0.0) return 0;
        if (t >= 1.0) return size() - 2;
        const auto it = std::upper_bound(times_.begin(), times_.end(), t);
        return static_cast<std::size_t>(std::distance(times_.begin(), it)) - 1;
    }

    Vector operator()(double t) const
    {
        t = std::clamp(t, 0.0, 1.0);
        const std::size_t k = segment_at(t);
        const double w = (t - times_[k]) / (times_[k + 1] - times_[k]);
        return ((1.0 - w) * values_.row(k) + w * values_.row(k + 1)).transpose();
    }

    // Velocity on the segment containing t.
    Vector derivative(double t) const
    {
        const std::size_t k = segment_at(t);
        return ((values_.row(k + 1) - values_.row(k)) / (times_[k + 1] - times_[k])).transpose();
    }

    // Drops zero-length segments and interior vertices lying on the straight
    // line through their neighbours. Signature-neutral; meant for comparisons.
    PiecewiseLinearPath canonicalized(double tol = 1e-14) const
    {
        std::vector<std::size_t> keep{0};
        for (std::size_t k = 1; k + 1 < size(); ++k) {
            const Vector a = vertex(keep.back());
            const Vector b = vertex(k);
            const Vector c = vertex(k + 1);
            const Vector u = b - a;
            const Vector v = c - b;
            const double scale = std::max({u.norm(), v.norm(), 1.0});
            if (u.norm() <= tol * scale) continue;
            // collinear and same direction
            const double cross = std::sqrt(std::max(0.0, u.squaredNorm() * v.squaredNorm() - std::pow(u.dot(v), 2)));
            if (cross <= tol * scale * scale && u.dot(v) >= 0.0) continue;
            keep.push_back(k);
        }
        keep.push_back(size() - 1);
        std::vector<double> t;
        Matrix vals(static_cast<Eigen::Index>(keep.size()), dimension());
        for (std::size_t i = 0; i < keep.size(); ++i) {
            t.push_back(times_[keep[i]]);
            vals.row(static_cast<Eigen::Index>(i)) = values_.row(static_cast<Eigen::Index>(keep[i]));
        }
        return PiecewiseLinearPath(std::move(t), std::move(vals));
    }

    // The same path sampled at the given (sorted, [0,1]) times.
    PiecewiseLinearPath resampled(const std::vector<double>& grid) const
    {
        Matrix vals(static_cast<Eigen::Index>(grid.size()), dimension());
        for (std::size_t i = 0; i < grid.size(); ++i) vals.row(static_cast<Eigen::Index>(i)) = (*this)(grid[i]).transpose();
        return PiecewiseLinearPath(grid, std::move(vals));
    }

private:
    std::vector<double> times_;
    Matrix values_;
    double raw_start_ = 0.0;
    double raw_end_ = 1.0;
};

// Sorted union of two [0,1] grids, merging points closer than tol.
inline std::vector<double> merge_grids(const std::vector<double>& a, const std::vector<double>& b, double tol = 1e-15)
{
    std::vector<double> all(a);
    all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    std::vector<double> out;
    for (double t : all)
        if (out.empty() || t - out.back() > tol) out.push_back(t);
    out.front() = 0.0;
    out.back() = 1.0;
    return out;
}

// Equidistant dissection of [0,1] with n points (n >= 2).
inline std::vector<double> equidistant_grid(std::size_t n)
{
    require(n >= 2, "equidistant_grid: need n >= 2");
    std::vector<double> g(n);
    for (std::size_t k = 0; k < n; ++k) g[k] = static_cast<double>(k) / static_cast<double>(n - 1);
    g.back() = 1.0;
    return g;
}

// Piecewise-linear interpolation of n samples on the equidistant dissection.
// A single sample u is read as the timeless datum and becomes t -> t*u.
inline PiecewiseLinearPath interpolate_discrete(const Matrix& samples)
{
    require(samples.rows() >= 1, "interpolate_discrete: empty sample sequence");
    if (samples.rows() == 1) {
        Matrix v(2, samples.cols());
        v.row(0).setZero();
        v.row(1) = samples.row(0);
        return PiecewiseLinearPath({0.0, 1.0}, std::move(v));
    }
    return PiecewiseLinearPath(equidistant_grid(static_cast<std::size_t>(samples.rows())), samples);
}

// Piecewise-linear interpolation of samples taken at the given times.
// The dissection is normalized to [0,1] if it does not already span it.
inline PiecewiseLinearPath interpolate_on_dissection(const Matrix& samples, const std::vector<double>& dissection)
{
    require(static_cast<Eigen::Index>(dissection.size()) == samples.rows(),
            "interpolate_on_dissection: sample count does not match dissection length");
    return PiecewiseLinearPath(dissection, samples);
}

// Concatenation x * y; requires x(1) == y(0). x runs on [0, 1/2], y on [1/2, 1].
inline PiecewiseLinearPath concatenate(const PiecewiseLinearPath& x, const PiecewiseLinearPath& y, double tol = 1e-12)
{
    require(x.dimension() == y.dimension(), "concatenate: dimension mismatch");
    require((x.end() - y.start()).norm() <= tol * (1.0 + x.end().norm()), "concatenate: x(1) != y(0)");
    std::vector<double> t;
    Matrix v(static_cast<Eigen::Index>(x.size() + y.size() - 1), x.dimension());
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        t.push_back(0.5 * x.times()[k]);
        v.row(row++) = x.values().row(static_cast<Eigen::Index>(k));
    }
    for (std::size_t k = 1; k < y.size(); ++k) {
        t.push_back(0.5 + 0.5 * y.times()[k]);
        v.row(row++) = y.values().row(static_cast<Eigen::Index>(k));
    }
    return PiecewiseLinearPath(std::move(t), std::move(v));
}

// Sum of Euclidean segment lengths (the 1-variation without the |x_0| term).
inline double path_length(const PiecewiseLinearPath& x)
{
    CompensatedSum s;
    for (std::size_t k = 1; k < x.size(); ++k) s.add((x.vertex(k) - x.vertex(k - 1)).norm());
    return s.value();
}

inline double sup_norm(const PiecewiseLinearPath& x)
{
    double m = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) m = std::max(m, x.vertex(k).norm());
    return m;
}

// |x_0| + (sup over dissections of sum |x_{t_{k+1}} - x_{t_k}|^p)^{1/p}.
//
// For a piecewise-linear path the supremum is attained on dissections made of
// vertices (splitting a straight piece never increases the p-sum for p >= 1),
// so an O(n^2) dynamic program over vertex chains from 0 to 1 is exact.
inline double variation_norm(const PiecewiseLinearPath& x, double p)
{
    require(p >= 1.0, "variation_norm: p must be >= 1");
    if (p == 1.0) return x.start().norm() + path_length(x);
    const std::size_t n = x.size();
    std::vector<double> best(n, 0.0);
    for (std::size_t j = 1; j < n; ++j) {
        double b = 0.0;
        for (std::size_t i = 0; i < j; ++i)
            b = std::max(b, best[i] + std::pow((x.vertex(j) - x.vertex(i)).norm(), p));
        best[j] = b;
    }
    return x.start().norm() + std::pow(best[n - 1], 1.0 / p);
}

}  // namespace sigsep
