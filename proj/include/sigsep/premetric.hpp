#pragma once

#include "sigsep/ensemble.hpp"

#include <optional>

namespace sigsep {

// An element (C_0, ..., C_d) of the coredinate space with the
// l2-of-Frobenius norm.
struct CoredinateVector {
    std::vector<Matrix> blocks;

    double squared_norm() const
    {
        CompensatedSum s;
        for (const auto& b : blocks) s.add(b.squaredNorm());
        return s.value();
    }
    double norm() const { return std::sqrt(squared_norm()); }
};

inline CoredinateVector coredinate_vector(const Coredinates& core)
{
    CoredinateVector v;
    v.blocks.push_back(core.m0);
    for (const auto& m : core.m) v.blocks.push_back(m);
    return v;
}

// N^{-1} (C_0, C_nu / sqrt(<mu>_nu nu)) N^{-1}, normalized by the reference.
inline CoredinateVector normalize_by(const Coredinates& ref, const CoredinateVector& v)
{
    const Eigen::Index d = ref.dimension();
    const Vector inv = ref.n.cwiseInverse();
    CoredinateVector out;
    out.blocks.reserve(v.blocks.size());
    for (std::size_t nu = 0; nu < v.blocks.size(); ++nu) {
        Matrix b = inv.asDiagonal() * v.blocks[nu] * inv.asDiagonal();
        if (nu > 0) b *= inv(static_cast<Eigen::Index>(nu) - 1);
        out.blocks.push_back(std::move(b));
    }
    require(static_cast<Eigen::Index>(out.blocks.size()) == d + 1, "coredinate vector has the wrong number of blocks");
    return out;
}

// The ICA premetric: normalized coredinate distance from `reference` to `other`.
// Asymmetric; normalization uses the reference's diagonal moments.
inline double delta(const Coredinates& reference, const Coredinates& other)
{
    require_diag_gate(reference);
    require(reference.dimension() == other.dimension(), "delta: dimension mismatch");
    CoredinateVector diff = coredinate_vector(other);
    const CoredinateVector base = coredinate_vector(reference);
    for (std::size_t k = 0; k < diff.blocks.size(); ++k) diff.blocks[k] -= base.blocks[k];
    return normalize_by(reference, diff).norm();
}

// Coredinates with the off-diagonal mass removed: diagonal of [mu]_0 and the
// single entry (nu, nu) of each [mu]_nu.
inline CoredinateVector diagonal_part(const Coredinates& core)
{
    CoredinateVector v;
    v.blocks.push_back(core.m0.diagonal().asDiagonal());
    for (std::size_t nu = 0; nu < core.m.size(); ++nu) {
        Matrix b = Matrix::Zero(core.dimension(), core.dimension());
        const auto k = static_cast<Eigen::Index>(nu);
        b(k, k) = core.m[nu](k, k);
        v.blocks.push_back(std::move(b));
    }
    return v;
}

// IC-defect: normalized distance of the coredinates from their diagonal part.
// Used as the definition whether or not the signal is mean-stationary.
inline double ic_defect(const Coredinates& core)
{
    require_diag_gate(core);
    CoredinateVector off = coredinate_vector(core);
    const CoredinateVector diag = diagonal_part(core);
    for (std::size_t k = 0; k < off.blocks.size(); ++k) off.blocks[k] -= diag.blocks[k];
    return normalize_by(core, off).norm();
}

// Euclidean norm of the vector of normalizers 1/(n_i n_j) and 1/(n_i n_j n_nu).
// delta(mu, nu) <= this * max_{|w|=2,3} |<nu>_w - <mu>_w|.
inline double delta_lipschitz_constant(const Coredinates& core)
{
    require_diag_gate(core);
    const Vector inv = core.n.cwiseInverse();
    const double s2 = inv.squaredNorm();
    // sum_ij (1/(n_i n_j))^2 = (sum_i n_i^-2)^2, and the level-3 analogue is its cube.
    return std::sqrt(s2 * s2 + s2 * s2 * s2);
}

// Largest sup-norm moment gap that keeps delta below eps under the l-infinity
// ball on moments: the exact inverse of the modulus eta -> eta * constant.
inline double moment_gap_for_delta(const Coredinates& core, double eps)
{
    return eps / delta_lipschitz_constant(core);
}

// max_{|w| in {2,3}} |<a>_w - <b>_w| over all coredinate entries.
inline double max_moment_gap(const Coredinates& a, const Coredinates& b)
{
    double g = (a.m0 - b.m0).cwiseAbs().maxCoeff();
    for (std::size_t k = 0; k < a.m.size(); ++k) g = std::max(g, (a.m[k] - b.m[k]).cwiseAbs().maxCoeff());
    return g;
}

struct AffineMap {
    Matrix A;
    Vector b;

    static AffineMap linear(const Matrix& A) { return {A, Vector::Zero(A.rows())}; }
    Vector operator()(const Vector& u) const { return A * u + b; }
};

// Axis-aligned box containing the points on which a transformation is compared.
struct BoundingBox {
    Vector lo;
    Vector hi;

    static BoundingBox of(const SignalEnsemble& e)
    {
        const Eigen::Index d = e.dimension();
        BoundingBox box{Vector::Constant(d, std::numeric_limits<double>::infinity()),
                        Vector::Constant(d, -std::numeric_limits<double>::infinity())};
        for (const auto& x : e.paths()) {
            box.lo = box.lo.cwiseMin(x.values().colwise().minCoeff().transpose());
            box.hi = box.hi.cwiseMax(x.values().colwise().maxCoeff().transpose());
        }
        return box;
    }
};

// Caller-supplied deviation data for a general pair of C^1 maps:
// sup |h(u) - u| and sup ||Dh(u) - I||_2 with h = f1^{-1} o f2.
struct TransformDeviation {
    double sup_deviation = 0.0;
    double derivative_deviation = 0.0;
};

inline double residual_premetric(const TransformDeviation& dev)
{
    require(dev.sup_deviation >= 0.0 && dev.derivative_deviation >= 0.0, "residual_premetric: negative deviation");
    return std::min((dev.sup_deviation + 1.0) * dev.derivative_deviation, 1.0);
}

// min((sup_box |h(u) - u| + 1) * ||A1^{-1} A2 - I||_2, 1) with h = f1^{-1} o f2.
// h - id is affine, so its norm over the box peaks at a corner.
inline double affine_residual_premetric(const AffineMap& f1, const AffineMap& f2, const BoundingBox& box)
{
    const Eigen::Index d = f1.A.rows();
    require(f1.A.cols() == d && f2.A.rows() == d && f2.A.cols() == d && box.lo.size() == d,
            "affine_residual_premetric: dimension mismatch");
    require(d <= 20, "affine_residual_premetric: dimension too large for corner enumeration");
    Eigen::FullPivLU<Matrix> lu(f1.A);
    require(lu.isInvertible(), "affine_residual_premetric: A1 is singular", ErrorKind::invalid_argument);
    const Matrix Dh = lu.solve(f2.A);
    const Vector c = lu.solve(f2.b - f1.b);
    const Matrix L = Dh - Matrix::Identity(d, d);
    double sup = 0.0;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << d); ++mask) {
        Vector u(d);
        for (Eigen::Index i = 0; i < d; ++i) u(i) = (mask >> i) & 1 ? box.hi(i) : box.lo(i);
        sup = std::max(sup, (L * u + c).norm());
    }
    return residual_premetric({sup, spectral_norm(L)});
}

// delta between the signals plus the residual deviation between the maps.
inline double causal_premetric(const Coredinates& ref_core, const AffineMap& ref_map, const Coredinates& other_core,
                               const AffineMap& other_map, const BoundingBox& box)
{
    return delta(ref_core, other_core) + affine_residual_premetric(ref_map, other_map, box);
}

}  // namespace sigsep
