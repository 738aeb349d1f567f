#include "oracles.hpp"
#include "sigsep/premetric.hpp"

#include <gtest/gtest.h>

using namespace sigsep;

namespace {

Coredinates random_core(RandomStream& rng, int d, double offdiag = 1.0)
{
    Matrix m0 = offdiag * rng.gaussian(d, d);
    for (int i = 0; i < d; ++i) m0(i, i) = 0.5 + rng.uniform();
    std::vector<Matrix> m;
    for (int k = 0; k < d; ++k) m.push_back(rng.gaussian(d, d));
    return make_coredinates(m0, m);
}

Coredinates diagonal_core(RandomStream& rng, int d)
{
    Matrix m0 = Matrix::Zero(d, d);
    std::vector<Matrix> m(static_cast<std::size_t>(d), Matrix::Zero(d, d));
    for (int i = 0; i < d; ++i) {
        m0(i, i) = 0.5 + rng.uniform();
        m[static_cast<std::size_t>(i)](i, i) = rng.normal();
    }
    return make_coredinates(m0, m);
}

// The defining double sum, written out entry by entry.
double delta_by_sum(const Coredinates& mu, const Coredinates& nu)
{
    const int d = static_cast<int>(mu.dimension());
    double s = 0.0;
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            const double t = (nu.m0(a, b) - mu.m0(a, b)) / std::sqrt(mu.m0(a, a) * mu.m0(b, b));
            s += t * t;
            for (int g = 0; g < d; ++g) {
                const double u = (nu.m[g](a, b) - mu.m[g](a, b)) / std::sqrt(mu.m0(a, a) * mu.m0(b, b) * mu.m0(g, g));
                s += u * u;
            }
        }
    return std::sqrt(s);
}

Matrix random_monomial(RandomStream& rng, int d)
{
    std::vector<int> perm(static_cast<std::size_t>(d));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Matrix M = Matrix::Zero(d, d);
    for (int i = 0; i < d; ++i) M(i, perm[static_cast<std::size_t>(i)]) = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.2 + 3.0 * rng.uniform());
    return M;
}

}  // namespace

TEST(CoredinateVector, NormIsL2OfFrobenius)
{
    CoredinateVector v{{Matrix::Constant(2, 2, 1.0), Matrix::Constant(2, 2, 2.0)}};
    EXPECT_DOUBLE_EQ(v.squared_norm(), 4.0 + 16.0);
}

TEST(Delta, ZeroOnSelfAndSingleEntry)
{
    RandomStream rng(1, "delta");
    const auto mu = random_core(rng, 3);
    EXPECT_EQ(delta(mu, mu), 0.0);

    Matrix m0 = Matrix::Identity(2, 2);
    std::vector<Matrix> m(2, Matrix::Zero(2, 2));
    const auto ref = make_coredinates(m0, m);
    m0(0, 1) = 0.125;
    EXPECT_DOUBLE_EQ(delta(ref, make_coredinates(m0, m)), 0.125);
}

TEST(Delta, MatchesDirectSumAndIsAsymmetric)
{
    RandomStream rng(2, "delta-sum");
    for (int trial = 0; trial < 30; ++trial) {
        const int d = 2 + trial % 3;
        const auto a = random_core(rng, d);
        const auto b = random_core(rng, d);
        EXPECT_NEAR(delta(a, b), delta_by_sum(a, b), 1e-12 * delta_by_sum(a, b));
        EXPECT_GE(delta(a, b), 0.0);
    }
    const auto a = random_core(rng, 2);
    auto b = transform_moments(a, 3.0 * Matrix::Identity(2, 2));
    EXPECT_GT(std::abs(delta(a, b) - delta(b, a)), 1e-3);
}

TEST(Delta, DegenerateReferenceIsAnError)
{
    Matrix m0 = Matrix::Identity(2, 2);
    m0(1, 1) = 0.0;
    const auto bad = make_coredinates(m0, {Matrix::Zero(2, 2), Matrix::Zero(2, 2)});
    EXPECT_THROW(delta(bad, bad), Error);
    EXPECT_THROW(ic_defect(bad), Error);
}

TEST(ICDefect, ZeroForDiagonalAndPositiveOtherwise)
{
    RandomStream rng(3, "defect");
    const auto diag = diagonal_core(rng, 3);
    EXPECT_EQ(ic_defect(diag), 0.0);
    auto m = diag.m;
    m[1](0, 2) = 1e-3;
    const auto near = make_coredinates(diag.m0, m);
    EXPECT_NEAR(ic_defect(near), 1e-3 / (diag.n(0) * diag.n(2) * diag.n(1)), 1e-15);
    // IC-defect equals delta from the diagonal part
    EXPECT_NEAR(ic_defect(near), delta(near, diag), 1e-15);
}

TEST(ICDefect, InvariantUnderMonomialActions)
{
    RandomStream rng(4, "mono");
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 2 + trial % 3;
        const auto core = random_core(rng, d, 0.3);
        const Matrix M = random_monomial(rng, d);
        const double a = ic_defect(core);
        EXPECT_NEAR(ic_defect(transform_moments(core, M)), a, 1e-10 * a);
    }
}

TEST(ConvergenceCoupling, DeltaBoundedByConstantTimesMomentGap)
{
    RandomStream rng(5, "couple");
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 2 + trial % 3;
        const auto a = random_core(rng, d);
        auto m0 = a.m0 + 1e-3 * rng.gaussian(d, d);
        auto m = a.m;
        for (auto& mi : m) mi += 1e-3 * rng.gaussian(d, d);
        const auto b = make_coredinates(m0, m);
        EXPECT_LE(delta(a, b), delta_lipschitz_constant(a) * max_moment_gap(a, b) * (1 + 1e-12));
    }
    // Tight for a uniform perturbation with the normalizer-aligned sign pattern.
    const auto a = random_core(rng, 2);
    auto m0 = a.m0;
    auto m = a.m;
    m0.array() += 1e-4;
    for (auto& mi : m) mi.array() += 1e-4;
    EXPECT_LE(delta(a, make_coredinates(m0, m)), delta_lipschitz_constant(a) * 1e-4 * (1 + 1e-12));
    EXPECT_NEAR(moment_gap_for_delta(a, 0.1) * delta_lipschitz_constant(a), 0.1, 1e-15);
}

TEST(ResidualPremetric, Cases)
{
    RandomStream rng(6, "dbar");
    const Matrix A = rng.gaussian(3, 3);
    const BoundingBox box{Vector::Constant(3, -1.0), Vector::Constant(3, 1.0)};
    const AffineMap f{A, rng.gaussian(3, 1)};
    EXPECT_LT(affine_residual_premetric(f, f, box), 1e-14);
    // f2 = f1 o translation: derivative term vanishes
    const Vector t = rng.gaussian(3, 1);
    const AffineMap g{A, A * t + f.b};
    EXPECT_LT(affine_residual_premetric(f, g, box), 1e-13);
    const AffineMap far{5.0 * A, f.b};
    EXPECT_EQ(affine_residual_premetric(f, far, box), 1.0);
    // small scaling: (sup|0.01 u| + 1) * 0.01 with the sup at a box corner
    const AffineMap near{1.01 * A, f.b};
    EXPECT_NEAR(affine_residual_premetric(f, near, box), (0.01 * std::sqrt(3.0) + 1.0) * 0.01, 1e-12);
    EXPECT_THROW(affine_residual_premetric(AffineMap::linear(Matrix::Zero(3, 3)), f, box), Error);
    EXPECT_DOUBLE_EQ(residual_premetric({0.5, 0.2}), 0.3);
}

TEST(CausalPremetric, SumOfParts)
{
    RandomStream rng(7, "causal");
    const auto a = random_core(rng, 2);
    const auto b = random_core(rng, 2);
    const BoundingBox box{Vector::Constant(2, -1.0), Vector::Constant(2, 1.0)};
    const AffineMap f = AffineMap::linear(rng.gaussian(2, 2));
    const AffineMap g{1.001 * f.A, Vector::Zero(2)};
    EXPECT_LT(causal_premetric(a, f, a, f, box), 1e-14);
    EXPECT_EQ(causal_premetric(a, f, b, f, box), delta(a, b));
    EXPECT_EQ(causal_premetric(a, f, a, g, box), affine_residual_premetric(f, g, box));
}
