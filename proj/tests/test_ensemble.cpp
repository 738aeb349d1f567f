#include "oracles.hpp"
#include "sigsep/ensemble.hpp"

#include <gtest/gtest.h>

using namespace sigsep;

namespace {

SignalEnsemble random_ensemble(RandomStream& rng, int d, int paths, int vertices)
{
    std::vector<PiecewiseLinearPath> p;
    std::vector<double> w;
    for (int k = 0; k < paths; ++k) {
        p.push_back(oracle::random_path(rng, d, vertices));
        w.push_back(0.5 + rng.uniform());
    }
    return SignalEnsemble::normalized(std::move(p), std::move(w));
}

// One-dimensional walks on a shared grid, re-centred so the ensemble mean is
// zero at every vertex (hence exactly mean-stationary).
SignalEnsemble centred_channel(RandomStream& rng, int paths, int vertices, double skew)
{
    Matrix v(paths, vertices);
    for (int k = 0; k < paths; ++k) {
        v(k, 0) = 0.0;
        for (int t = 1; t < vertices; ++t) v(k, t) = v(k, t - 1) + (rng.uniform() < skew ? 2.0 : -0.4 + 0.1 * rng.normal());
    }
    const Eigen::RowVectorXd mean = v.colwise().mean();
    std::vector<PiecewiseLinearPath> out;
    for (int k = 0; k < paths; ++k) out.emplace_back(equidistant_grid(static_cast<std::size_t>(vertices)), (v.row(k) - mean).transpose());
    return SignalEnsemble(std::move(out));
}

double max_core_diff(const Coredinates& a, const Coredinates& b)
{
    double g = (a.m0 - b.m0).cwiseAbs().maxCoeff();
    for (std::size_t k = 0; k < a.m.size(); ++k) g = std::max(g, (a.m[k] - b.m[k]).cwiseAbs().maxCoeff());
    return g;
}

double core_scale(const Coredinates& a)
{
    double g = a.m0.cwiseAbs().maxCoeff();
    for (const auto& m : a.m) g = std::max(g, m.cwiseAbs().maxCoeff());
    return g;
}

}  // namespace

TEST(Ensemble, ValidatesWeightsAndDimensions)
{
    RandomStream rng(1, "ens");
    auto a = oracle::random_path(rng, 2, 3);
    auto b = oracle::random_path(rng, 3, 3);
    EXPECT_THROW(SignalEnsemble({a, b}), Error);
    EXPECT_THROW(SignalEnsemble({a, a}, {0.7, 0.7}), Error);
    EXPECT_THROW(SignalEnsemble({a, a}, {-0.5, 1.5}), Error);
    EXPECT_THROW(SignalEnsemble(std::vector<PiecewiseLinearPath>{}), Error);
    const SignalEnsemble e({a, a});
    EXPECT_DOUBLE_EQ(e.weight(0), 0.5);
}

TEST(Moments, StaircasePair)
{
    Matrix v1(3, 2), v2(3, 2);
    v1 << 0, 0, 1, 0, 1, 1;
    v2 << 0, 0, 0, 1, 1, 1;
    const SignalEnsemble e({interpolate_discrete(v1), interpolate_discrete(v2)});
    EXPECT_DOUBLE_EQ(signature_moment(e, std::vector<int>{0, 1}), 0.5);
    EXPECT_DOUBLE_EQ(signature_moment(e, std::vector<int>{1, 0}), 0.5);
    EXPECT_EQ(signature_moment(e, std::vector<int>{}), 1.0);
    EXPECT_THROW(signature_moment(e, std::vector<int>{0, 0, 0, 0}), Error);
}

TEST(Moments, SinglePathEqualsItsSignature)
{
    RandomStream rng(2, "single");
    const auto x = oracle::random_path(rng, 3, 6);
    const SignalEnsemble e({x});
    const auto s = signature3(x);
    EXPECT_DOUBLE_EQ(signature_moment(e, std::vector<int>{2, 0, 1}), s.at(2, 0, 1));
}

TEST(Moments, MatchRiemannOracleAverages)
{
    RandomStream rng(3, "avg");
    const auto e = random_ensemble(rng, 2, 50, 5);
    oracle::RiemannSignature acc{Vector::Zero(2), Matrix::Zero(2, 2), std::vector<double>(8, 0.0)};
    for (std::size_t k = 0; k < e.size(); ++k) {
        const auto r = oracle::riemann_signature(e.path(k), 20000);
        acc.s2 += e.weight(k) * r.s2;
        for (std::size_t j = 0; j < 8; ++j) acc.s3[j] += e.weight(k) * r.s3[j];
    }
    const auto core = coredinates(e);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            EXPECT_NEAR(core.m0(i, j), acc.s2(i, j), 1e-6 * std::max(1.0, std::abs(acc.s2(i, j))));
            for (int nu = 0; nu < 2; ++nu)
                EXPECT_NEAR(core.m[nu](i, j), acc.at(i, j, nu), 1e-6 * std::max(1.0, std::abs(acc.at(i, j, nu))));
        }
}

TEST(Coredinates, ConstantPathsFailTheGate)
{
    Matrix v = Matrix::Constant(4, 2, 3.0);
    const SignalEnsemble e({interpolate_discrete(v)});
    const auto core = coredinates(e);
    EXPECT_FALSE(core.passes_gate);
    EXPECT_EQ(core.m0.cwiseAbs().maxCoeff(), 0.0);
    try {
        require_diag_gate(core);
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::diag_gate);
    }
}

TEST(Coredinates, CovarianceIsHalfIncrementSecondMoment)
{
    RandomStream rng(4, "cov");
    const auto e = random_ensemble(rng, 3, 40, 6);
    Matrix ref = Matrix::Zero(3, 3);
    for (std::size_t k = 0; k < e.size(); ++k) {
        const Vector inc = e.path(k).increment();
        ref += 0.5 * e.weight(k) * inc * inc.transpose();
    }
    const auto core = coredinates(e);
    EXPECT_LT((core.c - ref).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((core.c - core.c.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(core.n(i), std::sqrt(ref(i, i)), 1e-13);
    Eigen::SelfAdjointEigenSolver<Matrix> es(core.c);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}

TEST(Coredinates, HyperplaneIncrementsGiveSingularCovariance)
{
    RandomStream rng(5, "plane");
    std::vector<PiecewiseLinearPath> p;
    for (int k = 0; k < 20; ++k) {
        auto x = oracle::random_path(rng, 3, 5);
        Matrix v = x.values();
        // the total increment lies in the plane u_3 = u_1 + u_2
        v(v.rows() - 1, 2) = v(0, 2) + (v(v.rows() - 1, 0) - v(0, 0)) + (v(v.rows() - 1, 1) - v(0, 1));
        p.emplace_back(x.times(), v);
    }
    const auto core = coredinates(SignalEnsemble(std::move(p)));
    Eigen::SelfAdjointEigenSolver<Matrix> es(core.c);
    EXPECT_LT(std::abs(es.eigenvalues()(0)), 1e-12 * es.eigenvalues()(2));
}

TEST(Pushforward, IdentityAndTranslation)
{
    RandomStream rng(6, "push");
    const auto e = random_ensemble(rng, 3, 10, 5);
    const auto same = pushforward_affine(e, Matrix::Identity(3, 3), Vector::Zero(3));
    EXPECT_EQ(same.path(3).values(), e.path(3).values());
    const Vector b = Vector::Constant(3, 7.5);
    EXPECT_LT(max_core_diff(coredinates(e), coredinates(pushforward_affine(e, Matrix::Identity(3, 3), b))), 1e-12);
    EXPECT_THROW(pushforward_affine(e, Matrix::Identity(2, 2), Vector::Zero(2)), Error);
}

TEST(TransformMoments, IdentityAndDiagonal)
{
    RandomStream rng(7, "tm");
    const auto core = coredinates(random_ensemble(rng, 3, 10, 5));
    EXPECT_EQ(max_core_diff(core, transform_moments(core, Matrix::Identity(3, 3))), 0.0);
    const Vector lam = Vector::LinSpaced(3, 0.5, 2.0);
    const auto t = transform_moments(core, lam.asDiagonal());
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                EXPECT_NEAR(t.m[k](i, j), lam(i) * lam(j) * lam(k) * core.m[k](i, j), 1e-13);
}

TEST(TransformMoments, AgreesWithPathLevelPushforward)
{
    RandomStream rng(8, "equiv");
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 2 + trial % 3;
        const auto e = random_ensemble(rng, d, 8, 6);
        const Matrix A = rng.gaussian(d, d);
        const Vector b = rng.gaussian(d, 1);
        const auto lhs = coredinates(pushforward_affine(e, A, b));
        const auto rhs = transform_moments(coredinates(e), A);
        EXPECT_LT(max_core_diff(lhs, rhs), 1e-10 * (1.0 + core_scale(lhs)));
    }
}

TEST(Product, SmallCartesianProduct)
{
    const auto one = [](double a, double b) {
        Matrix v(2, 1);
        v << 0, a;
        Matrix u(2, 1);
        u << 0, b;
        return SignalEnsemble::normalized({interpolate_discrete(v), interpolate_discrete(u)}, {1.0, 3.0});
    };
    const auto p = product_ensemble({one(1, 2), one(3, 4)}, 100);
    ASSERT_EQ(p.size(), 4u);
    EXPECT_DOUBLE_EQ(p.weight(0), 0.25 * 0.25);
    EXPECT_DOUBLE_EQ(p.weight(3), 0.75 * 0.75);
    EXPECT_DOUBLE_EQ(p.path(1).end()(0), 1.0);
    EXPECT_DOUBLE_EQ(p.path(1).end()(1), 4.0);
    EXPECT_THROW(product_ensemble({}, 10), Error);
}

TEST(Product, CapRenormalizesWeights)
{
    RandomStream rng(9, "cap");
    const auto a = centred_channel(rng, 10, 5, 0.2);
    const auto b = centred_channel(rng, 10, 5, 0.3);
    RandomStream pick(9, "pick");
    const auto p = product_ensemble({a, b}, 30, &pick);
    EXPECT_EQ(p.size(), 30u);
    EXPECT_NEAR(pairwise_sum(p.weights()), 1.0, 1e-15);
}

TEST(Product, MeanStationaryChannelsGiveDiagonalCoredinates)
{
    RandomStream rng(10, "lemma");
    const auto p = product_ensemble({centred_channel(rng, 12, 9, 0.2), centred_channel(rng, 12, 9, 0.3),
                                     centred_channel(rng, 12, 9, 0.4)},
                                    100000);
    EXPECT_LT(mean_stationarity_gap(p, 33), 1e-12);
    const auto core = coredinates(p);
    const double scale = core_scale(core);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            if (i != j) {
                EXPECT_LT(std::abs(core.m0(i, j)), 1e-10 * scale);
            }
            for (int nu = 0; nu < 3; ++nu)
                if (!(i == j && j == nu)) {
                    EXPECT_LT(std::abs(core.m[nu](i, j)), 1e-10 * scale);
                }
        }
    EXPECT_GT(std::abs(core.third(0)), 1e-3 * scale);
}

TEST(MeanStationarity, DriftAndReflection)
{
    Matrix v(3, 2);
    v << 0, 0, 0.5, 1, 1, 2;
    const auto x = interpolate_discrete(v);
    EXPECT_NEAR(mean_stationarity_gap(SignalEnsemble({x}), 11), std::sqrt(5.0), 1e-12);
    const auto y = interpolate_discrete(-v);
    EXPECT_LT(mean_stationarity_gap(SignalEnsemble({x, y}), 11), 1e-15);
    EXPECT_THROW(mean_stationarity_gap(SignalEnsemble({x}), 1), Error);
}

TEST(Integrability, BoundsTailAndHomogeneity)
{
    RandomStream rng(11, "integ");
    const auto e = random_ensemble(rng, 2, 15, 5);
    double K = 0.0;
    for (const auto& x : e.paths()) K = std::max(K, variation_norm(x, 1.0));
    const auto r = integrability_report(e, 1.5, 2, {1e9});
    EXPECT_LE(r.variation_moment, std::pow(K, 3.0) * (1 + 1e-12));
    EXPECT_EQ(r.tail[0], 0.0);
    const auto r2 = integrability_report(pushforward_linear(e, 2.0 * Matrix::Identity(2, 2)), 1.5, 2);
    EXPECT_NEAR(r2.variation_moment, 8.0 * r.variation_moment, 1e-10 * r2.variation_moment);
    EXPECT_THROW(integrability_report(e, 1.0, 2), Error);
}

TEST(Reduction, IndependentOfThreadCount)
{
    RandomStream rng(12, "threads");
    const auto e = random_ensemble(rng, 3, 1000, 4);
    setenv("SIGSEP_THREADS", "1", 1);
    const auto a = coredinates(e);
    setenv("SIGSEP_THREADS", "7", 1);
    const auto b = coredinates(e);
    unsetenv("SIGSEP_THREADS");
    EXPECT_EQ(max_core_diff(a, b), 0.0);
}
