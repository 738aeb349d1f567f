#include "sigsep/lab.hpp"

#include <gtest/gtest.h>

using namespace sigsep;

namespace {

ScenarioConfig product_config(int d, std::size_t per_channel, double lambda = 0.0)
{
    ScenarioConfig c;
    c.d = d;
    c.family = SourceFamily::exact_product;
    c.per_channel = per_channel;
    c.vertices = 8;
    c.lambda = lambda;
    c.seed = 42;
    c.restarts = 8;
    return c;
}

SignalEnsemble zero_noise(int d, std::size_t paths)
{
    std::vector<PiecewiseLinearPath> p;
    for (std::size_t k = 0; k < paths; ++k) p.emplace_back(std::vector<double>{0.0, 1.0}, Matrix::Zero(2, d));
    return SignalEnsemble(std::move(p));
}

double max_block_gap(const Coredinates& a, const Coredinates& b) { return max_moment_gap(a, b); }

}  // namespace

TEST(Source, ExactProductHasZeroDefectAndDistinctSkews)
{
    for (int d = 2; d <= 3; ++d) {
        const auto src = generate_source(product_config(d, 6));
        const auto core = coredinates(src);
        EXPECT_LT(ic_defect(core), 1e-10);
        std::vector<double> ratios;
        for (int i = 0; i < d; ++i) ratios.push_back(core.third(i) / std::pow(core.second(i), 1.5));
        for (int i = 0; i < d; ++i) {
            EXPECT_GT(std::abs(ratios[static_cast<std::size_t>(i)]), 1e-3);
            for (int j = 0; j < i; ++j) EXPECT_GT(std::abs(ratios[static_cast<std::size_t>(i)] - ratios[static_cast<std::size_t>(j)]), 1e-3);
        }
    }
}

TEST(Source, DefectGrowsWithDependence)
{
    double prev = -1.0;
    for (double lambda : {0.0, 0.05, 0.1, 0.2, 0.4}) {
        const double dd = ic_defect(coredinates(generate_source(product_config(2, 6, lambda))));
        EXPECT_GE(dd, prev) << "lambda = " << lambda;
        prev = dd;
    }
    EXPECT_GT(prev, 1e-3);
}

TEST(Source, FullDependenceIsDegenerate)
{
    const auto core = coredinates(generate_source(product_config(2, 6, 1.0)));
    EXPECT_THROW(whiten(core), Error);
    const auto rep = run_scenario(product_config(2, 6, 1.0));
    EXPECT_TRUE(rep.degenerate);
    EXPECT_FALSE(rep.warnings.empty());
    EXPECT_TRUE(rep.minimizers.empty());
}

TEST(Source, SampledDefectShrinksWithSize)
{
    ScenarioConfig c;
    c.d = 2;
    c.vertices = 8;
    c.seed = 3;
    c.paths = 200;
    const double small = ic_defect(coredinates(generate_source(c)));
    c.paths = 20000;
    const double large = ic_defect(coredinates(generate_source(c)));
    EXPECT_LT(large, small);
    EXPECT_LT(large, 0.1);
}

TEST(Source, ProductSampleDrawsFromTheProductLaw)
{
    ScenarioConfig c = product_config(2, 4);
    c.vertices = 5;
    const SignalEnsemble exact = generate_source(c);
    ASSERT_EQ(exact.size(), 16u);
    c.product_sample = 400;
    const SignalEnsemble sampled = generate_source(c);
    ASSERT_EQ(sampled.size(), 400u);
    for (const auto& x : sampled.paths()) {
        bool found = false;
        for (const auto& y : exact.paths()) found = found || (x.values() - y.values()).cwiseAbs().maxCoeff() < 1e-14;
        EXPECT_TRUE(found);
    }
    EXPECT_EQ(generate_source(c).path(17).values(), sampled.path(17).values());

    c.product_sample = 40000;
    const double gap = max_moment_gap(coredinates(exact), coredinates(generate_source(c)));
    EXPECT_LT(gap, 5e-3);
    c.product_sample = 0;
    EXPECT_THROW(validate(c), Error);
}

TEST(Source, InvalidConfigurations)
{
    ScenarioConfig c;
    c.lambda = 1.5;
    EXPECT_THROW(validate(c), Error);
    c = {};
    c.vertices = 1;
    EXPECT_THROW(validate(c), Error);
    c = {};
    c.async.mesh = {0.1};
    EXPECT_THROW(validate(c), Error);
}

TEST(AdditiveNoise, ZeroNoiseHasZeroBudget)
{
    const auto src = generate_source(product_config(2, 4));
    const auto r = inject_additive_noise(src, zero_noise(2, 3), Pairing::independent);
    EXPECT_EQ(r.record.statistic, 0.0);
    EXPECT_LT(delta(coredinates(src), coredinates(r.ensemble)), 1e-14);
}

TEST(AdditiveNoise, IdentityAndBudgetForIndependentNoise)
{
    const auto src = generate_source(product_config(2, 5));
    const auto eta = generate_noise(9, 2, 6, 5, 0.3, 0.0);
    const auto r = inject_additive_noise(src, eta, Pairing::independent);
    const auto s = coredinates(src);
    const auto n = coredinates(eta);
    const auto sum = coredinates(r.ensemble);
    EXPECT_LT((sum.m0 - s.m0 - n.m0).cwiseAbs().maxCoeff(), 1e-12);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_LT((sum.m[k] - s.m[k] - n.m[k]).cwiseAbs().maxCoeff(), 1e-12);
    const double d = delta(s, sum);
    EXPECT_NEAR(d * d, r.record.statistic, 1e-10 * r.record.statistic);
}

TEST(AdditiveNoise, BudgetHomogeneity)
{
    const auto s = coredinates(generate_source(product_config(2, 4)));
    const auto n = coredinates(generate_noise(10, 2, 5, 5, 0.5, 0.0));
    const double c = 1.7;
    const auto scaled = transform_moments(n, c * Matrix::Identity(2, 2));
    // level 2 scales by c^2, level 3 by c^3
    CoredinateVector lv2 = normalize_by(s, coredinate_vector(n));
    CoredinateVector v = lv2;
    v.blocks[0] *= c * c;
    for (std::size_t k = 1; k < v.blocks.size(); ++k) v.blocks[k] *= c * c * c;
    EXPECT_NEAR(additive_budget(s, scaled), v.squared_norm(), 1e-12 * v.squared_norm());
}

TEST(Quadrature, SimplexVolumesAndMoments)
{
    const SimplexQuadrature q(33);
    double v2 = 0.0, v3 = 0.0, st = 0.0;
    const auto& g = q.grid();
    for (std::size_t k = 0; k < q.size(); ++k)
        for (std::size_t l = 0; l < q.size(); ++l) {
            v2 += q.pair_weight(k, l);
            st += q.pair_weight(k, l) * g[k] * g[l];
            for (std::size_t m = 0; m < q.size(); ++m) v3 += q.triple_weight(k, l, m);
        }
    EXPECT_NEAR(v2, 0.5, 1e-14);
    EXPECT_NEAR(v3, 1.0 / 6.0, 1e-14);
    EXPECT_NEAR(st, 1.0 / 8.0, 1e-3);
}

TEST(MultiplicativeNoise, UnitNoiseIsIdentity)
{
    const auto src = generate_source(product_config(2, 4));
    const auto one = generate_noise(1, 2, 3, 4, 0.0, 1.0);
    const auto r = inject_multiplicative_noise(src, one, true, Pairing::independent, 2, 12, 64);
    EXPECT_EQ(r.record.statistic, 0.0);
    EXPECT_LT(max_block_gap(coredinates(src), coredinates(r.ensemble)), 1e-13);
    const auto obs = pushforward_linear(src, Matrix::Identity(2, 2));
    EXPECT_EQ(inject_multiplicative_noise(obs, one, false, Pairing::independent, 2, 12, 64).record.statistic, 0.0);
}

TEST(MultiplicativeNoise, BudgetGrowsContinuouslyFromZero)
{
    const auto src = generate_source(product_config(2, 4));
    double prev2 = 0.0, prev3 = 0.0;
    std::vector<double> b2s;
    for (double a : {0.01, 0.02, 0.04, 0.08}) {
        const auto eta = generate_noise(5, 2, 4, 4, a, 1.0);
        const double b2 = beta2(src, eta, 12, 64);
        const double b3 = beta3(src, eta, 12, 64);
        EXPECT_GT(b2, prev2);
        EXPECT_GT(b3, prev3);
        prev2 = b2;
        prev3 = b3;
        b2s.push_back(b2);
    }
    EXPECT_LT(b2s.front(), 0.05 * b2s.back());
}

TEST(MultiplicativeNoise, Beta2DominatesObservedDelta)
{
    // For a centred product source and unit-mean noise the envelope bounds delta^2.
    const auto src = generate_source(product_config(2, 5));
    const auto eta = generate_noise(6, 2, 5, 4, 0.1, 1.0);
    const auto r = inject_multiplicative_noise(src, eta, true, Pairing::independent, 4, 48, 256);
    const double d = delta(coredinates(src), coredinates(r.ensemble));
    EXPECT_LE(d * d, r.record.statistic * 1.05);
}

TEST(Async, OwnVertexTimesReproduceThePath)
{
    const auto src = generate_source(product_config(2, 3));
    const auto& grid = src.path(0).times();
    const auto out = async_sample(src, {grid, grid});
    for (std::size_t k = 0; k < src.size(); ++k) EXPECT_LT((out.path(k).values() - src.path(k).values()).norm(), 1e-15);
    EXPECT_THROW(async_sample(src, {grid, {}}), Error);
}

TEST(Async, RefinementConvergesForSmoothSources)
{
    ScenarioConfig c;
    c.d = 2;
    c.family = SourceFamily::smooth;
    c.paths = 200;
    c.vertices = 513;
    c.seed = 8;
    const auto x = pushforward_linear(generate_source(c), scenario_mixing(c));
    const auto core = coredinates(x);
    double prev = std::numeric_limits<double>::infinity();
    for (int e = 3; e <= 8; ++e) {
        const double h = std::ldexp(1.0, -e);
        const double d = delta(core, coredinates(async_sample(x, channel_offset_dissections({h, h}))));
        EXPECT_LT(d, prev) << "mesh 2^-" << e;
        prev = d;
    }
    EXPECT_LT(prev, 1e-3);
}

TEST(Async, ChannelSwapSymmetry)
{
    const auto src = generate_source(product_config(2, 3));
    Matrix P(2, 2);
    P << 0, 1, 1, 0;
    const auto d1 = offset_dissection(0.3, 0.1);
    const auto d2 = offset_dissection(0.2, 0.05);
    const auto a = coredinates(async_sample(src, {d1, d2}));
    const auto b = coredinates(async_sample(pushforward_linear(src, P), {d2, d1}));
    const auto pa = transform_moments(a, P);
    EXPECT_LT(max_moment_gap(pa, b), 1e-13);
}

TEST(Scenario, ZeroInfringementRecoversExactly)
{
    const auto rep = run_scenario(product_config(2, 6));
    EXPECT_FALSE(rep.degenerate);
    EXPECT_TRUE(rep.converged);
    ASSERT_FALSE(rep.minimizers.empty());
    EXPECT_LT(rep.max_aligned_error, 1e-8);
    EXPECT_LT(rep.source_defect, 1e-10);
    ASSERT_TRUE(rep.constants.has_value());
    EXPECT_TRUE(rep.bound_applicable);
    for (const auto& [name, ok] : rep.flags) EXPECT_TRUE(ok) << name;
}

TEST(Scenario, AdditiveNoiseBudgetImpliesBound)
{
    auto c = product_config(2, 5);
    c.noise.kind = NoiseKind::additive;
    c.noise.amplitude = 1e-3;
    c.noise.paths = 4;
    const auto rep = run_scenario(c);
    ASSERT_TRUE(rep.budget.has_value());
    EXPECT_NEAR(rep.delta_to_reference * rep.delta_to_reference, rep.budget->statistic, 1e-8 * rep.budget->statistic + 1e-20);
    EXPECT_TRUE(rep.flags.at("budget_implies_bound"));
}

TEST(Scenario, DeterministicGivenSeed)
{
    auto c = product_config(2, 4, 0.1);
    const auto a = run_scenario(c);
    const auto b = run_scenario(c);
    ASSERT_EQ(a.minimizers.size(), b.minimizers.size());
    for (std::size_t k = 0; k < a.minimizers.size(); ++k) EXPECT_EQ(a.minimizers[k], b.minimizers[k]);
    EXPECT_EQ(a.source_defect, b.source_defect);
}

TEST(Sweep, LambdaSweepHasMonotoneDefect)
{
    auto c = product_config(2, 5);
    c.sweep = SweepSpec{"lambda", {0.0, 0.05, 0.1, 0.2}};
    const auto s = run_sweep(c);
    ASSERT_EQ(s.rows.size(), 4u);
    EXPECT_TRUE(s.defect_monotone);
    EXPECT_LT(s.rows.front().max_aligned_error, 1e-8);
    for (std::size_t k = 1; k < s.rows.size(); ++k) EXPECT_GE(s.rows[k].envelope, s.rows[k - 1].envelope);
    c.sweep = SweepSpec{"bogus", {0.0}};
    EXPECT_THROW(run_sweep(c), Error);
}

TEST(Estimation, FullSizeHasZeroGapAndRateIsRootN)
{
    ScenarioConfig c;
    c.d = 2;
    c.paths = 4000;
    c.vertices = 6;
    c.seed = 12;
    const Matrix A = scenario_mixing(c);
    const auto proxy = pushforward_linear(generate_source(c), A);
    EstimationConfig e;
    e.sizes = {100, 200, 400, 800, 4000};
    e.repetitions = 6;
    e.restarts = 4;
    e.seed = 1;
    const auto rep = estimation_sweep(proxy, A, e);
    EXPECT_EQ(rep.rows.back().mean_gap, 0.0);
    // fit without the degenerate full-size point
    std::vector<double> lx, ly;
    for (std::size_t k = 0; k + 1 < rep.rows.size(); ++k) {
        lx.push_back(std::log(static_cast<double>(rep.rows[k].n)));
        ly.push_back(std::log(rep.rows[k].mean_gap));
    }
    const double mx = pairwise_sum(lx) / lx.size(), my = pairwise_sum(ly) / ly.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < lx.size(); ++k) {
        sxy += (lx[k] - mx) * (ly[k] - my);
        sxx += (lx[k] - mx) * (lx[k] - mx);
    }
    EXPECT_NEAR(sxy / sxx, -0.5, 0.2);
    EXPECT_GT(rep.M_q, 0.0);
    for (const auto& row : rep.rows) {
        if (static_cast<double>(row.n) >= rep.empirical_n0) {
            EXPECT_GE(row.success_fraction, e.q);
        }
    }
    e.sizes = {200, 100};
    EXPECT_THROW(estimation_sweep(proxy, A, e), Error);
}
