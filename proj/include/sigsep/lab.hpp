#pragma once

#include "sigsep/inversion.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sigsep {

enum class SourceFamily { skewed_walk, exact_product, smooth, user };
enum class NoiseKind { none, additive, multiplicative_source, multiplicative_observable };

struct NoiseSpec {
    NoiseKind kind = NoiseKind::none;
    double amplitude = 0.0;
    std::size_t vertices = 9;
    // Noise paths per source path when paired by index is impossible
    // (exact-product sources pair every source path with every noise path).
    std::size_t paths = 8;
};

struct AsyncSpec {
    std::vector<double> mesh;  // per channel; empty means synchronous
    bool offset = true;        // shift channel i's grid by mesh_i * i / d
};

struct SweepSpec {
    std::string parameter;  // "lambda", "noise_amplitude" or "mesh"
    std::vector<double> values;
};

struct ScenarioConfig {
    int d = 2;
    std::size_t paths = 1000;
    std::size_t vertices = 16;
    SourceFamily family = SourceFamily::skewed_walk;
    std::size_t per_channel = 8;  // exact-product family: paths per channel
    // exact-product family: draw this many i.i.d. paths from the product law
    // instead of enumerating it
    std::optional<std::size_t> product_sample;
    std::optional<Matrix> mixing;
    double mixing_condition = 5.0;
    double lambda = 0.0;
    NoiseSpec noise;
    AsyncSpec async;
    std::uint64_t seed = 0;
    std::optional<double> kappa0;
    double delta_kappa = 1.0;
    int restarts = 32;
    std::vector<double> epsilons{0.05, 0.1, 0.2};
    std::size_t quadrature_points = 64;
    std::size_t quadrature_paths = 256;
    std::size_t refinement = 4;
    std::optional<SignalEnsemble> user_source;
    std::optional<SweepSpec> sweep;
};

inline void validate(const ScenarioConfig& c)
{
    require(c.d >= 1, "scenario: d must be >= 1");
    require(c.paths >= 1, "scenario: need at least one path");
    require(c.vertices >= 2, "scenario: need at least two vertices per path");
    require(c.lambda >= 0.0 && c.lambda <= 1.0, "scenario: lambda must lie in [0, 1]");
    require(c.per_channel >= 1, "scenario: per_channel must be >= 1");
    require(!c.product_sample || *c.product_sample >= 1, "scenario: product_sample must be >= 1");
    require(c.mixing_condition >= 1.0, "scenario: mixing condition must be >= 1");
    require(c.restarts >= 1, "scenario: restarts must be >= 1");
    require(c.delta_kappa > 0.0, "scenario: delta_kappa must be positive");
    require(!c.kappa0 || *c.kappa0 >= 1.0, "scenario: kappa0 must be >= 1");
    require(c.noise.amplitude >= 0.0, "scenario: noise amplitude must be nonnegative");
    require(c.noise.vertices >= 2 && c.noise.paths >= 1, "scenario: noise needs >= 2 vertices and >= 1 path");
    require(c.quadrature_points >= 2 && c.quadrature_paths >= 1 && c.refinement >= 1, "scenario: invalid quadrature settings");
    for (double e : c.epsilons) require(e > 0.0, "scenario: epsilons must be positive");
    if (!c.async.mesh.empty()) {
        require(static_cast<int>(c.async.mesh.size()) == c.d, "scenario: async mesh needs one entry per channel");
        for (double h : c.async.mesh) require(h > 0.0 && h <= 1.0, "scenario: async mesh must lie in (0, 1]");
    }
    if (c.mixing) require(c.mixing->rows() == c.d && c.mixing->cols() == c.d, "scenario: mixing must be d x d");
    if (c.family == SourceFamily::user) {
        require(c.user_source.has_value(), "scenario: user family needs a source ensemble");
        require(c.user_source->dimension() == c.d, "scenario: user source dimension differs from d");
    }
}

namespace detail {

// Zero-mean two-point law: (1 - p) s with probability p, otherwise -p s.
struct TwoPoint {
    double p;
    double s;
    double draw(RandomStream& rng) const { return rng.uniform() < p ? (1.0 - p) * s : -p * s; }
};

// Per-channel parameters chosen so that the normalized third moments
// (1 - 2p) / sqrt(p (1 - p)) are nonzero and pairwise distinct.
inline TwoPoint channel_law(int i, int d)
{
    return {0.12 + 0.3 * (i + 0.5) / d, 1.0 + 0.25 * i};
}

inline TwoPoint shared_law() { return {0.3, 1.0}; }

inline Matrix skewed_walk_values(RandomStream& rng, const TwoPoint& law, std::size_t vertices)
{
    Matrix v(static_cast<Eigen::Index>(vertices), 1);
    const double step = 1.0 / std::sqrt(static_cast<double>(vertices - 1));
    v(0, 0) = 0.0;
    for (Eigen::Index k = 1; k < v.rows(); ++k) v(k, 0) = v(k - 1, 0) + step * law.draw(rng);
    return v;
}

// Smooth basis for the "smooth" family; all vanish at t = 0.
inline double smooth_basis(int j, double t)
{
    constexpr double pi = 3.14159265358979323846;
    switch (j) {
    case 0: return t;
    case 1: return std::sin(pi * t) / pi;
    default: return (1.0 - std::cos(2.0 * pi * t)) / (2.0 * pi);
    }
}

// Subtracts the per-vertex mean; all paths must share one grid.
inline SignalEnsemble centred(const SignalEnsemble& e)
{
    Matrix mean = Matrix::Zero(e.path(0).values().rows(), e.dimension());
    for (std::size_t k = 0; k < e.size(); ++k) mean += e.weight(k) * e.path(k).values();
    std::vector<PiecewiseLinearPath> out;
    out.reserve(e.size());
    for (const auto& x : e.paths()) out.emplace_back(x.times(), x.values() - mean);
    return SignalEnsemble(std::move(out), e.weights());
}

// Linear map zeta_i = (1 - lambda) x_i + lambda x_d on d + 1 channels.
inline Matrix dependence_map(int d, double lambda)
{
    Matrix L = Matrix::Zero(d, d + 1);
    for (int i = 0; i < d; ++i) {
        L(i, i) = 1.0 - lambda;
        L(i, d) = lambda;
    }
    return L;
}

inline std::vector<double> refine(const std::vector<double>& grid, std::size_t factor)
{
    std::vector<double> out;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k)
        for (std::size_t j = 0; j < factor; ++j)
            out.push_back(grid[k] + (grid[k + 1] - grid[k]) * static_cast<double>(j) / static_cast<double>(factor));
    out.push_back(grid.back());
    return out;
}

inline std::vector<double> union_grid(const PiecewiseLinearPath& a, const PiecewiseLinearPath& b)
{
    return merge_grids(a.times(), b.times());
}

}  // namespace detail

// Ground-truth source for a scenario. Channels are independent skewed walks
// (or smooth random curves); dependence mixes each channel with a shared one.
inline SignalEnsemble generate_source(const ScenarioConfig& c)
{
    validate(c);
    const int d = c.d;
    const Matrix L = detail::dependence_map(d, c.lambda);
    switch (c.family) {
    case SourceFamily::user: return *c.user_source;
    case SourceFamily::skewed_walk:
    case SourceFamily::smooth: {
        std::vector<PiecewiseLinearPath> paths(c.paths);
        const auto grid = equidistant_grid(c.vertices);
        parallel_for(c.paths, [&](std::size_t k) {
            RandomStream rng(c.seed, "source", k);
            Matrix raw(static_cast<Eigen::Index>(c.vertices), d + 1);
            for (int i = 0; i <= d; ++i) {
                const auto law = i < d ? detail::channel_law(i, d) : detail::shared_law();
                if (c.family == SourceFamily::skewed_walk) {
                    raw.col(i) = detail::skewed_walk_values(rng, law, c.vertices);
                } else {
                    double coef[3];
                    for (double& a : coef) a = law.draw(rng);
                    for (std::size_t v = 0; v < c.vertices; ++v) {
                        double x = 0.0;
                        for (int j = 0; j < 3; ++j) x += coef[j] * detail::smooth_basis(j, grid[v]);
                        raw(static_cast<Eigen::Index>(v), i) = x;
                    }
                }
            }
            paths[k] = PiecewiseLinearPath(grid, raw * L.transpose());
        });
        return SignalEnsemble(std::move(paths));
    }
    case SourceFamily::exact_product: {
        std::vector<SignalEnsemble> channels;
        const int used = c.lambda == 0.0 ? d : d + 1;
        for (int i = 0; i < used; ++i) {
            RandomStream rng(c.seed, "source-channel", static_cast<std::uint64_t>(i));
            const auto law = i < d ? detail::channel_law(i, d) : detail::shared_law();
            std::vector<PiecewiseLinearPath> p;
            for (std::size_t k = 0; k < c.per_channel; ++k)
                p.emplace_back(equidistant_grid(c.vertices), detail::skewed_walk_values(rng, law, c.vertices));
            channels.push_back(detail::centred(SignalEnsemble(std::move(p))));
        }
        SignalEnsemble prod;
        if (c.product_sample) {
            std::vector<PiecewiseLinearPath> p(*c.product_sample);
            for (std::size_t k = 0; k < p.size(); ++k) {
                RandomStream rng(c.seed, "source-sample", k);
                Matrix v(static_cast<Eigen::Index>(c.vertices), used);
                for (int i = 0; i < used; ++i)
                    v.col(i) = channels[static_cast<std::size_t>(i)].path(rng.index(c.per_channel)).values().col(0);
                p[k] = PiecewiseLinearPath(equidistant_grid(c.vertices), v);
            }
            prod = SignalEnsemble(std::move(p));
        } else {
            prod = product_ensemble(channels, std::numeric_limits<std::size_t>::max());
        }
        if (used == d) return prod;
        std::vector<PiecewiseLinearPath> out;
        out.reserve(prod.size());
        for (const auto& x : prod.paths()) out.emplace_back(x.times(), x.values() * L.transpose());
        return SignalEnsemble(std::move(out), prod.weights());
    }
    }
    throw Error(ErrorKind::invalid_argument, "generate_source: unknown family");
}

inline Matrix scenario_mixing(const ScenarioConfig& c)
{
    if (c.mixing) return *c.mixing;
    RandomStream rng(c.seed, "mixing");
    return rng.with_condition(c.d, c.mixing_condition);
}

// Independent, per-vertex centred Gaussian walks with the given amplitude,
// shifted by `mean` (0 for additive noise, 1 for multiplicative noise).
inline SignalEnsemble generate_noise(std::uint64_t seed, int d, std::size_t paths, std::size_t vertices, double amplitude,
                                     double mean)
{
    const auto grid = equidistant_grid(vertices);
    const double step = amplitude / std::sqrt(static_cast<double>(vertices - 1));
    std::vector<PiecewiseLinearPath> out;
    out.reserve(paths);
    for (std::size_t k = 0; k < paths; ++k) {
        RandomStream rng(seed, "noise", k);
        Matrix v = Matrix::Zero(static_cast<Eigen::Index>(vertices), d);
        for (Eigen::Index t = 1; t < v.rows(); ++t) v.row(t) = v.row(t - 1) + step * rng.gaussian(1, d);
        out.emplace_back(grid, std::move(v));
    }
    auto centred = detail::centred(SignalEnsemble(std::move(out)));
    if (mean == 0.0) return centred;
    std::vector<PiecewiseLinearPath> shifted;
    for (const auto& x : centred.paths()) shifted.emplace_back(x.times(), x.values().array() + mean);
    return SignalEnsemble(std::move(shifted), centred.weights());
}

enum class Pairing { by_index, independent };

struct NoiseRecord {
    std::string kind;
    double statistic = 0.0;
};

struct CorruptedEnsemble {
    SignalEnsemble ensemble;
    NoiseRecord record;
};

namespace detail {

template <class Combine>
SignalEnsemble combine_paths(const SignalEnsemble& a, const SignalEnsemble& b, Pairing pairing, std::size_t refinement,
                             Combine&& op)
{
    require(a.dimension() == b.dimension(), "noise: dimension mismatch");
    std::vector<PiecewiseLinearPath> out;
    std::vector<double> weights;
    const auto one = [&](const PiecewiseLinearPath& x, const PiecewiseLinearPath& y) {
        const auto grid = refine(union_grid(x, y), refinement);
        Matrix v(static_cast<Eigen::Index>(grid.size()), x.dimension());
        for (std::size_t k = 0; k < grid.size(); ++k)
            v.row(static_cast<Eigen::Index>(k)) = op(x(grid[k]), y(grid[k])).transpose();
        return PiecewiseLinearPath(grid, std::move(v));
    };
    if (pairing == Pairing::by_index) {
        require(a.size() == b.size(), "noise: paired ensembles must have equal size");
        for (std::size_t k = 0; k < a.size(); ++k) out.push_back(one(a.path(k), b.path(k)));
        return SignalEnsemble(std::move(out), a.weights());
    }
    for (std::size_t p = 0; p < a.size(); ++p)
        for (std::size_t q = 0; q < b.size(); ++q) {
            out.push_back(one(a.path(p), b.path(q)));
            weights.push_back(a.weight(p) * b.weight(q));
        }
    return SignalEnsemble::normalized(std::move(out), std::move(weights));
}

}  // namespace detail

// sum_{nu=0..d} <S>_nu nu^{-1} || N_S^{-1} [eta]_nu N_S^{-1} ||^2 with <S>_00 = 1.
inline double additive_budget(const Coredinates& source, const Coredinates& noise)
{
    require_diag_gate(source);
    return normalize_by(source, coredinate_vector(noise)).squared_norm();
}

// Pathwise S + eta on the union grid. Independent pairing forms every
// combination, so that S and eta are exactly independent under the result.
inline CorruptedEnsemble inject_additive_noise(const SignalEnsemble& source, const SignalEnsemble& noise,
                                               Pairing pairing = Pairing::by_index)
{
    CorruptedEnsemble out{detail::combine_paths(source, noise, pairing, 1, [](const Vector& x, const Vector& y) -> Vector { return x + y; }),
                          {"additive", 0.0}};
    out.record.statistic = additive_budget(coredinates(source), coredinates(noise));
    return out;
}

// Trapezoid quadrature on the simplices {s < t} and {r < s < t} over an
// equidistant grid, with ties weighted 1/2 (two equal) and 1/6 (three equal).
class SimplexQuadrature {
public:
    explicit SimplexQuadrature(std::size_t points) : grid_(equidistant_grid(points)), w_(points)
    {
        const double h = 1.0 / static_cast<double>(points - 1);
        for (std::size_t k = 0; k < points; ++k) w_[k] = (k == 0 || k + 1 == points) ? 0.5 * h : h;
    }

    const std::vector<double>& grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return grid_.size(); }

    double pair_weight(std::size_t k, std::size_t l) const
    {
        if (k > l) return 0.0;
        return k == l ? 0.5 * w_[k] * w_[k] : w_[k] * w_[l];
    }

    double triple_weight(std::size_t k, std::size_t l, std::size_t m) const
    {
        if (k > l || l > m) return 0.0;
        const double base = w_[k] * w_[l] * w_[m];
        if (k == l && l == m) return base / 6.0;
        if (k == l || l == m) return 0.5 * base;
        return base;
    }

private:
    std::vector<double> grid_;
    std::vector<double> w_;
};

namespace detail {

// Values and derivatives of one channel on the quadrature grid, one row per path.
struct ChannelGrid {
    Matrix value;
    Matrix deriv;
    Vector weight;

    const Matrix& get(bool derivative) const { return derivative ? deriv : value; }
};

inline ChannelGrid sample_channel(const SignalEnsemble& e, Eigen::Index channel, const SimplexQuadrature& q, std::size_t max_paths)
{
    const std::size_t n = std::min(e.size(), max_paths);
    // evenly spaced deterministic subsample
    std::vector<std::size_t> idx(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = k * e.size() / n;
    ChannelGrid g;
    const auto G = static_cast<Eigen::Index>(q.size());
    g.value.resize(static_cast<Eigen::Index>(n), G);
    g.deriv.resize(static_cast<Eigen::Index>(n), G);
    g.weight.resize(static_cast<Eigen::Index>(n));
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& x = e.path(idx[k]);
        for (Eigen::Index j = 0; j < G; ++j) {
            const double t = q.grid()[static_cast<std::size_t>(j)];
            g.value(static_cast<Eigen::Index>(k), j) = x(t)(channel);
            g.deriv(static_cast<Eigen::Index>(k), j) = x.derivative(t)(channel);
        }
        g.weight(static_cast<Eigen::Index>(k)) = e.weight(idx[k]);
        total += e.weight(idx[k]);
    }
    g.weight /= total;
    return g;
}

// E[a_s b_t] as a G x G matrix.
inline Matrix pair_expectation(const Matrix& a, const Matrix& b, const Vector& w)
{
    return a.transpose() * w.asDiagonal() * b;
}

// Slice r of E[a_r b_s c_t] as a G x G matrix in (s, t).
inline Matrix triple_slice(const Matrix& a, const Matrix& b, const Matrix& c, const Vector& w, Eigen::Index r)
{
    return b.transpose() * (w.cwiseProduct(a.col(r))).asDiagonal() * c;
}

}  // namespace detail

// Multiplicative noise eta on a centred, mean-stationary source S:
// beta_2 = sum_i <S>_ii^{-2} (a_i^2 + <S>_ii^{-1} b_i^2), where a_i and b_i are
// the Cauchy-Schwarz envelopes of the level-2 and level-3 diagonal moment
// changes, integrated by simplex quadrature.
inline double beta2(const SignalEnsemble& source, const SignalEnsemble& noise, std::size_t points = 64, std::size_t max_paths = 256)
{
    require(source.dimension() == noise.dimension(), "beta2: dimension mismatch");
    const SimplexQuadrature q(points);
    const auto G = static_cast<Eigen::Index>(q.size());
    const Coredinates core = coredinates(source);
    require_diag_gate(core);
    double total = 0.0;
    for (Eigen::Index i = 0; i < source.dimension(); ++i) {
        const auto S = detail::sample_channel(source, i, q, max_paths);
        const auto E = detail::sample_channel(noise, i, q, max_paths);
        // level 2: bit b of the mask puts the derivative on eta at position b, on S elsewhere
        double alpha2 = 0.0;
        for (int mask = 0; mask < 4; ++mask) {
            const Matrix l = detail::pair_expectation(E.get(mask & 1), E.get(mask & 2), E.weight);
            const Matrix r = detail::pair_expectation(S.get(!(mask & 1)), S.get(!(mask & 2)), S.weight);
            double bl = 0.0, cr = 0.0;
            for (Eigen::Index k = 0; k < G; ++k)
                for (Eigen::Index m = k; m < G; ++m) {
                    const double w = q.pair_weight(static_cast<std::size_t>(k), static_cast<std::size_t>(m));
                    const double lv = l(k, m) - (mask == 0 ? 1.0 : 0.0);
                    bl += w * lv * lv;
                    cr += w * r(k, m) * r(k, m);
                }
            alpha2 += std::sqrt(bl) * std::sqrt(cr);
        }
        double alpha3 = 0.0;
        for (int mask = 0; mask < 8; ++mask) {
            double bl = 0.0, cr = 0.0;
            for (Eigen::Index a = 0; a < G; ++a) {
                const Matrix l = detail::triple_slice(E.get(mask & 1), E.get(mask & 2), E.get(mask & 4), E.weight, a);
                const Matrix r = detail::triple_slice(S.get(!(mask & 1)), S.get(!(mask & 2)), S.get(!(mask & 4)), S.weight, a);
                for (Eigen::Index k = a; k < G; ++k)
                    for (Eigen::Index m = k; m < G; ++m) {
                        const double w = q.triple_weight(static_cast<std::size_t>(a), static_cast<std::size_t>(k), static_cast<std::size_t>(m));
                        const double lv = l(k, m) - (mask == 0 ? 1.0 : 0.0);
                        bl += w * lv * lv;
                        cr += w * r(k, m) * r(k, m);
                    }
            }
            alpha3 += std::sqrt(bl) * std::sqrt(cr);
        }
        const double g = core.second(i);
        total += (alpha2 * alpha2 + alpha3 * alpha3 / g) / (g * g);
    }
    return total;
}

// Multiplicative noise eta on the observable X:
// beta_3 = sum_i (xi_i + Xi_i)^2 + sum_nu sum_{i != nu} (Xi1_{i,nu} + Xi2_{i,nu}),
// each term the squared simplex integral of the corresponding moment change.
inline double beta3(const SignalEnsemble& observable, const SignalEnsemble& noise, std::size_t points = 64, std::size_t max_paths = 256)
{
    require(observable.dimension() == noise.dimension(), "beta3: dimension mismatch");
    const SimplexQuadrature q(points);
    const auto G = static_cast<Eigen::Index>(q.size());
    const Eigen::Index d = observable.dimension();
    std::vector<detail::ChannelGrid> X, E;
    for (Eigen::Index i = 0; i < d; ++i) {
        X.push_back(detail::sample_channel(observable, i, q, max_paths));
        E.push_back(detail::sample_channel(noise, i, q, max_paths));
    }
    const auto pair_integral = [&](const Matrix& f) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < G; ++k)
            for (Eigen::Index m = k; m < G; ++m) s += q.pair_weight(static_cast<std::size_t>(k), static_cast<std::size_t>(m)) * f(k, m);
        return s;
    };
    // integral over r < s < t of sum over terms of (noise triple) * (signal triple)
    struct TripleTerm {
        const detail::ChannelGrid* eta[3];
        bool eta_d[3];
        const detail::ChannelGrid* x[3];
        bool x_d[3];
        double shift;  // subtracted from the noise factor
    };
    const auto triple_integral = [&](const std::vector<TripleTerm>& terms) {
        double s = 0.0;
        for (Eigen::Index a = 0; a < G; ++a) {
            Matrix f = Matrix::Zero(G, G);
            for (const auto& t : terms) {
                Matrix l = detail::triple_slice(t.eta[0]->get(t.eta_d[0]), t.eta[1]->get(t.eta_d[1]), t.eta[2]->get(t.eta_d[2]), t.eta[0]->weight, a);
                l.array() -= t.shift;
                const Matrix r = detail::triple_slice(t.x[0]->get(t.x_d[0]), t.x[1]->get(t.x_d[1]), t.x[2]->get(t.x_d[2]), t.x[0]->weight, a);
                f += l.cwiseProduct(r);
            }
            for (Eigen::Index k = a; k < G; ++k)
                for (Eigen::Index m = k; m < G; ++m)
                    s += q.triple_weight(static_cast<std::size_t>(a), static_cast<std::size_t>(k), static_cast<std::size_t>(m)) * f(k, m);
        }
        return s;
    };
    // Pair noise factor at (s, t) with a three-point signal factor.
    const auto mixed_integral = [&](const detail::ChannelGrid& e_s, const detail::ChannelGrid& e_t, int free_pos,
                                    const detail::ChannelGrid* x[3]) {
        // (E[eta_p eta_q] - 1) E[dX dX dX] + E[deta_p deta_q] E[X..] with the free
        // position carrying dX^i in both terms
        const Matrix h1 = detail::pair_expectation(e_s.value, e_t.value, e_s.weight).array() - 1.0;
        const Matrix h2 = detail::pair_expectation(e_s.deriv, e_t.deriv, e_s.weight);
        double s = 0.0;
        for (Eigen::Index a = 0; a < G; ++a) {
            const Matrix r1 = detail::triple_slice(x[0]->deriv, x[1]->deriv, x[2]->deriv, x[0]->weight, a);
            const Matrix r2 = detail::triple_slice(free_pos == 0 ? x[0]->deriv : x[0]->value, free_pos == 1 ? x[1]->deriv : x[1]->value,
                                                   free_pos == 2 ? x[2]->deriv : x[2]->value, x[0]->weight, a);
            for (Eigen::Index k = a; k < G; ++k)
                for (Eigen::Index m = k; m < G; ++m) {
                    // noise positions: the two non-free ones among (a, k, m)
                    const Eigen::Index pos[3] = {a, k, m};
                    Eigen::Index p = -1, qq = -1;
                    for (int z = 0; z < 3; ++z) {
                        if (z == free_pos) continue;
                        if (p < 0) p = pos[z]; else qq = pos[z];
                    }
                    const double w = q.triple_weight(static_cast<std::size_t>(a), static_cast<std::size_t>(k), static_cast<std::size_t>(m));
                    s += w * (h1(p, qq) * r1(k, m) + h2(p, qq) * r2(k, m));
                }
        }
        return s;
    };

    double total = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
        const auto& e = E[static_cast<std::size_t>(i)];
        const auto& x = X[static_cast<std::size_t>(i)];
        const Matrix xi_f = (detail::pair_expectation(e.value, e.value, e.weight).array() - 1.0).matrix().cwiseProduct(
                                detail::pair_expectation(x.deriv, x.deriv, x.weight)) +
                            detail::pair_expectation(e.deriv, e.deriv, e.weight).cwiseProduct(detail::pair_expectation(x.value, x.value, x.weight));
        const double xi_hat = std::pow(pair_integral(xi_f), 2);
        const std::vector<TripleTerm> terms{
            {{&e, &e, &e}, {false, false, false}, {&x, &x, &x}, {true, true, true}, 1.0},
            {{&e, &e, &e}, {true, true, true}, {&x, &x, &x}, {false, false, false}, 0.0},
            {{&e, &e, &e}, {true, false, true}, {&x, &x, &x}, {false, true, false}, 0.0},
            {{&e, &e, &e}, {false, true, true}, {&x, &x, &x}, {true, false, false}, 0.0},
            {{&e, &e, &e}, {true, true, false}, {&x, &x, &x}, {false, false, true}, 0.0},
        };
        const double Xi_hat = std::pow(triple_integral(terms), 2);
        total += std::pow(xi_hat + Xi_hat, 2);
    }
    for (Eigen::Index nu = 0; nu < d; ++nu)
        for (Eigen::Index i = 0; i < d; ++i) {
            if (i == nu) continue;
            const auto& e = E[static_cast<std::size_t>(nu)];
            const detail::ChannelGrid* first[3] = {&X[static_cast<std::size_t>(i)], &X[static_cast<std::size_t>(nu)], &X[static_cast<std::size_t>(nu)]};
            const detail::ChannelGrid* second[3] = {&X[static_cast<std::size_t>(nu)], &X[static_cast<std::size_t>(i)], &X[static_cast<std::size_t>(nu)]};
            total += std::pow(mixed_integral(e, e, 0, first), 2) + std::pow(mixed_integral(e, e, 1, second), 2);
        }
    return total;
}

// Componentwise product on a refined common grid (products of piecewise
// linear paths are approximated piecewise linearly).
inline CorruptedEnsemble inject_multiplicative_noise(const SignalEnsemble& target, const SignalEnsemble& noise, bool target_is_source,
                                                     Pairing pairing = Pairing::by_index, std::size_t refinement = 4,
                                                     std::size_t points = 64, std::size_t max_paths = 256)
{
    CorruptedEnsemble out{detail::combine_paths(target, noise, pairing, refinement,
                                                [](const Vector& x, const Vector& y) -> Vector { return x.cwiseProduct(y); }),
                          {target_is_source ? "multiplicative_source" : "multiplicative_observable", 0.0}};
    out.record.statistic = target_is_source ? beta2(target, noise, points, max_paths) : beta3(target, noise, points, max_paths);
    return out;
}

// Dissection of [0,1] with mesh h, shifted by offset, always containing 0 and 1.
inline std::vector<double> offset_dissection(double h, double offset)
{
    require(h > 0.0 && h <= 1.0, "offset_dissection: mesh must lie in (0, 1]");
    std::vector<double> g{0.0};
    for (double t = offset > 0.0 ? offset : h; t < 1.0 - 1e-12; t += h)
        if (t > 1e-12) g.push_back(t);
    g.push_back(1.0);
    return g;
}

inline std::vector<std::vector<double>> channel_offset_dissections(const std::vector<double>& mesh, bool offset = true)
{
    std::vector<std::vector<double>> out;
    const double d = static_cast<double>(mesh.size());
    for (std::size_t i = 0; i < mesh.size(); ++i)
        out.push_back(offset_dissection(mesh[i], offset ? mesh[i] * static_cast<double>(i) / d : 0.0));
    return out;
}

// Channel i of every path is observed only on dissections[i], interpolated
// linearly, and the channels are reassembled on the union grid.
inline SignalEnsemble async_sample(const SignalEnsemble& e, const std::vector<std::vector<double>>& dissections)
{
    const Eigen::Index d = e.dimension();
    require(static_cast<Eigen::Index>(dissections.size()) == d, "async_sample: need one dissection per channel");
    std::vector<double> grid{0.0, 1.0};
    for (const auto& D : dissections) {
        require(!D.empty(), "async_sample: empty dissection");
        for (double t : D) require(t >= 0.0 && t <= 1.0, "async_sample: dissection outside [0, 1]");
        grid = merge_grids(grid, D);
    }
    std::vector<PiecewiseLinearPath> out(e.size());
    parallel_for(e.size(), [&](std::size_t k) {
        const auto& x = e.path(k);
        Matrix v(static_cast<Eigen::Index>(grid.size()), d);
        for (Eigen::Index i = 0; i < d; ++i) {
            const auto& D = dissections[static_cast<std::size_t>(i)];
            Matrix s(static_cast<Eigen::Index>(D.size()), 1);
            for (std::size_t j = 0; j < D.size(); ++j) s(static_cast<Eigen::Index>(j), 0) = x(D[j])(i);
            if (D.size() == 1) {
                v.col(i).setConstant(s(0, 0));
                continue;
            }
            const auto y = interpolate_on_dissection(s, D);
            for (std::size_t j = 0; j < grid.size(); ++j) v(static_cast<Eigen::Index>(j), i) = y(grid[j])(0);
        }
        out[k] = PiecewiseLinearPath(grid, std::move(v));
    });
    return SignalEnsemble(std::move(out), e.weights());
}

// delta radius guaranteeing aligned error <= eps: c2 d / (1 - d) <= eps.
inline double delta_target(const TheoremConstants& k, double eps)
{
    return std::min(k.eps0, eps / (k.c2 + eps));
}

struct BudgetRecord {
    std::string kind;
    double statistic = 0.0;
    std::vector<double> epsilons;
    std::vector<double> thresholds;  // beta_eps^2, or gamma_eps for observable noise
    std::vector<bool> within;
};

struct RobustnessReport {
    ScenarioConfig config;
    Matrix mixing;
    double source_defect = 0.0;       // IC-defect of the clean source
    double effective_defect = 0.0;    // IC-defect of A^{-1} X~
    double delta_to_reference = 0.0;  // delta(source, A^{-1} X~)
    bool degenerate = false;
    bool converged = false;
    std::vector<Matrix> minimizers;
    std::vector<double> contrasts;
    std::vector<double> aligned_errors;
    double max_aligned_error = std::numeric_limits<double>::infinity();
    std::optional<TheoremConstants> constants;            // for the effective source
    std::optional<TheoremConstants> reference_constants;  // for the clean source
    double predicted_bound = std::numeric_limits<double>::infinity();
    bool bound_applicable = false;
    std::optional<BudgetRecord> budget;
    std::map<std::string, bool> flags;
    std::vector<std::string> warnings;
};

namespace detail {

inline double inf_norm(const Matrix& m) { return m.cwiseAbs().rowwise().sum().maxCoeff(); }

}  // namespace detail

// End-to-end run: source, dependence, noise, mixing, asynchronous sampling,
// blind inversion and comparison with the predicted bound.
inline RobustnessReport run_scenario(const ScenarioConfig& c)
{
    validate(c);
    RobustnessReport rep;
    rep.config = c;
    rep.mixing = scenario_mixing(c);
    const Matrix& A = rep.mixing;
    const SignalEnsemble source = generate_source(c);
    const Coredinates zeta = coredinates(source);
    const bool product = c.family == SourceFamily::exact_product;
    const Pairing pairing = product ? Pairing::independent : Pairing::by_index;
    const std::size_t noise_paths = product ? c.noise.paths : source.size();

    try {
        rep.source_defect = ic_defect(zeta);
    } catch (const Error& e) {
        rep.warnings.push_back(std::string("source defect undefined: ") + e.what());
        rep.degenerate = true;
    }
    try {
        rep.reference_constants = theorem_constants(zeta, A, c.kappa0, c.delta_kappa);
    } catch (const Error& e) {
        rep.warnings.push_back(std::string("reference constants unavailable: ") + e.what());
    }

    // corruption
    SignalEnsemble observed = pushforward_linear(source, A);
    std::optional<NoiseRecord> record;
    std::optional<SignalEnsemble> noise;
    switch (c.noise.kind) {
    case NoiseKind::none: break;
    case NoiseKind::additive: {
        noise = generate_noise(c.seed, c.d, noise_paths, c.noise.vertices, c.noise.amplitude, 0.0);
        auto r = inject_additive_noise(source, *noise, pairing);
        observed = pushforward_linear(r.ensemble, A);
        record = r.record;
        break;
    }
    case NoiseKind::multiplicative_source: {
        noise = generate_noise(c.seed, c.d, noise_paths, c.noise.vertices, c.noise.amplitude, 1.0);
        auto r = inject_multiplicative_noise(source, *noise, true, pairing, c.refinement, c.quadrature_points, c.quadrature_paths);
        observed = pushforward_linear(r.ensemble, A);
        record = r.record;
        break;
    }
    case NoiseKind::multiplicative_observable: {
        noise = generate_noise(c.seed, c.d, noise_paths, c.noise.vertices, c.noise.amplitude, 1.0);
        auto r = inject_multiplicative_noise(observed, *noise, false, pairing, c.refinement, c.quadrature_points, c.quadrature_paths);
        observed = std::move(r.ensemble);
        record = r.record;
        break;
    }
    }
    if (!c.async.mesh.empty()) observed = async_sample(observed, channel_offset_dissections(c.async.mesh, c.async.offset));

    const Coredinates chi = coredinates(observed);
    const Matrix Ainv = A.inverse();
    const Coredinates upsilon = transform_moments(chi, Ainv);
    try {
        rep.effective_defect = ic_defect(upsilon);
        rep.delta_to_reference = delta(zeta, upsilon);
    } catch (const Error& e) {
        rep.warnings.push_back(std::string("effective defect undefined: ") + e.what());
        rep.degenerate = true;
    }

    if (record && rep.reference_constants) {
        BudgetRecord b;
        b.kind = record->kind;
        b.statistic = record->statistic;
        const auto& k = *rep.reference_constants;
        for (double eps : c.epsilons) {
            const double be = delta_target(k, eps);
            double thr = be * be;
            if (c.noise.kind == NoiseKind::multiplicative_observable) {
                // moment gaps on X map to S through B = A^{-1}; delta is Lipschitz in the gap
                const double nb = detail::inf_norm(Ainv);
                const double C = std::max(nb * nb, nb * nb * nb);
                const double t = be / (delta_lipschitz_constant(zeta) * C);
                thr = t * t;
            }
            b.epsilons.push_back(eps);
            b.thresholds.push_back(thr);
            b.within.push_back(b.statistic <= thr);
        }
        rep.budget = b;
    }

    // blind inversion
    double kappa0 = 10.0;
    if (c.kappa0)
        kappa0 = *c.kappa0;
    else if (rep.reference_constants)
        kappa0 = rep.reference_constants->kappa0;
    else {
        try {
            kappa0 = true_demixing_condition(zeta, A) + c.delta_kappa;
        } catch (const Error&) {
        }
    }
    try {
        OptimizerConfig oc;
        oc.restarts = c.restarts;
        oc.seed = c.seed;
        DemixReport d = minimize_contrast(chi, {kappa0}, oc);
        rep.converged = d.converged;
        rep.minimizers = d.minimizers;
        rep.contrasts = d.contrasts;
        for (const auto& w : d.warnings) rep.warnings.push_back(w);
        rep.max_aligned_error = 0.0;
        for (const auto& m : d.minimizers) {
            double err = std::numeric_limits<double>::infinity();
            try {
                err = align_monomial(m, A).relative_error;
            } catch (const Error&) {
            }
            rep.aligned_errors.push_back(err);
            rep.max_aligned_error = std::max(rep.max_aligned_error, err);
        }
    } catch (const Error& e) {
        rep.degenerate = rep.degenerate || e.kind() == ErrorKind::degenerate_covariance || e.kind() == ErrorKind::diag_gate;
        rep.warnings.push_back(std::string("inversion failed: ") + e.what());
    }

    try {
        rep.constants = theorem_constants(upsilon, A, kappa0, c.delta_kappa);
        rep.predicted_bound = rep.constants->predicted_bound;
        rep.bound_applicable = rep.constants->applicable;
    } catch (const Error& e) {
        rep.warnings.push_back(std::string("effective constants unavailable: ") + e.what());
    }

    rep.flags["recovered"] = rep.converged && !rep.minimizers.empty();
    rep.flags["bound_holds"] = !rep.bound_applicable || rep.max_aligned_error <= rep.predicted_bound;
    if (rep.budget) {
        bool ok = true;
        for (std::size_t k = 0; k < rep.budget->epsilons.size(); ++k)
            if (rep.budget->within[k] && !(rep.max_aligned_error <= rep.budget->epsilons[k])) ok = false;
        rep.flags["budget_implies_bound"] = ok;
    }
    return rep;
}

struct SweepRow {
    double value = 0.0;
    double source_defect = 0.0;
    double effective_defect = 0.0;
    double max_aligned_error = 0.0;
    double envelope = 0.0;  // running max of the error over dial values up to this one
    double predicted_bound = 0.0;
    bool bound_applicable = false;
    std::optional<double> budget;
    bool degenerate = false;
};

struct SweepReport {
    std::string parameter;
    std::vector<SweepRow> rows;
    bool defect_monotone = true;
    std::vector<std::string> warnings;
};

inline ScenarioConfig with_dial(ScenarioConfig c, const std::string& parameter, double v)
{
    if (parameter == "lambda") {
        c.lambda = v;
    } else if (parameter == "noise_amplitude") {
        c.noise.amplitude = v;
    } else if (parameter == "mesh") {
        c.async.mesh.assign(static_cast<std::size_t>(c.d), v);
    } else {
        throw Error(ErrorKind::invalid_argument, "sweep: unknown parameter '" + parameter + "'");
    }
    return c;
}

// Common random numbers: every point reuses the scenario seed.
inline SweepReport run_sweep(const ScenarioConfig& c)
{
    require(c.sweep.has_value() && !c.sweep->values.empty(), "run_sweep: no sweep values");
    SweepReport out;
    out.parameter = c.sweep->parameter;
    std::vector<RobustnessReport> reports(c.sweep->values.size());
    std::vector<ScenarioConfig> configs;
    for (double v : c.sweep->values) {
        auto cc = with_dial(c, c.sweep->parameter, v);
        cc.sweep.reset();
        validate(cc);
        configs.push_back(std::move(cc));
    }
    parallel_for(configs.size(), [&](std::size_t k) { reports[k] = run_scenario(configs[k]); });
    double env = 0.0;
    for (std::size_t k = 0; k < reports.size(); ++k) {
        const auto& r = reports[k];
        SweepRow row;
        row.value = c.sweep->values[k];
        row.source_defect = r.source_defect;
        row.effective_defect = r.effective_defect;
        row.max_aligned_error = r.max_aligned_error;
        env = std::max(env, r.max_aligned_error);
        row.envelope = env;
        row.predicted_bound = r.predicted_bound;
        row.bound_applicable = r.bound_applicable;
        if (r.budget) row.budget = r.budget->statistic;
        row.degenerate = r.degenerate;
        for (const auto& w : r.warnings) out.warnings.push_back(std::to_string(row.value) + ": " + w);
        if (k > 0 && row.source_defect < out.rows.back().source_defect) out.defect_monotone = false;
        out.rows.push_back(row);
    }
    return out;
}

struct EstimationConfig {
    std::vector<std::size_t> sizes;
    int repetitions = 20;
    double epsilon = 0.1;
    double q = 0.8;
    std::uint64_t seed = 0;
    int restarts = 8;
    std::optional<double> kappa0;
    double delta_kappa = 1.0;
};

struct EstimationRow {
    std::size_t n = 0;
    std::vector<double> gaps;
    std::vector<double> deltas;
    std::vector<double> errors;
    double mean_gap = 0.0;
    double mean_delta = 0.0;
    double success_fraction = 0.0;  // fraction of repetitions with error <= epsilon
};

struct EstimationReport {
    std::vector<EstimationRow> rows;
    double slope = 0.0;       // least-squares slope of log mean gap against log n
    double intercept = 0.0;
    double M_q = 0.0;         // q-quantile of gap * sqrt(n)
    double eta = 0.0;         // moment-gap radius for the target delta
    double n0 = std::numeric_limits<double>::infinity();
    // smallest tested n from which every larger tested size succeeds in at
    // least a q fraction of repetitions
    double empirical_n0 = std::numeric_limits<double>::infinity();
    std::optional<TheoremConstants> constants;
    std::vector<std::string> warnings;
};

// Subsampling study of the empirical estimator against a large proxy
// ensemble of the observable, with rate n^{-1/2}. Subsamples are drawn
// without replacement, so n = proxy size reproduces the proxy exactly.
inline EstimationReport estimation_sweep(const SignalEnsemble& proxy, const Matrix& A, const EstimationConfig& cfg)
{
    require(!cfg.sizes.empty() && cfg.repetitions >= 1, "estimation_sweep: need sizes and repetitions");
    for (std::size_t k = 1; k < cfg.sizes.size(); ++k) require(cfg.sizes[k] > cfg.sizes[k - 1], "estimation_sweep: sizes must increase");
    require(cfg.sizes.back() <= proxy.size(), "estimation_sweep: sizes exceed the proxy ensemble");
    require(cfg.q >= 0.0 && cfg.q < 1.0 && cfg.epsilon > 0.0, "estimation_sweep: invalid epsilon or q");
    EstimationReport rep;
    const Coredinates chi = coredinates(proxy);
    const Matrix B = A.inverse();
    const Coredinates source = transform_moments(chi, B);
    double kappa0 = cfg.kappa0.value_or(10.0);
    try {
        rep.constants = theorem_constants(source, A, cfg.kappa0, cfg.delta_kappa);
        kappa0 = rep.constants->kappa0;
    } catch (const Error& e) {
        rep.warnings.push_back(std::string("constants unavailable: ") + e.what());
    }

    struct Job {
        std::size_t row, rep;
    };
    std::vector<Job> jobs;
    rep.rows.resize(cfg.sizes.size());
    for (std::size_t r = 0; r < cfg.sizes.size(); ++r) {
        rep.rows[r].n = cfg.sizes[r];
        rep.rows[r].gaps.resize(static_cast<std::size_t>(cfg.repetitions));
        rep.rows[r].deltas.resize(static_cast<std::size_t>(cfg.repetitions));
        rep.rows[r].errors.resize(static_cast<std::size_t>(cfg.repetitions));
        for (int k = 0; k < cfg.repetitions; ++k) jobs.push_back({r, static_cast<std::size_t>(k)});
    }
    parallel_for(jobs.size(), [&](std::size_t j) {
        const auto [r, k] = jobs[j];
        const std::size_t n = cfg.sizes[r];
        RandomStream rng(cfg.seed, "subsample", n * 100003 + k);
        const auto idx = sample_without_replacement(rng, proxy.size(), n);
        const Coredinates sub = coredinates(proxy.subset(idx));
        auto& row = rep.rows[r];
        row.gaps[k] = max_moment_gap(sub, chi);
        row.deltas[k] = chi.passes_gate ? delta(chi, sub) : std::numeric_limits<double>::infinity();
        double err = std::numeric_limits<double>::infinity();
        try {
            OptimizerConfig oc;
            oc.restarts = cfg.restarts;
            oc.seed = cfg.seed;
            const auto d = minimize_contrast(sub, {kappa0}, oc);
            err = 0.0;
            for (const auto& m : d.minimizers) err = std::max(err, align_monomial(m, A).relative_error);
            if (d.minimizers.empty()) err = std::numeric_limits<double>::infinity();
        } catch (const Error&) {
        }
        row.errors[k] = err;
    });

    std::vector<double> scaled;
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rep.rows.size()), 2);
    Vector y(static_cast<Eigen::Index>(rep.rows.size()));
    for (std::size_t r = 0; r < rep.rows.size(); ++r) {
        auto& row = rep.rows[r];
        row.mean_gap = pairwise_sum(row.gaps) / static_cast<double>(row.gaps.size());
        row.mean_delta = pairwise_sum(row.deltas) / static_cast<double>(row.deltas.size());
        int ok = 0;
        for (double e : row.errors) ok += e <= cfg.epsilon ? 1 : 0;
        row.success_fraction = static_cast<double>(ok) / static_cast<double>(row.errors.size());
        for (double g : row.gaps) scaled.push_back(g * std::sqrt(static_cast<double>(row.n)));
        X(static_cast<Eigen::Index>(r), 0) = 1.0;
        X(static_cast<Eigen::Index>(r), 1) = std::log(static_cast<double>(row.n));
        y(static_cast<Eigen::Index>(r)) = std::log(std::max(row.mean_gap, 1e-300));
    }
    if (rep.rows.size() >= 2) {
        const Vector beta = X.colPivHouseholderQr().solve(y);
        rep.intercept = beta(0);
        rep.slope = beta(1);
    }
    std::vector<const EstimationRow*> by_n;
    for (const auto& row : rep.rows) by_n.push_back(&row);
    std::sort(by_n.begin(), by_n.end(), [](const EstimationRow* a, const EstimationRow* b) { return a->n < b->n; });
    for (auto it = by_n.rbegin(); it != by_n.rend() && (*it)->success_fraction >= cfg.q; ++it)
        rep.empirical_n0 = static_cast<double>((*it)->n);

    std::sort(scaled.begin(), scaled.end());
    const double rank = std::ceil(cfg.q * static_cast<double>(scaled.size())) - 1.0;
    rep.M_q = scaled[static_cast<std::size_t>(std::clamp(rank, 0.0, static_cast<double>(scaled.size() - 1)))];
    if (rep.constants) {
        rep.eta = moment_gap_for_delta(source, delta_target(*rep.constants, cfg.epsilon));
        const double nb = detail::inf_norm(B);
        const double threshold = rep.eta / (std::pow(1.0 + nb, 3) * rep.M_q);
        // smallest n >= sizes.front() with n^{-1/2} < threshold
        rep.n0 = std::max(static_cast<double>(cfg.sizes.front()), std::floor(1.0 / (threshold * threshold)) + 1.0);
    }
    return rep;
}

}  // namespace sigsep
