#pragma once

#include "sigsep/random.hpp"
#include "sigsep/signature.hpp"

#include <optional>
#include <vector>

namespace sigsep {

// A weighted finite set of paths: the empirical law of a signal.
class SignalEnsemble {
public:
    SignalEnsemble() = default;

    explicit SignalEnsemble(std::vector<PiecewiseLinearPath> paths)
        : SignalEnsemble(std::move(paths), std::vector<double>{})
    {
    }

    // Empty weights mean uniform. Weights are checked to be nonnegative and to
    // sum to one within 1e-12.
    SignalEnsemble(std::vector<PiecewiseLinearPath> paths, std::vector<double> weights)
        : paths_(std::move(paths)), weights_(std::move(weights))
    {
        require(!paths_.empty(), "ensemble: no paths");
        const Eigen::Index d = paths_.front().dimension();
        for (const auto& p : paths_) require(p.dimension() == d, "ensemble: paths differ in dimension");
        if (weights_.empty()) {
            weights_.assign(paths_.size(), 1.0 / static_cast<double>(paths_.size()));
        } else {
            require(weights_.size() == paths_.size(), "ensemble: weight count does not match path count");
            for (double w : weights_) require(std::isfinite(w) && w >= 0.0, "ensemble: negative or non-finite weight");
            const double total = pairwise_sum(weights_);
            require(std::abs(total - 1.0) <= 1e-12, "ensemble: weights do not sum to 1");
        }
    }

    // Rescales arbitrary nonnegative weights to sum to one.
    static SignalEnsemble normalized(std::vector<PiecewiseLinearPath> paths, std::vector<double> weights)
    {
        const double total = pairwise_sum(weights);
        require(total > 0.0, "ensemble: total weight is zero");
        for (double& w : weights) w /= total;
        // Exact division can still leave a tiny excess; the residual goes to the largest weight.
        const double residual = 1.0 - pairwise_sum(weights);
        *std::max_element(weights.begin(), weights.end()) += residual;
        return SignalEnsemble(std::move(paths), std::move(weights));
    }

    std::size_t size() const noexcept { return paths_.size(); }
    Eigen::Index dimension() const noexcept { return paths_.empty() ? 0 : paths_.front().dimension(); }
    const std::vector<PiecewiseLinearPath>& paths() const noexcept { return paths_; }
    const std::vector<double>& weights() const noexcept { return weights_; }
    const PiecewiseLinearPath& path(std::size_t k) const { return paths_[k]; }
    double weight(std::size_t k) const { return weights_[k]; }

    // Sub-ensemble of selected path indices with renormalized weights.
    SignalEnsemble subset(const std::vector<std::size_t>& idx) const
    {
        std::vector<PiecewiseLinearPath> p;
        std::vector<double> w;
        for (std::size_t k : idx) {
            p.push_back(paths_.at(k));
            w.push_back(weights_.at(k));
        }
        return normalized(std::move(p), std::move(w));
    }

    // Single channel i as a one-dimensional ensemble.
    SignalEnsemble channel(Eigen::Index i) const
    {
        require(i >= 0 && i < dimension(), "ensemble: channel out of range");
        std::vector<PiecewiseLinearPath> p;
        p.reserve(size());
        for (const auto& x : paths_) p.emplace_back(x.times(), x.values().col(i));
        return SignalEnsemble(std::move(p), weights_);
    }

private:
    std::vector<PiecewiseLinearPath> paths_;
    std::vector<double> weights_;
};

// Paths are summed in fixed blocks of this size; block results are then
// combined pairwise. The tree shape is independent of the thread count.
inline constexpr std::size_t reduction_block = 256;

// Weighted mean of f(path) over the ensemble with the deterministic tree above.
template <class F>
Vector weighted_mean(const SignalEnsemble& e, F&& f)
{
    const std::size_t n = e.size();
    const std::size_t blocks = (n + reduction_block - 1) / reduction_block;
    std::vector<Vector> partial(blocks);
    parallel_for(blocks, [&](std::size_t b) {
        const std::size_t lo = b * reduction_block;
        const std::size_t hi = std::min(n, lo + reduction_block);
        std::vector<Vector> terms;
        terms.reserve(hi - lo);
        for (std::size_t k = lo; k < hi; ++k) terms.push_back(e.weight(k) * f(e.path(k)));
        partial[b] = pairwise_sum(std::span<const Vector>(terms));
    });
    return pairwise_sum(std::span<const Vector>(partial));
}

// Expected signature levels 1..3.
inline TruncatedSignature mean_signature(const SignalEnsemble& e)
{
    const Eigen::Index d = e.dimension();
    const Vector flat = weighted_mean(e, [](const PiecewiseLinearPath& x) { return signature3(x).flatten(); });
    TruncatedSignature s(d);
    s.level1 = flat.head(d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) s.level2(i, j) = flat(d + i * d + j);
    for (std::size_t k = 0; k < s.level3.size(); ++k) s.level3[k] = flat(d + d * d + static_cast<Eigen::Index>(k));
    return s;
}

// Weighted average of sig_word; word letters are 0-based, the empty word gives 1.
inline double signature_moment(const SignalEnsemble& e, std::span<const int> word)
{
    require(word.size() <= 3, "signature_moment: word longer than 3");
    for (int w : word) require(w >= 0 && w < e.dimension(), "signature_moment: letter out of range");
    if (word.empty()) return 1.0;
    return mean_signature(e).coefficient(word);
}

// Admissibility threshold on the diagonal second moments:
// min <mu>_ii >= eps_diag_relative * max <mu>_ii, and max > 0.
struct DiagGate {
    double eps_diag_relative = 1e-10;
};

// The coredinate matrices [mu]_0 = (<mu>_ij) and [mu]_nu = (<mu>_{ij nu}),
// with the derived C (symmetrized [mu]_0) and N = diag(<mu>_ii)^{1/2}.
struct Coredinates {
    Matrix m0;
    std::vector<Matrix> m;
    Matrix c;
    Vector n;  // diagonal of N
    bool passes_gate = false;
    double min_diag = 0.0;
    double max_diag = 0.0;

    Eigen::Index dimension() const noexcept { return m0.rows(); }

    double second(Eigen::Index i) const { return m0(i, i); }
    double third(Eigen::Index i) const { return m[static_cast<std::size_t>(i)](i, i); }

    // Matrix index nu in 0..d, where 0 is [mu]_0.
    const Matrix& matrix(std::size_t nu) const { return nu == 0 ? m0 : m[nu - 1]; }
};

// Recomputes c, n and gate data from m0 and m.
inline void finalize(Coredinates& core, const DiagGate& gate = {})
{
    const Eigen::Index d = core.m0.rows();
    core.c = 0.5 * (core.m0 + core.m0.transpose());
    core.n.resize(d);
    core.min_diag = std::numeric_limits<double>::infinity();
    core.max_diag = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < d; ++i) {
        const double v = core.m0(i, i);
        core.n(i) = std::sqrt(std::max(v, 0.0));
        core.min_diag = std::min(core.min_diag, v);
        core.max_diag = std::max(core.max_diag, v);
    }
    core.passes_gate = core.max_diag > 0.0 && core.min_diag >= gate.eps_diag_relative * core.max_diag;
}

inline Coredinates make_coredinates(Matrix m0, std::vector<Matrix> m, const DiagGate& gate = {})
{
    require(m0.rows() == m0.cols(), "coredinates: [mu]_0 must be square");
    require(static_cast<Eigen::Index>(m.size()) == m0.rows(), "coredinates: need d third-level matrices");
    for (const auto& mi : m) require(mi.rows() == m0.rows() && mi.cols() == m0.cols(), "coredinates: shape mismatch");
    Coredinates core{std::move(m0), std::move(m), {}, {}, false, 0.0, 0.0};
    finalize(core, gate);
    return core;
}

inline Coredinates coredinates_from_signature(const TruncatedSignature& s, const DiagGate& gate = {})
{
    const Eigen::Index d = s.dimension();
    std::vector<Matrix> m(static_cast<std::size_t>(d), Matrix(d, d));
    for (Eigen::Index nu = 0; nu < d; ++nu)
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j) m[static_cast<std::size_t>(nu)](i, j) = s.at(i, j, nu);
    return make_coredinates(s.level2, std::move(m), gate);
}

// Coredinates of an ensemble. Gate failures are recorded, not thrown; use
// require_diag_gate where admissibility is a precondition.
inline Coredinates coredinates(const SignalEnsemble& e, const DiagGate& gate = {})
{
    return coredinates_from_signature(mean_signature(e), gate);
}

inline void require_diag_gate(const Coredinates& core)
{
    if (!core.passes_gate)
        throw Error(ErrorKind::diag_gate,
                    "diagonal second moments fail the admissibility gate (min <mu>_ii = " + std::to_string(core.min_diag) +
                        ", max = " + std::to_string(core.max_diag) + ")");
}

// Vertices mapped u -> A u + b, weights kept.
inline SignalEnsemble pushforward_affine(const SignalEnsemble& e, const Matrix& A, const Vector& b)
{
    const Eigen::Index d = e.dimension();
    require(A.cols() == d && b.size() == A.rows(), "pushforward_affine: dimension mismatch");
    std::vector<PiecewiseLinearPath> out;
    out.reserve(e.size());
    for (const auto& x : e.paths()) {
        Matrix v = x.values() * A.transpose();
        v.rowwise() += b.transpose();
        out.emplace_back(x.times(), std::move(v));
    }
    return SignalEnsemble(std::move(out), e.weights());
}

inline SignalEnsemble pushforward_linear(const SignalEnsemble& e, const Matrix& A)
{
    return pushforward_affine(e, A, Vector::Zero(A.rows()));
}

// Coredinates of the pushforward under u -> A u, from the tensors alone:
// [A mu]_0 = A [mu]_0 A^T and [A mu]_k = A (sum_g a_kg [mu]_g) A^T.
inline Coredinates transform_moments(const Coredinates& core, const Matrix& A, const DiagGate& gate = {})
{
    const Eigen::Index d = core.dimension();
    require(A.rows() == d && A.cols() == d, "transform_moments: A must be d x d");
    Matrix m0 = A * core.m0 * A.transpose();
    std::vector<Matrix> m(static_cast<std::size_t>(d));
    for (Eigen::Index k = 0; k < d; ++k) {
        Matrix mix = Matrix::Zero(d, d);
        for (Eigen::Index g = 0; g < d; ++g) mix += A(k, g) * core.m[static_cast<std::size_t>(g)];
        m[static_cast<std::size_t>(k)] = A * mix * A.transpose();
    }
    return make_coredinates(std::move(m0), std::move(m), gate);
}

// All paths resampled onto the sorted union of their vertex times.
inline SignalEnsemble on_common_grid(const SignalEnsemble& e, std::vector<double>* grid_out = nullptr)
{
    std::vector<double> grid = e.path(0).times();
    bool same = true;
    for (const auto& x : e.paths())
        if (x.times() != grid) {
            same = false;
            grid = merge_grids(grid, x.times());
        }
    if (grid_out) *grid_out = grid;
    if (same) return e;
    std::vector<PiecewiseLinearPath> out;
    out.reserve(e.size());
    for (const auto& x : e.paths()) out.push_back(x.resampled(grid));
    return SignalEnsemble(std::move(out), e.weights());
}

// The product law of d one-dimensional channel ensembles: every combination of
// channel paths, with product weights. If the full product exceeds `cap`,
// `cap` distinct combinations are drawn uniformly from `rng` and their
// weights are renormalized.
inline SignalEnsemble product_ensemble(const std::vector<SignalEnsemble>& channels, std::size_t cap,
                                       RandomStream* rng = nullptr)
{
    require(!channels.empty(), "product_ensemble: no channels");
    std::vector<double> grid{0.0, 1.0};
    for (const auto& ch : channels) {
        require(ch.size() >= 1, "product_ensemble: empty channel");
        require(ch.dimension() == 1, "product_ensemble: channels must be one-dimensional");
        for (const auto& x : ch.paths()) grid = merge_grids(grid, x.times());
    }
    const std::size_t d = channels.size();
    std::vector<std::vector<Vector>> cols(d);
    for (std::size_t c = 0; c < d; ++c)
        for (const auto& x : channels[c].paths()) cols[c].push_back(x.resampled(grid).values().col(0));

    double total_d = 1.0;
    std::size_t total = 1;
    for (const auto& ch : channels) {
        total_d *= static_cast<double>(ch.size());
        total *= ch.size();
    }
    std::vector<std::size_t> flat;
    if (total_d <= static_cast<double>(cap)) {
        flat.resize(total);
        for (std::size_t k = 0; k < total; ++k) flat[k] = k;
    } else {
        require(rng != nullptr, "product_ensemble: sampling below the cap needs a random stream");
        require(total_d < 1.8e19, "product_ensemble: product too large to index");
        flat = sample_without_replacement(*rng, total, cap);
    }

    std::vector<PiecewiseLinearPath> paths;
    std::vector<double> weights;
    paths.reserve(flat.size());
    weights.reserve(flat.size());
    const Eigen::Index n = static_cast<Eigen::Index>(grid.size());
    for (std::size_t f : flat) {
        Matrix v(n, static_cast<Eigen::Index>(d));
        double w = 1.0;
        std::size_t rest = f;
        // last channel varies fastest
        for (std::size_t c = d; c-- > 0;) {
            const std::size_t k = rest % channels[c].size();
            rest /= channels[c].size();
            v.col(static_cast<Eigen::Index>(c)) = cols[c][k];
            w *= channels[c].weight(k);
        }
        paths.emplace_back(grid, std::move(v));
        weights.push_back(w);
    }
    return SignalEnsemble::normalized(std::move(paths), std::move(weights));
}

// max over an equidistant time grid of |E[x_t] - E[x_0]|.
inline double mean_stationarity_gap(const SignalEnsemble& e, std::size_t grid_size)
{
    require(grid_size >= 2, "mean_stationarity_gap: grid size must be >= 2");
    const auto grid = equidistant_grid(grid_size);
    const Vector means = weighted_mean(e, [&](const PiecewiseLinearPath& x) {
        Vector v(static_cast<Eigen::Index>(grid.size()) * x.dimension());
        for (std::size_t k = 0; k < grid.size(); ++k) v.segment(static_cast<Eigen::Index>(k) * x.dimension(), x.dimension()) = x(grid[k]);
        return v;
    });
    const Eigen::Index d = e.dimension();
    double gap = 0.0;
    for (std::size_t k = 1; k < grid.size(); ++k)
        gap = std::max(gap, (means.segment(static_cast<Eigen::Index>(k) * d, d) - means.head(d)).norm());
    return gap;
}

struct IntegrabilityReport {
    double q = 0.0;
    int m = 0;
    double variation_moment = 0.0;   // E ||x||_{1-var}^{m q}
    double max_abs_signature = 0.0;  // over words of length 1..m
    std::vector<double> thresholds;
    std::vector<double> tail;        // max over words of E |sig_w| 1{|sig_w| > a}
};

// Finite-ensemble diagnostics for signature integrability of order (m, q).
// With no thresholds given, a geometric ladder below max |sig_w| is used.
inline IntegrabilityReport integrability_report(const SignalEnsemble& e, double q, int m,
                                                std::vector<double> thresholds = {})
{
    require(q > 1.0, "integrability_report: q must exceed 1");
    require(m >= 1 && m <= 3, "integrability_report: m must be in 1..3");
    const Eigen::Index d = e.dimension();
    Eigen::Index words = 0;
    for (int k = 1, p = 1; k <= m; ++k) {
        p *= static_cast<int>(d);
        words += p;
    }
    std::vector<Vector> sigs(e.size());
    std::vector<double> var(e.size());
    parallel_for(e.size(), [&](std::size_t k) {
        sigs[k] = signature3(e.path(k)).flatten().head(words).cwiseAbs();
        var[k] = std::pow(variation_norm(e.path(k), 1.0), m * q);
    });
    IntegrabilityReport r;
    r.q = q;
    r.m = m;
    CompensatedSum vm;
    for (std::size_t k = 0; k < e.size(); ++k) {
        vm.add(e.weight(k) * var[k]);
        r.max_abs_signature = std::max(r.max_abs_signature, sigs[k].maxCoeff());
    }
    r.variation_moment = vm.value();
    if (thresholds.empty())
        for (int j = 0; j <= 8; ++j) thresholds.push_back(r.max_abs_signature * std::pow(0.5, j));
    r.thresholds = thresholds;
    for (double a : thresholds) {
        Vector acc = Vector::Zero(words);
        for (std::size_t k = 0; k < e.size(); ++k)
            acc += e.weight(k) * (sigs[k].array() > a).select(sigs[k], 0.0);
        r.tail.push_back(acc.maxCoeff());
    }
    return r;
}

}  // namespace sigsep
