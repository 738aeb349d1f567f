#pragma once

#include "sigsep/assignment.hpp"
#include "sigsep/premetric.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace sigsep {

struct WhiteningResult {
    Matrix R;             // C^{-1/2}, symmetric
    Vector eigenvalues;   // of C, descending
    double condition = 0.0;
};

// Symmetric inverse square root R = Q diag(lambda)^{-1/2} Q^T of the
// symmetrized covariance. Eigenvalues at or below eigen_floor * largest are
// treated as a degenerate (hyperplane-supported) observable.
inline WhiteningResult whiten(const Coredinates& core, double eigen_floor = 1e-12)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(core.c);
    require(es.info() == Eigen::Success, "whiten: eigendecomposition failed", ErrorKind::degenerate_covariance);
    const Vector lam = es.eigenvalues();  // ascending
    const double top = lam(lam.size() - 1);
    if (!(top > 0.0) || lam(0) <= eigen_floor * top)
        throw Error(ErrorKind::degenerate_covariance,
                    "covariance is singular or below the eigenvalue floor (smallest " + std::to_string(lam(0)) +
                        ", largest " + std::to_string(top) + ")");
    WhiteningResult w;
    const Matrix& Q = es.eigenvectors();
    w.R = Q * lam.cwiseSqrt().cwiseInverse().asDiagonal() * Q.transpose();
    w.R = 0.5 * (w.R + w.R.transpose());
    w.eigenvalues = lam.reverse();
    w.condition = top / lam(0);
    return w;
}

// x_0 = N^{-1}[theta chi]_0 N^{-1} and x_nu = N^{-1}[theta chi]_nu N^{-1} / sqrt(<theta chi>_nu nu)
// with N = N_{theta chi}; d + 1 matrices.
inline std::vector<Matrix> normalized_statistics(const Coredinates& core, const Matrix& theta)
{
    const Coredinates t = transform_moments(core, theta);
    for (Eigen::Index i = 0; i < t.dimension(); ++i)
        require(t.m0(i, i) > 0.0, "normalized_statistics: transformed signal has a vanishing diagonal moment",
                ErrorKind::diag_gate);
    const Vector inv = t.n.cwiseInverse();
    std::vector<Matrix> out;
    out.push_back(inv.asDiagonal() * t.m0 * inv.asDiagonal());
    for (std::size_t nu = 0; nu < t.m.size(); ++nu)
        out.push_back(inv(static_cast<Eigen::Index>(nu)) * (inv.asDiagonal() * t.m[nu] * inv.asDiagonal()));
    return out;
}

// phi(theta) = sum_nu || offdiag x_nu(theta R) ||_F^2.
inline double contrast(const Coredinates& core, const Matrix& R, const Matrix& theta)
{
    CompensatedSum s;
    for (const auto& x : normalized_statistics(core, theta * R)) s.add(off_diagonal(x).squaredNorm());
    return s.value();
}

// c_0 [chi]_0^{-1} sum_nu c_nu [chi]_nu for c = (c_0, c_1..c_d).
inline Matrix contracted_statistics(const Coredinates& core, const Vector& c)
{
    const Eigen::Index d = core.dimension();
    require(c.size() == d + 1, "contracted_statistics: need d + 1 coefficients");
    Matrix mix = Matrix::Zero(d, d);
    for (Eigen::Index nu = 0; nu < d; ++nu) mix += c(nu + 1) * core.m[static_cast<std::size_t>(nu)];
    Eigen::FullPivLU<Matrix> lu(core.m0);
    require(lu.isInvertible(), "contracted_statistics: [chi]_0 is singular", ErrorKind::degenerate_covariance);
    return c(0) * lu.solve(mix);
}

struct ContrastDomain {
    double kappa0 = 10.0;
};

struct OptimizerConfig {
    int restarts = 32;
    double tolerance = 1e-10;       // relative contrast change treated as stationary
    int max_iterations = 2000;
    double dedup_tolerance = 1e-6;
    std::uint64_t seed = 0;
    double eigen_floor = 1e-12;
    double barrier_width = 0.25;    // barrier acts on kappa in [kappa0 - width, kappa0)
    double barrier_weight = 1e-2;
};

// Monomial alignment theta_hat ~ M A^{-1} with M = ddiag(beta) P, so that row i
// of theta_hat is close to beta_i times row perm[i] of A^{-1}.
struct Alignment {
    std::vector<int> perm;
    Vector beta;
    Matrix M;
    Matrix E;                 // M^{-1} theta_hat A - I
    double relative_error = 0.0;  // ||theta_hat - M A^{-1}||_F / ||M A^{-1}||_F
};

inline Alignment align_monomial(const Matrix& theta_hat, const Matrix& A, double tol = 1e-12)
{
    const Eigen::Index d = A.rows();
    require(A.cols() == d && theta_hat.rows() == d && theta_hat.cols() == d, "align_monomial: shape mismatch");
    Eigen::FullPivLU<Matrix> lu(A);
    require(lu.isInvertible(), "align_monomial: A is singular", ErrorKind::alignment_degenerate);
    const Matrix Ainv = lu.inverse();
    const Matrix G = theta_hat * A;
    const double scale = G.norm();
    for (Eigen::Index i = 0; i < d; ++i) {
        require(G.row(i).norm() > tol * scale, "align_monomial: gain has a zero row", ErrorKind::alignment_degenerate);
        require(G.col(i).norm() > tol * scale, "align_monomial: gain has a zero column", ErrorKind::alignment_degenerate);
    }
    // Least-squares residual of row i against a multiple of row j of A^{-1}.
    Matrix cost(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
            const double p = theta_hat.row(i).dot(Ainv.row(j));
            cost(i, j) = std::max(0.0, theta_hat.row(i).squaredNorm() - p * p / Ainv.row(j).squaredNorm());
        }
    Alignment a;
    a.perm = solve_assignment(cost);
    a.beta.resize(d);
    a.M = Matrix::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const int j = a.perm[static_cast<std::size_t>(i)];
        a.beta(i) = theta_hat.row(i).dot(Ainv.row(j)) / Ainv.row(j).squaredNorm();
        require(std::abs(a.beta(i)) > tol * theta_hat.row(i).norm() * Ainv.row(j).norm() / Ainv.row(j).squaredNorm(),
                "align_monomial: matched scale vanishes", ErrorKind::alignment_degenerate);
        a.M(i, j) = a.beta(i);
    }
    Matrix Minv = Matrix::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i) Minv(a.perm[static_cast<std::size_t>(i)], i) = 1.0 / a.beta(i);
    a.E = Minv * G - Matrix::Identity(d, d);
    const Matrix target = a.M * Ainv;
    a.relative_error = (theta_hat - target).norm() / target.norm();
    return a;
}

// Distance between two matrices up to signed row permutation: rows are matched
// by the Hungarian method on min(|a_i - b_j|^2, |a_i + b_j|^2).
inline double signed_permutation_distance(const Matrix& a, const Matrix& b)
{
    const Eigen::Index d = a.rows();
    Matrix cost(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            cost(i, j) = std::min((a.row(i) - b.row(j)).squaredNorm(), (a.row(i) + b.row(j)).squaredNorm());
    return std::sqrt(assignment_cost(cost, solve_assignment(cost)));
}

inline bool lexicographic_less(const Matrix& a, const Matrix& b)
{
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            if (a(i, j) != b(i, j)) return a(i, j) < b(i, j);
    return false;
}

// Unit rows, first significant entry of each row positive, rows sorted
// lexicographically. Collapses the signed-permutation orbit to one point.
inline Matrix canonical_form(const Matrix& theta)
{
    Matrix t = unit_rows(theta);
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
        const double big = t.row(i).cwiseAbs().maxCoeff();
        for (Eigen::Index j = 0; j < t.cols(); ++j)
            if (std::abs(t(i, j)) > 1e-8 * big) {
                if (t(i, j) < 0) t.row(i) *= -1.0;
                break;
            }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(t.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
        for (Eigen::Index j = 0; j < t.cols(); ++j)
            if (t(x, j) != t(y, j)) return t(x, j) > t(y, j);
        return false;
    });
    Matrix out(t.rows(), t.cols());
    for (std::size_t k = 0; k < order.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = t.row(order[k]);
    return out;
}

struct TheoremConstants {
    int d = 0;
    double gamma = 0.0;
    double k_d = 0.0;
    double varsigma = 0.0;
    double varsigma1 = 0.0;
    double xi = 0.0;
    double norm_B = 0.0;      // Frobenius norm of B_R
    double kappa_B = 0.0;     // kappa_2(B_R)
    double kappa_B_unit = 0.0;  // kappa_2 of B_R with unit rows
    double kappa0 = 0.0;
    double r0 = 0.0;
    double q0 = 0.0;
    double eps0 = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    double delta = 0.0;          // IC-defect of the source
    double predicted_bound = 0.0;  // c2 delta / (1 - delta)
    bool applicable = false;     // delta <= eps0
    bool estimated = false;      // plug-in from recovered sources rather than ground truth
    std::vector<int> order;      // component order used for varsigma1
};

inline double k_d_constant(int d) { return std::sqrt((d - 1.0) * d * (2.0 * d - 1.0) / 6.0); }

namespace detail {

// Source rescaled to unit diagonal second moments, with the mixing adjusted
// so the observable is unchanged.
inline std::pair<Coredinates, Matrix> normalize_source(const Coredinates& source, const Matrix& A)
{
    require_diag_gate(source);
    const Vector inv = source.n.cwiseInverse();
    return {transform_moments(source, inv.asDiagonal()), A * source.n.asDiagonal()};
}

inline Matrix whitened_inverse(const Coredinates& source_unit, const Matrix& A_unit, double eigen_floor)
{
    const WhiteningResult w = whiten(transform_moments(source_unit, A_unit), eigen_floor);
    return (w.R * A_unit).inverse();
}

}  // namespace detail

// kappa_2 of the unit-row true demixing matrix in the whitened domain.
inline double true_demixing_condition(const Coredinates& source, const Matrix& A, double eigen_floor = 1e-12)
{
    auto [zu, Au] = detail::normalize_source(source, A);
    return condition_number(unit_rows(detail::whitened_inverse(zu, Au, eigen_floor)));
}

// Ground-truth admissibility: invertible covariance and at most one vanishing
// normalized third diagonal moment.
inline void require_s0(const Coredinates& source, double eigen_floor = 1e-12, double third_tol = 1e-12)
{
    require_diag_gate(source);
    Eigen::SelfAdjointEigenSolver<Matrix> es(source.c);
    const Vector lam = es.eigenvalues();
    if (!(lam(lam.size() - 1) > 0.0) || lam(0) <= eigen_floor * lam(lam.size() - 1))
        throw Error(ErrorKind::s0_gate, "source covariance is singular");
    int vanishing = 0;
    for (Eigen::Index i = 0; i < source.dimension(); ++i)
        if (std::abs(source.third(i)) <= third_tol * std::pow(source.second(i), 1.5)) ++vanishing;
    if (vanishing > 1)
        throw Error(ErrorKind::s0_gate, std::to_string(vanishing) + " components have vanishing third diagonal moments");
}

// Constants of the blind-inversion error bound for a ground-truth pair
// (source, A). The source is first rescaled to unit diagonal second moments.
inline TheoremConstants theorem_constants(const Coredinates& source, const Matrix& A, std::optional<double> kappa0 = {},
                                          double delta_kappa = 1.0, double eigen_floor = 1e-12)
{
    const Eigen::Index d = source.dimension();
    require(d >= 2, "theorem_constants: need d >= 2");
    require(A.rows() == d && A.cols() == d, "theorem_constants: A must be d x d");
    require_s0(source, eigen_floor);
    auto [zu, Au] = detail::normalize_source(source, A);

    TheoremConstants k;
    k.d = static_cast<int>(d);
    k.gamma = 1.0 + std::sqrt(5.0);
    k.k_d = k_d_constant(k.d);

    // w_i = <z>_ii^3 / <z>_iii^2; descending order puts a vanishing third moment first.
    std::vector<double> w(static_cast<std::size_t>(d));
    CompensatedSum vs;
    for (Eigen::Index i = 0; i < d; ++i) {
        const double t = zu.third(i);
        const double s = zu.second(i);
        w[static_cast<std::size_t>(i)] = t == 0.0 ? std::numeric_limits<double>::infinity() : s * s * s / (t * t);
        vs.add(t * t / (s * s * s));
    }
    k.varsigma = std::sqrt(vs.value());
    k.order.resize(static_cast<std::size_t>(d));
    std::iota(k.order.begin(), k.order.end(), 0);
    std::stable_sort(k.order.begin(), k.order.end(), [&](int a, int b) { return w[static_cast<std::size_t>(a)] > w[static_cast<std::size_t>(b)]; });
    CompensatedSum v1;
    for (std::size_t pos = 1; pos < k.order.size(); ++pos)
        v1.add(static_cast<double>(pos * pos) * w[static_cast<std::size_t>(k.order[pos])]);
    k.varsigma1 = std::sqrt(v1.value()) / k.k_d;

    const WhiteningResult wr = whiten(transform_moments(zu, Au), eigen_floor);
    const Matrix AR = wr.R * Au;
    const Matrix BR = AR.inverse();
    const Coredinates whitened = transform_moments(zu, AR);
    CompensatedSum xs;
    for (const auto& m : whitened.m) xs.add(m.squaredNorm());
    k.xi = std::sqrt(xs.value());
    k.norm_B = BR.norm();
    k.kappa_B = condition_number(BR);
    k.kappa_B_unit = condition_number(unit_rows(BR));
    k.kappa0 = kappa0.value_or(k.kappa_B_unit + delta_kappa);

    const double sd = std::sqrt(static_cast<double>(d));
    k.r0 = k.kappa0 * k.varsigma1 *
           (k.norm_B / sd * (1.0 + k.kappa0 + (1.0 + k.xi * d) * k.kappa0 * k.kappa_B) + k.kappa_B * k.varsigma);
    k.q0 = 1.0 / (k.gamma * k.k_d * k.r0);
    k.eps0 = k.q0 / (1.0 + k.q0);
    k.c1 = 2.0 * d * k.k_d * k.r0;
    k.c2 = sd * k.kappa_B * k.c1;
    k.delta = ic_defect(source);
    k.predicted_bound = k.delta < 1.0 ? k.c2 * k.delta / (1.0 - k.delta) : std::numeric_limits<double>::infinity();
    k.applicable = k.delta <= k.eps0;
    return k;
}

struct DemixReport {
    std::vector<Matrix> minimizers;          // theta_star = theta R, observable domain
    std::vector<Matrix> whitened_minimizers;  // unit-row theta in the whitened domain
    std::vector<double> contrasts;
    WhiteningResult whitening;
    double kappa0 = 0.0;
    int restarts = 0;
    int converged_restarts = 0;
    bool converged = false;
    std::vector<double> recovered_defects;   // IC-defect of theta_star . chi
    std::vector<Alignment> alignments;       // filled when ground truth is known
    std::optional<TheoremConstants> constants;
    std::vector<std::string> warnings;
};

namespace detail {

// Off-diagonal entries of the normalized statistics of theta . w, in the
// order nu = 0..d, row i, column j != i. Works for double and autodiff scalars.
template <class T>
void contrast_residuals(const Coredinates& w, const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& th, std::vector<T>& out)
{
    using std::sqrt;
    const Eigen::Index d = w.dimension();
    out.clear();
    // P[g][i][j] = sum_ab th(i,a) th(j,b) m_g(a,b), g = 0 is [w]_0
    std::vector<T> P(static_cast<std::size_t>((d + 1) * d * d), T(0.0));
    const auto idx = [d](Eigen::Index g, Eigen::Index i, Eigen::Index j) { return static_cast<std::size_t>((g * d + i) * d + j); };
    std::vector<T> row(static_cast<std::size_t>(d));
    for (Eigen::Index g = 0; g <= d; ++g) {
        const Matrix& m = w.matrix(static_cast<std::size_t>(g));
        for (Eigen::Index i = 0; i < d; ++i) {
            // row = th_i^T m
            for (Eigen::Index b = 0; b < d; ++b) {
                T s(0.0);
                for (Eigen::Index a = 0; a < d; ++a) s += th(i, a) * m(a, b);
                row[static_cast<std::size_t>(b)] = s;
            }
            for (Eigen::Index j = 0; j < d; ++j) {
                T s(0.0);
                for (Eigen::Index b = 0; b < d; ++b) s += row[static_cast<std::size_t>(b)] * th(j, b);
                P[idx(g, i, j)] = s;
            }
        }
    }
    std::vector<T> inv(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < d; ++i) inv[static_cast<std::size_t>(i)] = T(1.0) / sqrt(P[idx(0, i, i)]);
    for (Eigen::Index nu = 0; nu <= d; ++nu) {
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j) {
                if (i == j) continue;
                T v;
                if (nu == 0) {
                    v = P[idx(0, i, j)];
                } else {
                    v = T(0.0);
                    for (Eigen::Index g = 1; g <= d; ++g) v += th(nu - 1, g - 1) * P[idx(g, i, j)];
                    v *= inv[static_cast<std::size_t>(nu - 1)];
                }
                out.push_back(v * inv[static_cast<std::size_t>(i)] * inv[static_cast<std::size_t>(j)]);
            }
    }
}

inline double whitened_contrast(const Coredinates& w, const Matrix& th)
{
    std::vector<double> r;
    contrast_residuals<double>(w, th, r);
    CompensatedSum s;
    for (double x : r) s.add(x * x);
    return s.value();
}

struct BarrierSpec {
    double kappa0;
    double soft;
    double weight;
};

// -weight * log(1 - s^2) with s = (kappa - soft) / (kappa0 - soft), zero below soft.
inline double barrier_value(const BarrierSpec& b, const Matrix& th)
{
    const double k = condition_number(th);
    if (!(k < b.kappa0)) return std::numeric_limits<double>::infinity();
    if (k <= b.soft) return 0.0;
    const double s = (k - b.soft) / (b.kappa0 - b.soft);
    return -b.weight * std::log1p(-s * s);
}

struct RestartResult {
    Matrix theta;
    double contrast = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
};

// Levenberg-Marquardt on the contrast residuals (plus the barrier as one
// extra residual), with rows renormalized after every accepted or trial step.
inline RestartResult optimize_from(const Coredinates& w, Matrix theta, const BarrierSpec& barrier, const OptimizerConfig& cfg)
{
    using Deriv = Eigen::VectorXd;
    using AD = Eigen::AutoDiffScalar<Deriv>;
    using ADMatrix = Eigen::Matrix<AD, Eigen::Dynamic, Eigen::Dynamic>;
    const Eigen::Index d = w.dimension();
    const Eigen::Index nvar = d * d;

    const auto objective = [&](const Matrix& th) { return whitened_contrast(w, th) + barrier_value(barrier, th); };

    theta = unit_rows(theta);
    double F = objective(theta);
    double lambda = 1e-3;
    RestartResult res;
    std::vector<AD> r_ad;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        res.iterations = it + 1;
        ADMatrix th(d, d);
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j) th(i, j) = AD(theta(i, j), nvar, i * d + j);
        contrast_residuals<AD>(w, th, r_ad);
        const Eigen::Index m = static_cast<Eigen::Index>(r_ad.size());
        Matrix J(m + 1, nvar);
        Vector r(m + 1);
        for (Eigen::Index k = 0; k < m; ++k) {
            r(k) = r_ad[static_cast<std::size_t>(k)].value();
            J.row(k) = r_ad[static_cast<std::size_t>(k)].derivatives().transpose();
        }
        const double bval = barrier_value(barrier, theta);
        r(m) = std::sqrt(bval);
        J.row(m).setZero();
        if (bval > 0.0) {
            const double h = 1e-7;
            for (Eigen::Index v = 0; v < nvar; ++v) {
                Matrix tp = theta, tm = theta;
                tp(v / d, v % d) += h;
                tm(v / d, v % d) -= h;
                const double g = (barrier_value(barrier, tp) - barrier_value(barrier, tm)) / (2.0 * h);
                J(m, v) = std::isfinite(g) ? g / (2.0 * r(m)) : 0.0;
            }
        }
        const Matrix H = J.transpose() * J;
        const Vector g = J.transpose() * r;
        if (g.cwiseAbs().maxCoeff() == 0.0 || F < 1e-30) {
            res.converged = true;
            break;
        }
        bool accepted = false;
        double Fn = F;
        Matrix next;
        double step = 0.0;
        while (lambda < 1e20) {
            Matrix damped = H;
            damped.diagonal() += lambda * (H.diagonal() + Vector::Constant(nvar, 1e-12));
            const Vector delta = damped.ldlt().solve(-g);
            Matrix cand = theta;
            for (Eigen::Index v = 0; v < nvar; ++v) cand(v / d, v % d) += delta(v);
            cand = unit_rows(cand);
            const double Fc = objective(cand);
            if (std::isfinite(Fc) && Fc < F) {
                accepted = true;
                Fn = Fc;
                next = cand;
                step = delta.norm();
                lambda = std::max(lambda / 3.0, 1e-15);
                break;
            }
            lambda *= 4.0;
        }
        if (!accepted) {
            // no descent direction left at working precision
            res.converged = true;
            break;
        }
        const double change = F - Fn;
        theta = next;
        F = Fn;
        if (F < 1e-30 || (change <= cfg.tolerance * F && step <= 1e-6)) {
            res.converged = true;
            break;
        }
    }
    res.theta = theta;
    res.contrast = whitened_contrast(w, theta);
    return res;
}

}  // namespace detail

// Multi-start minimization of the contrast over unit-row matrices with
// condition number at most kappa0. Restarts run in parallel from seeded random
// orthogonal starts; the merge is deterministic.
inline DemixReport minimize_contrast(const Coredinates& observable, const ContrastDomain& domain, const OptimizerConfig& cfg = {})
{
    require(domain.kappa0 >= 1.0, "minimize_contrast: kappa0 must be >= 1");
    require(cfg.restarts >= 1, "minimize_contrast: need at least one restart");
    require(cfg.tolerance > 0.0 && cfg.dedup_tolerance > 0.0, "minimize_contrast: tolerances must be positive");
    require_diag_gate(observable);
    const Eigen::Index d = observable.dimension();

    DemixReport rep;
    rep.whitening = whiten(observable, cfg.eigen_floor);
    rep.kappa0 = domain.kappa0;
    rep.restarts = cfg.restarts;
    const Coredinates w = transform_moments(observable, rep.whitening.R);

    const double width = std::min(cfg.barrier_width, 0.5 * (domain.kappa0 - 1.0));
    const detail::BarrierSpec barrier{domain.kappa0 + (domain.kappa0 == 1.0 ? 1e-9 : 0.0), domain.kappa0 - width, cfg.barrier_weight};

    std::vector<detail::RestartResult> runs(static_cast<std::size_t>(cfg.restarts));
    parallel_for(runs.size(), [&](std::size_t k) {
        RandomStream rng(cfg.seed, "restart", k);
        runs[k] = detail::optimize_from(w, rng.orthogonal(d), barrier, cfg);
    });

    std::vector<const detail::RestartResult*> pool;
    for (const auto& r : runs)
        if (r.converged) pool.push_back(&r);
    rep.converged_restarts = static_cast<int>(pool.size());
    rep.converged = !pool.empty();
    if (pool.empty()) {
        rep.warnings.push_back("no restart reached the stationarity tolerance; reporting the best iterate");
        for (const auto& r : runs) pool.push_back(&r);
    }

    struct Candidate {
        Matrix canon;
        double contrast;
    };
    std::vector<Candidate> cands;
    for (const auto* r : pool) cands.push_back({canonical_form(r->theta), r->contrast});
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.contrast != b.contrast) return a.contrast < b.contrast;
        return lexicographic_less(a.canon, b.canon);
    });
    const double best = cands.front().contrast;
    std::vector<Candidate> kept;
    for (const auto& c : cands) {
        if (c.contrast > best + cfg.dedup_tolerance) break;
        bool dup = false;
        for (const auto& k : kept)
            if (signed_permutation_distance(c.canon, k.canon) <= cfg.dedup_tolerance) {
                dup = true;
                break;
            }
        if (!dup) kept.push_back(c);
    }

    struct Out {
        Matrix star, white;
        double contrast;
    };
    std::vector<Out> outs;
    for (const auto& k : kept) outs.push_back({k.canon * rep.whitening.R, k.canon, k.contrast});
    std::sort(outs.begin(), outs.end(), [](const Out& a, const Out& b) { return lexicographic_less(a.star, b.star); });
    for (const auto& o : outs) {
        rep.minimizers.push_back(o.star);
        rep.whitened_minimizers.push_back(o.white);
        rep.contrasts.push_back(o.contrast);
        rep.recovered_defects.push_back(ic_defect(transform_moments(observable, o.star)));
        if (condition_number(o.white) > domain.kappa0 * (1.0 + 1e-9))
            rep.warnings.push_back("a reported minimizer exceeds the condition bound");
    }

    // Identifiability breaks down when two recovered components both have
    // (numerically) vanishing normalized third moments.
    if (!rep.minimizers.empty()) {
        const Coredinates y = transform_moments(observable, rep.minimizers.front());
        int small = 0;
        for (Eigen::Index i = 0; i < d; ++i)
            if (std::abs(y.third(i)) / std::pow(y.second(i), 1.5) < 1e-8) ++small;
        if (small >= 2)
            rep.warnings.push_back("breakdown: at least two recovered components have vanishing third-moment ratios");
    }
    return rep;
}

// Aligns every minimizer against the true mixing and attaches the constants.
inline void attach_ground_truth(DemixReport& rep, const Coredinates& source, const Matrix& A, double eigen_floor = 1e-12)
{
    rep.alignments.clear();
    for (const auto& m : rep.minimizers) rep.alignments.push_back(align_monomial(m, A));
    rep.constants = theorem_constants(source, A, rep.kappa0, 0.0, eigen_floor);
}

// Blind mode: constants computed from the best minimizer's unmixed statistics
// and its inverse as the mixing; marked as estimated.
inline void attach_plugin_constants(DemixReport& rep, const Coredinates& observable, double eigen_floor = 1e-12)
{
    if (rep.minimizers.empty()) return;
    const Matrix& best = rep.minimizers.front();
    try {
        TheoremConstants k = theorem_constants(transform_moments(observable, best), best.inverse(), rep.kappa0, 0.0, eigen_floor);
        k.estimated = true;
        rep.constants = k;
    } catch (const Error& e) {
        rep.warnings.push_back(std::string("plug-in constants unavailable: ") + e.what());
    }
}

// sup over paired paths and times of |X_t - Y_t| / |Y_t|, with the ratio set
// to 0 wherever Y_t = 0. An empty grid means the union of both vertex grids.
inline double relative_path_error(const SignalEnsemble& estimate, const SignalEnsemble& target, const std::vector<double>& grid = {})
{
    require(estimate.size() == target.size() && estimate.dimension() == target.dimension(),
            "relative_path_error: ensembles differ in shape");
    std::vector<double> worst(estimate.size(), 0.0);
    parallel_for(estimate.size(), [&](std::size_t k) {
        const auto& x = estimate.path(k);
        const auto& y = target.path(k);
        const std::vector<double> ts = grid.empty() ? merge_grids(x.times(), y.times()) : grid;
        double w = 0.0;
        for (double t : ts) {
            const Vector yt = y(t);
            const double den = yt.norm();
            if (den == 0.0) continue;
            w = std::max(w, (x(t) - yt).norm() / den);
        }
        worst[k] = w;
    });
    return *std::max_element(worst.begin(), worst.end());
}

struct DevianceConfig {
    std::size_t max_points = 2000;
    int grid_half_width = 2;   // offsets -w..w per axis
    int levels = 6;
};

// Upper estimate of the deviance of an inversion set at (source, f): for
// each B, the monomial M comes from align_monomial(B, A) and the offset v is
// searched on a coarse-to-fine grid around M^{-1} B b.
inline double estimate_deviance(const std::vector<Matrix>& theta_set, const AffineMap& f, const SignalEnsemble& source,
                                const DevianceConfig& cfg = {})
{
    const Eigen::Index d = source.dimension();
    std::vector<Vector> pts;
    std::size_t total = 0;
    for (const auto& x : source.paths()) total += x.size();
    const std::size_t stride = std::max<std::size_t>(1, (total + cfg.max_points - 1) / cfg.max_points);
    std::size_t counter = 0;
    for (const auto& x : source.paths())
        for (std::size_t k = 0; k < x.size(); ++k)
            if (counter++ % stride == 0) pts.push_back(x.vertex(k));
    const BoundingBox box = BoundingBox::of(source);
    const double span = std::max((box.hi - box.lo).norm(), 1e-12);

    double sup = 0.0;
    for (const auto& B : theta_set) {
        const Alignment al = align_monomial(B, f.A);
        std::vector<Vector> image;
        image.reserve(pts.size());
        for (const auto& s : pts) image.push_back(B * f(s));
        const auto rho = [&](const Vector& v) {
            double r = 0.0;
            for (std::size_t k = 0; k < pts.size(); ++k) {
                const Vector mu = al.M * (pts[k] + v);
                const double den = mu.norm();
                if (den == 0.0) continue;
                r = std::max(r, (image[k] - mu).norm() / den);
            }
            return r;
        };
        Vector centre = al.M.fullPivLu().solve(B * f.b);
        double best = rho(centre);
        double h = 0.25 * span;
        const int wdt = cfg.grid_half_width;
        const int side = 2 * wdt + 1;
        long long cells = 1;
        for (Eigen::Index i = 0; i < d; ++i) cells *= side;
        for (int level = 0; level < cfg.levels; ++level) {
            Vector best_v = centre;
            for (long long c = 0; c < cells; ++c) {
                Vector v = centre;
                long long rest = c;
                for (Eigen::Index i = 0; i < d; ++i) {
                    v(i) += h * static_cast<double>(rest % side - wdt);
                    rest /= side;
                }
                const double r = rho(v);
                if (r < best) {
                    best = r;
                    best_v = v;
                }
            }
            centre = best_v;
            h *= 0.5;
        }
        sup = std::max(sup, best);
    }
    return sup;
}

}  // namespace sigsep
