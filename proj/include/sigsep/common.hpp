#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace sigsep {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
    invalid_argument,
    parse,
    diag_gate,        // some <mu>_ii vanishes (signal outside the admissible space)
    degenerate_covariance,
    optimizer_failure,
    alignment_degenerate,
    s0_gate,          // more than one vanishing third diagonal moment / singular C
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool cond, const std::string& what, ErrorKind kind = ErrorKind::invalid_argument)
{
    if (!cond) throw Error(kind, what);
}

// Neumaier-compensated accumulator.
struct CompensatedSum {
    double sum = 0.0;
    double comp = 0.0;

    void add(double x) noexcept
    {
        const double t = sum + x;
        if (std::abs(sum) >= std::abs(x))
            comp += (sum - t) + x;
        else
            comp += (x - t) + sum;
        sum = t;
    }
    double value() const noexcept { return sum + comp; }
};

// Pairwise (cascade) summation with a fixed split at n/2, so the result only
// depends on the input order.
inline double pairwise_sum(std::span<const double> xs)
{
    if (xs.empty()) return 0.0;
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.subspan(0, half)) + pairwise_sum(xs.subspan(half));
}

// Elementwise pairwise sum of equally sized vectors, same tree shape as above.
inline Vector pairwise_sum(std::span<const Vector> xs)
{
    require(!xs.empty(), "pairwise_sum: empty input");
    if (xs.size() <= 8) {
        Vector s = xs[0];
        for (std::size_t k = 1; k < xs.size(); ++k) s += xs[k];
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.subspan(0, half)) + pairwise_sum(xs.subspan(half));
}

// Thread count from SIGSEP_THREADS, defaulting to the hardware concurrency.
inline unsigned thread_budget()
{
    if (const char* env = std::getenv("SIGSEP_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

// Runs body(i) for i in [0, n) on contiguous static chunks. Bodies must only
// write to slot i of caller-owned storage; any reduction happens afterwards.
namespace detail {
// Set inside worker threads so nested parallel_for calls run serially.
inline thread_local bool inside_worker = false;
}  // namespace detail

template <class Body>
void parallel_for(std::size_t n, Body&& body)
{
    const std::size_t workers = detail::inside_worker ? 1 : std::min<std::size_t>(thread_budget(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            detail::inside_worker = true;
            try {
                const std::size_t lo = w * chunk;
                const std::size_t hi = std::min(n, lo + chunk);
                for (std::size_t i = lo; i < hi; ++i) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Off-diagonal part of a square matrix.
inline Matrix off_diagonal(const Matrix& m)
{
    Matrix out = m;
    out.diagonal().setZero();
    return out;
}

inline double spectral_norm(const Matrix& m)
{
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()(0);
}

// kappa_2; +inf for singular input.
inline double condition_number(const Matrix& m)
{
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    const double lo = s(s.size() - 1);
    if (lo <= 0.0) return std::numeric_limits<double>::infinity();
    return s(0) / lo;
}

// Rows rescaled to unit Euclidean length.
inline Matrix unit_rows(const Matrix& m)
{
    Matrix out = m;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double n = out.row(i).norm();
        if (n > 0.0) out.row(i) /= n;
    }
    return out;
}

}  // namespace sigsep
