#pragma once

#include "sigsep/common.hpp"

#include <vector>

namespace sigsep {

// Minimum-cost perfect matching on a square cost matrix (Hungarian method
// with potentials, O(n^3)). Returns col[i], the column assigned to row i.
inline std::vector<int> solve_assignment(const Matrix& cost)
{
    const int n = static_cast<int>(cost.rows());
    require(cost.cols() == n, "solve_assignment: cost matrix must be square");
    for (Eigen::Index k = 0; k < cost.size(); ++k) require(std::isfinite(cost.data()[k]), "solve_assignment: non-finite cost");
    const double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays; row 0 / column 0 are sentinels
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, false);
        do {
            used[j0] = true;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] != 0) col[p[j] - 1] = j - 1;
    return col;
}

inline double assignment_cost(const Matrix& cost, const std::vector<int>& col)
{
    double s = 0.0;
    for (std::size_t i = 0; i < col.size(); ++i) s += cost(static_cast<Eigen::Index>(i), col[i]);
    return s;
}

}  // namespace sigsep
