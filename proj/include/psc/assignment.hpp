#pragma once

// Minimum-cost perfect assignment on square cost matrices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "psc/error.hpp"

namespace psc {

/// Row-major square cost matrix.
class CostMatrix {
public:
    CostMatrix() = default;
    explicit CostMatrix(std::size_t n, double fill = 0.0) : n_(n), values_(n * n, fill) {}
    CostMatrix(std::size_t n, std::vector<double> values) : n_(n), values_(std::move(values)) {
        if (values_.size() != n_ * n_) {
            throw InvalidArgument("CostMatrix: expected " + std::to_string(n_ * n_) + " values, got " +
                                  std::to_string(values_.size()));
        }
    }
    CostMatrix(std::initializer_list<std::initializer_list<double>> rows) : n_(rows.size()) {
        values_.reserve(n_ * n_);
        for (const auto& row : rows) {
            if (row.size() != n_) {
                throw InvalidArgument("CostMatrix: matrix is not square");
            }
            values_.insert(values_.end(), row.begin(), row.end());
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return n_; }
    [[nodiscard]] double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * n_ + c]; }
    [[nodiscard]] double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * n_ + c]; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept { return {values_.data() + r * n_, n_}; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }

    [[nodiscard]] CostMatrix transposed() const {
        CostMatrix t(n_);
        for (std::size_t r = 0; r < n_; ++r) {
            for (std::size_t c = 0; c < n_; ++c) {
                t(c, r) = (*this)(r, c);
            }
        }
        return t;
    }

    friend bool operator==(const CostMatrix&, const CostMatrix&) = default;

private:
    std::size_t n_ = 0;
    std::vector<double> values_;
};

struct AssignmentResult {
    /// Row i is assigned column mapping[i].
    std::vector<std::size_t> mapping;
    double total_cost = 0.0;
};

/// Sum of cost(i, mapping[i]) in row order.
inline double assignment_cost(const CostMatrix& cost, std::span<const std::size_t> mapping) {
    double total = 0.0;
    for (std::size_t i = 0; i < mapping.size(); ++i) {
        total += cost(i, mapping[i]);
    }
    return total;
}

namespace detail {

inline void require_finite(const CostMatrix& cost, const char* who) {
    for (double v : cost.values()) {
        if (!std::isfinite(v)) {
            throw InvalidArgument(std::string(who) + ": cost matrix has a non-finite entry");
        }
    }
}

// Shortest augmenting path Hungarian method with dual potentials. On return
// `row_to_col` is an optimal assignment and (u, v) is a feasible dual with
// u[i] + v[j] <= cost(i, j), tight on the assignment.
inline void hungarian(const CostMatrix& cost, std::vector<std::size_t>& row_to_col, std::vector<double>& u,
                      std::vector<double>& v) {
    const std::size_t n = cost.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
    // 1-based internally; index 0 is the virtual source column.
    std::vector<double> pu(n + 1, 0.0);
    std::vector<double> pv(n + 1, 0.0);
    std::vector<std::size_t> col_owner(n + 1, 0);
    std::vector<std::size_t> way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        col_owner[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = col_owner[j0];
            double delta = inf;
            std::size_t j1 = none;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j] != 0) {
                    continue;
                }
                const double cur = cost(i0 - 1, j - 1) - pu[i0] - pv[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j] != 0) {
                    pu[col_owner[j]] += delta;
                    pv[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (col_owner[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    row_to_col.assign(n, 0);
    for (std::size_t j = 1; j <= n; ++j) {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    u.assign(pu.begin() + 1, pu.end());
    v.assign(pv.begin() + 1, pv.end());
}

// Tries to give column `target` (freed) to `row` through an alternating path
// over tight edges, touching only unfixed rows.
inline bool alternate(std::size_t row, std::size_t target, const std::vector<std::vector<std::size_t>>& tight,
                      std::vector<std::size_t>& row_to_col, std::vector<std::size_t>& col_to_row,
                      const std::vector<char>& fixed_row, std::vector<char>& visited_col) {
    for (std::size_t c : tight[row]) {
        if (visited_col[c] != 0) {
            continue;
        }
        visited_col[c] = 1;
        if (c == target) {
            row_to_col[row] = c;
            col_to_row[c] = row;
            return true;
        }
        const std::size_t owner = col_to_row[c];
        if (fixed_row[owner] != 0 || owner == row) {
            continue;
        }
        if (alternate(owner, target, tight, row_to_col, col_to_row, fixed_row, visited_col)) {
            row_to_col[row] = c;
            col_to_row[c] = row;
            return true;
        }
    }
    return false;
}

} // namespace detail

/// Exact minimum-cost assignment in O(K^3).
///
/// Among optimal assignments the lexicographically smallest mapping is
/// returned. Optimal assignments are exactly the perfect matchings on the
/// edges that are tight under the optimal dual, so rows are fixed greedily to
/// their smallest tight column that still admits a perfect matching.
inline AssignmentResult solve_assignment(const CostMatrix& cost) {
    detail::require_finite(cost, "solve_assignment");
    const std::size_t n = cost.size();
    if (n == 0) {
        return {};
    }
    std::vector<std::size_t> row_to_col;
    std::vector<double> u;
    std::vector<double> v;
    detail::hungarian(cost, row_to_col, u, v);

    double scale = 1.0;
    for (double c : cost.values()) {
        scale = std::max(scale, std::abs(c));
    }
    const double tol = 1e-12 * scale * static_cast<double>(n);

    std::vector<std::vector<std::size_t>> tight(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j == row_to_col[i] || cost(i, j) - u[i] - v[j] <= tol) {
                tight[i].push_back(j);
            }
        }
    }
    std::vector<std::size_t> col_to_row(n);
    for (std::size_t i = 0; i < n; ++i) {
        col_to_row[row_to_col[i]] = i;
    }
    std::vector<char> fixed_row(n, 0);
    std::vector<char> visited(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t current = row_to_col[i];
        for (std::size_t j : tight[i]) {
            if (j >= current) {
                break;
            }
            const std::size_t owner = col_to_row[j];
            if (fixed_row[owner] != 0) {
                continue;
            }
            // Snapshot so a failed search leaves the matching untouched.
            auto saved_r2c = row_to_col;
            auto saved_c2r = col_to_row;
            fixed_row[i] = 1;
            row_to_col[i] = j;
            col_to_row[j] = i;
            std::fill(visited.begin(), visited.end(), 0);
            visited[j] = 1;
            if (detail::alternate(owner, current, tight, row_to_col, col_to_row, fixed_row, visited)) {
                break;
            }
            fixed_row[i] = 0;
            row_to_col = std::move(saved_r2c);
            col_to_row = std::move(saved_c2r);
        }
        fixed_row[i] = 1;
    }
    AssignmentResult result{std::move(row_to_col), 0.0};
    result.total_cost = assignment_cost(cost, result.mapping);
    return result;
}

/// Exhaustive enumeration in lexicographic permutation order; K <= 9.
inline AssignmentResult brute_force_assignment(const CostMatrix& cost) {
    detail::require_finite(cost, "brute_force_assignment");
    const std::size_t n = cost.size();
    if (n > 9) {
        throw InvalidArgument("brute_force_assignment: K=" + std::to_string(n) + " exceeds 9");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    AssignmentResult best{perm, assignment_cost(cost, perm)};
    while (std::next_permutation(perm.begin(), perm.end())) {
        const double c = assignment_cost(cost, perm);
        if (c < best.total_cost) {
            best = {perm, c};
        }
    }
    return best;
}

} // namespace psc
