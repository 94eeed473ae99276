#pragma once

#include "sf2m/core.hpp"
#include "sf2m/point_cloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace sf2m {

enum class CostKind { sq_euclidean, geodesic };

struct CostMatrix {
    Matrix values;
    CostKind kind = CostKind::sq_euclidean;

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }
};

/// values(i, j) = ||a_i - b_j||^2.
inline CostMatrix cost_sq_euclidean(const PointCloud& a, const PointCloud& b) {
    if (a.dim() != b.dim()) throw ConfigError("cost_sq_euclidean: dimension mismatch");
    const Matrix& pa = a.points();
    const Matrix& pb = b.points();
    const Vector na = pa.rowwise().squaredNorm();
    const Vector nb = pb.rowwise().squaredNorm();
    Matrix c = (-2.0 * pa * pb.transpose());
    c.colwise() += na;
    c.rowwise() += nb.transpose();
    c = c.cwiseMax(0.0); // guard FP cancellation
    if (&a == &b) c.diagonal().setZero();
    return CostMatrix{std::move(c), CostKind::sq_euclidean};
}

enum class LaplacianKind { symmetric_normalized, unnormalized };

struct GeodesicCost {
    CostMatrix cost;       // sqrt(-log H_t), restricted to a-rows x b-cols
    Index clamped_entries; // kernel entries below the clamp floor (disconnected pairs)
    bool disconnected_warning;
};

// Heat-kernel geodesic cost over the union of two clouds: symmetric kNN graph,
// graph Laplacian L, H_t = exp(-t L) by dense eigendecomposition, entries
// clamped to [1e-12, 1] before the log. Dense regime: union size <= 5000.
inline GeodesicCost cost_geodesic(const PointCloud& a, const PointCloud& b, Index k, double t_heat,
                                  LaplacianKind lap = LaplacianKind::symmetric_normalized) {
    if (a.dim() != b.dim()) throw ConfigError("cost_geodesic: dimension mismatch");
    // identical clouds share one set of graph nodes; duplicating them would
    // distort the kernel (the duplicate pair, not the node itself, would carry
    // the self-heat) and break diagonal dominance of exp(-tL)
    const bool same = a.size() == b.size() && a.points() == b.points();
    const Index na = a.size(), nb = b.size(), n = same ? na : na + nb;
    if (n > 5000) throw ConfigError("cost_geodesic: union exceeds the dense eigendecomposition regime (5000)");
    if (k < 1) throw ConfigError("cost_geodesic: k must be >= 1");
    if (k >= n) throw ConfigError("cost_geodesic: k must be smaller than the union size");
    if (t_heat < 0) throw ConfigError("cost_geodesic: t_heat must be >= 0");

    Matrix pts(n, a.dim());
    pts.topRows(na) = a.points();
    if (!same) pts.bottomRows(nb) = b.points();

    // symmetric kNN adjacency (unweighted)
    Matrix w = Matrix::Zero(n, n);
    const Vector sq = pts.rowwise().squaredNorm();
    std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        Vector di = sq.array() + sq(i) - 2.0 * (pts * pts.row(i).transpose()).array();
        for (Index j = 0; j < n; ++j) dist[static_cast<std::size_t>(j)] = {di(j), j};
        dist[static_cast<std::size_t>(i)].first = std::numeric_limits<double>::infinity(); // no self edge
        std::nth_element(dist.begin(), dist.begin() + k - 1, dist.end());
        for (Index r = 0; r < k; ++r) {
            const Index j = dist[static_cast<std::size_t>(r)].second;
            w(i, j) = 1.0;
            w(j, i) = 1.0;
        }
    }

    Vector deg = w.rowwise().sum();
    Matrix L;
    if (lap == LaplacianKind::unnormalized) {
        L = -w;
        L.diagonal() += deg;
    } else {
        const Vector dinv = deg.array().max(1e-300).rsqrt();
        L = -(dinv.asDiagonal() * w * dinv.asDiagonal());
        L.diagonal().array() += 1.0;
    }

    Eigen::SelfAdjointEigenSolver<Matrix> eig(L);
    if (eig.info() != Eigen::Success) throw NumericError("cost_geodesic: eigendecomposition failed");
    const Vector ev = (-t_heat * eig.eigenvalues().array()).exp();
    Matrix h = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();

    constexpr double kClampFloor = 1e-12;
    Index clamped = 0;
    const Index col_base = same ? 0 : na;
    Matrix c(na, nb);
    for (Index i = 0; i < na; ++i) {
        for (Index j = 0; j < nb; ++j) {
            double hij = h(i, col_base + j);
            if (hij < kClampFloor) {
                hij = kClampFloor;
                ++clamped;
            } else if (hij > 1.0) {
                hij = 1.0;
            }
            c(i, j) = std::sqrt(-std::log(hij));
        }
    }
    return GeodesicCost{CostMatrix{std::move(c), CostKind::geodesic}, clamped, clamped > 0};
}

/// Nonnegative transport plan with prescribed marginals, plus solver diagnostics.
struct CouplingPlan {
    Matrix matrix;
    Vector row_marginal;
    Vector col_marginal;
    double epsilon = 0.0;
    double cost = 0.0;

    int iterations = 0;
    double marginal_error = 0.0; // max row/col sum violation actually achieved
    bool converged = true;

    void validate(double tol) const {
        if ((matrix.array() < 0.0).any()) throw NumericError("CouplingPlan: negative entry");
        const double row_err = (matrix.rowwise().sum() - row_marginal).cwiseAbs().maxCoeff();
        const double col_err = (matrix.colwise().sum().transpose() - col_marginal).cwiseAbs().maxCoeff();
        if (std::max(row_err, col_err) > tol)
            throw NumericError("CouplingPlan: marginal violation " + std::to_string(std::max(row_err, col_err)));
    }

    double measured_marginal_error() const {
        const double row_err = (matrix.rowwise().sum() - row_marginal).cwiseAbs().maxCoeff();
        const double col_err = (matrix.colwise().sum().transpose() - col_marginal).cwiseAbs().maxCoeff();
        return std::max(row_err, col_err);
    }
};

namespace detail {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct AssignmentResult {
    std::vector<Index> row_to_col;
    std::vector<Index> col_to_row;
    double cost = 0.0;
};

// Dense linear assignment, Jonker-Volgenant style: column reduction,
// reduction transfer, two augmenting-row-reduction sweeps, then shortest
// augmenting paths for the remaining free rows.
inline AssignmentResult assignment_jv(const RowMajorMatrix& cost) {
    const Index n = cost.rows();
    if (cost.cols() != n) throw ConfigError("assignment_jv: matrix must be square");
    AssignmentResult res;
    res.row_to_col.assign(static_cast<std::size_t>(n), -1);
    res.col_to_row.assign(static_cast<std::size_t>(n), -1);
    if (n == 1) {
        res.row_to_col[0] = 0;
        res.col_to_row[0] = 0;
        res.cost = cost(0, 0);
        return res;
    }

    constexpr double kInf = std::numeric_limits<double>::infinity();
    auto& rowsol = res.row_to_col;
    auto& colsol = res.col_to_row;
    Vector v(n);
    std::vector<Index> matches(static_cast<std::size_t>(n), 0);

    // column reduction, reverse order
    for (Index j = n - 1; j >= 0; --j) {
        double minv = cost(0, j);
        Index imin = 0;
        for (Index i = 1; i < n; ++i) {
            if (cost(i, j) < minv) {
                minv = cost(i, j);
                imin = i;
            }
        }
        v(j) = minv;
        if (++matches[static_cast<std::size_t>(imin)] == 1) {
            rowsol[static_cast<std::size_t>(imin)] = j;
            colsol[static_cast<std::size_t>(j)] = imin;
        }
    }

    // reduction transfer from singly-assigned rows
    std::vector<Index> free_rows;
    free_rows.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        if (matches[static_cast<std::size_t>(i)] == 0) {
            free_rows.push_back(i);
        } else if (matches[static_cast<std::size_t>(i)] == 1) {
            const Index j1 = rowsol[static_cast<std::size_t>(i)];
            double min2 = kInf;
            for (Index j = 0; j < n; ++j)
                if (j != j1) min2 = std::min(min2, cost(i, j) - v(j));
            if (min2 < kInf) v(j1) -= min2;
        }
    }

    // Two passes of augmenting row reduction. With real-valued costs the
    // immediate-retry rule can stall: the dual decrement u2 - u1 may round to
    // no change in v(j1), so unlike the integer-cost setting there is no
    // progress guarantee. A per-pass budget hands leftovers to the shortest
    // augmenting path phase, which always terminates.
    Index num_free = static_cast<Index>(free_rows.size());
    for (int pass = 0; pass < 2 && num_free > 0; ++pass) {
        Index k = 0;
        const Index prev_free = num_free;
        num_free = 0;
        Index budget = 16 * prev_free + 64;
        while (k < prev_free) {
            if (--budget < 0) {
                while (k < prev_free)
                    free_rows[static_cast<std::size_t>(num_free++)] = free_rows[static_cast<std::size_t>(k++)];
                break;
            }
            const Index i = free_rows[static_cast<std::size_t>(k)];
            ++k;
            double u1 = cost(i, 0) - v(0), u2 = kInf;
            Index j1 = 0, j2 = -1;
            for (Index j = 1; j < n; ++j) {
                const double h = cost(i, j) - v(j);
                if (h < u2) {
                    if (h >= u1) {
                        u2 = h;
                        j2 = j;
                    } else {
                        u2 = u1;
                        j2 = j1;
                        u1 = h;
                        j1 = j;
                    }
                }
            }
            Index i0 = colsol[static_cast<std::size_t>(j1)];
            if (u1 < u2) {
                v(j1) -= u2 - u1;
            } else if (i0 >= 0 && j2 >= 0) {
                j1 = j2;
                i0 = colsol[static_cast<std::size_t>(j1)];
            }
            rowsol[static_cast<std::size_t>(i)] = j1;
            colsol[static_cast<std::size_t>(j1)] = i;
            if (i0 >= 0) {
                if (u1 < u2) {
                    --k;
                    free_rows[static_cast<std::size_t>(k)] = i0; // retry displaced row immediately
                } else {
                    free_rows[static_cast<std::size_t>(num_free)] = i0;
                    ++num_free;
                }
            }
        }
    }

    // shortest augmenting paths for the remaining free rows
    std::vector<Index> pred(static_cast<std::size_t>(n));
    std::vector<Index> cols(static_cast<std::size_t>(n));
    Vector d(n);
    for (Index f = 0; f < num_free; ++f) {
        const Index free_row = free_rows[static_cast<std::size_t>(f)];
        for (Index j = 0; j < n; ++j) {
            d(j) = cost(free_row, j) - v(j);
            pred[static_cast<std::size_t>(j)] = free_row;
            cols[static_cast<std::size_t>(j)] = j;
        }
        Index lo = 0, up = 0, last = -1;
        Index endofpath = -1;
        double min_d = 0.0;
        bool found = false;
        do {
            if (up == lo) {
                last = lo - 1;
                min_d = d(cols[static_cast<std::size_t>(up)]);
                ++up;
                for (Index p = up; p < n; ++p) {
                    const Index j = cols[static_cast<std::size_t>(p)];
                    const double h = d(j);
                    if (h <= min_d) {
                        if (h < min_d) {
                            up = lo;
                            min_d = h;
                        }
                        cols[static_cast<std::size_t>(p)] = cols[static_cast<std::size_t>(up)];
                        cols[static_cast<std::size_t>(up)] = j;
                        ++up;
                    }
                }
                for (Index p = lo; p < up; ++p) {
                    const Index j = cols[static_cast<std::size_t>(p)];
                    if (colsol[static_cast<std::size_t>(j)] < 0) {
                        endofpath = j;
                        found = true;
                        break;
                    }
                }
            }
            if (!found) {
                const Index j1 = cols[static_cast<std::size_t>(lo)];
                ++lo;
                const Index i = colsol[static_cast<std::size_t>(j1)];
                const double h = cost(i, j1) - v(j1) - min_d;
                for (Index p = up; p < n; ++p) {
                    const Index j = cols[static_cast<std::size_t>(p)];
                    const double v2 = cost(i, j) - v(j) - h;
                    if (v2 < d(j)) {
                        pred[static_cast<std::size_t>(j)] = i;
                        if (v2 == min_d) {
                            if (colsol[static_cast<std::size_t>(j)] < 0) {
                                endofpath = j;
                                found = true;
                                break;
                            }
                            cols[static_cast<std::size_t>(p)] = cols[static_cast<std::size_t>(up)];
                            cols[static_cast<std::size_t>(up)] = j;
                            ++up;
                        }
                        d(j) = v2;
                    }
                }
            }
        } while (!found);

        for (Index p = 0; p <= last; ++p) {
            const Index j = cols[static_cast<std::size_t>(p)];
            v(j) += d(j) - min_d;
        }
        Index jcur = endofpath;
        for (;;) {
            const Index i = pred[static_cast<std::size_t>(jcur)];
            colsol[static_cast<std::size_t>(jcur)] = i;
            std::swap(rowsol[static_cast<std::size_t>(i)], jcur);
            if (i == free_row) break;
        }
    }

    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
        const Index j = rowsol[static_cast<std::size_t>(i)];
        if (j < 0 || colsol[static_cast<std::size_t>(j)] != i)
            throw NumericError("assignment_jv: incomplete assignment");
        total += cost(i, j);
    }
    res.cost = total;
    return res;
}

// Transportation simplex (MODI) for general marginals. Basis is a spanning
// tree over row and column nodes; entering arc by most negative reduced cost
// with a Bland fallback after long degenerate streaks.
class TransportSimplex {
public:
    TransportSimplex(const Matrix& cost, const Vector& supply, const Vector& demand)
        : c_(cost), a_(supply), b_(demand), n_(supply.size()), m_(demand.size()) {}

    struct Result {
        Matrix plan;
        double cost;
    };

    Result solve() {
        init_northwest();
        compute_potentials();
        const double scale = 1.0 + c_.cwiseAbs().maxCoeff();
        const double tol = 1e-12 * scale;
        const Index max_pivots = 400 * (n_ + m_) * (n_ + m_) + 1000;
        Index degenerate_streak = 0;
        bool bland = false;
        for (Index pivot = 0;; ++pivot) {
            if (pivot > max_pivots) throw NumericError("transport simplex: pivot limit exceeded");
            auto [ei, ej, red] = find_entering(tol, bland);
            if (ei < 0) break;
            const double theta = pivot_step(ei, ej);
            if (theta <= 0.0) {
                if (++degenerate_streak > 10 * (n_ + m_)) bland = true;
            } else {
                degenerate_streak = 0;
                bland = false;
            }
            compute_potentials();
        }
        rebuild_flows_exact();

        Result r;
        r.plan = Matrix::Zero(n_, m_);
        double total = 0.0;
        for (const Arc& arc : arcs_) {
            if (!arc.in_basis) continue;
            const double f = std::max(arc.flow, 0.0);
            r.plan(arc.row, arc.col) += f;
            total += f * c_(arc.row, arc.col);
        }
        r.cost = total;
        return r;
    }

private:
    struct Arc {
        Index row, col;
        double flow;
        bool in_basis;
    };

    const Matrix& c_;
    Vector a_, b_;
    Index n_, m_;
    std::vector<Arc> arcs_;
    std::vector<std::vector<Index>> adj_; // node -> basic arc ids; cols offset by n_
    Vector u_, v_;
    Index scan_start_ = 0;

    void add_arc(Index i, Index j, double f) {
        const Index id = static_cast<Index>(arcs_.size());
        arcs_.push_back(Arc{i, j, f, true});
        adj_[static_cast<std::size_t>(i)].push_back(id);
        adj_[static_cast<std::size_t>(n_ + j)].push_back(id);
    }

    void drop_arc(Index id) {
        arcs_[static_cast<std::size_t>(id)].in_basis = false;
        auto scrub = [&](Index node) {
            auto& lst = adj_[static_cast<std::size_t>(node)];
            lst.erase(std::remove(lst.begin(), lst.end(), id), lst.end());
        };
        scrub(arcs_[static_cast<std::size_t>(id)].row);
        scrub(n_ + arcs_[static_cast<std::size_t>(id)].col);
    }

    void init_northwest() {
        adj_.assign(static_cast<std::size_t>(n_ + m_), {});
        arcs_.clear();
        arcs_.reserve(static_cast<std::size_t>(n_ + m_));
        Vector arem = a_, brem = b_;
        Index i = 0, j = 0;
        while (true) {
            const double f = std::min(arem(i), brem(j));
            add_arc(i, j, f);
            arem(i) -= f;
            brem(j) -= f;
            if (i == n_ - 1 && j == m_ - 1) break;
            if (arem(i) <= brem(j) && i < n_ - 1)
                ++i;
            else if (j < m_ - 1)
                ++j;
            else
                ++i;
        }
    }

    void compute_potentials() {
        u_.setConstant(n_, std::numeric_limits<double>::quiet_NaN());
        v_.setConstant(m_, std::numeric_limits<double>::quiet_NaN());
        std::vector<Index> stack{0};
        u_(0) = 0.0;
        while (!stack.empty()) {
            const Index node = stack.back();
            stack.pop_back();
            for (const Index id : adj_[static_cast<std::size_t>(node)]) {
                const Arc& arc = arcs_[static_cast<std::size_t>(id)];
                const Index other = (node < n_) ? n_ + arc.col : arc.row;
                const bool known = other < n_ ? !std::isnan(u_(other)) : !std::isnan(v_(other - n_));
                if (known) continue;
                if (other < n_)
                    u_(other) = c_(arc.row, arc.col) - v_(arc.col);
                else
                    v_(other - n_) = c_(arc.row, arc.col) - u_(arc.row);
                stack.push_back(other);
            }
        }
    }

    std::tuple<Index, Index, double> find_entering(double tol, bool bland) const {
        const Index total = n_ * m_;
        if (bland) {
            for (Index t = 0; t < total; ++t) {
                const Index i = t / m_, j = t % m_;
                if (c_(i, j) - u_(i) - v_(j) < -tol) return {i, j, c_(i, j) - u_(i) - v_(j)};
            }
            return {-1, -1, 0.0};
        }
        // block pricing: scan from a rotating start, return the block's best
        const Index block = std::max<Index>(512, total / 16);
        Index best_i = -1, best_j = -1;
        double best = -tol;
        Index scanned = 0;
        Index t = scan_start_;
        while (scanned < total) {
            const Index stop = std::min(scanned + block, total);
            for (; scanned < stop; ++scanned, t = (t + 1 == total ? 0 : t + 1)) {
                const Index i = t / m_, j = t % m_;
                const double red = c_(i, j) - u_(i) - v_(j);
                if (red < best) {
                    best = red;
                    best_i = i;
                    best_j = j;
                }
            }
            if (best_i >= 0) break;
        }
        const_cast<TransportSimplex*>(this)->scan_start_ = t;
        if (best_i < 0) return {-1, -1, 0.0};
        return {best_i, best_j, best};
    }

    // Cycle = entering arc + tree path between its endpoints; returns theta.
    double pivot_step(Index ei, Index ej) {
        // BFS in the basis tree from row node ei to col node n_+ej
        const Index nn = n_ + m_;
        std::vector<Index> parent_arc(static_cast<std::size_t>(nn), -1);
        std::vector<Index> parent_node(static_cast<std::size_t>(nn), -1);
        std::vector<char> seen(static_cast<std::size_t>(nn), 0);
        std::vector<Index> queue{ei};
        seen[static_cast<std::size_t>(ei)] = 1;
        for (std::size_t qh = 0; qh < queue.size(); ++qh) {
            const Index node = queue[qh];
            if (node == n_ + ej) break;
            for (const Index id : adj_[static_cast<std::size_t>(node)]) {
                const Arc& arc = arcs_[static_cast<std::size_t>(id)];
                const Index other = (node < n_) ? n_ + arc.col : arc.row;
                if (seen[static_cast<std::size_t>(other)]) continue;
                seen[static_cast<std::size_t>(other)] = 1;
                parent_arc[static_cast<std::size_t>(other)] = id;
                parent_node[static_cast<std::size_t>(other)] = node;
                queue.push_back(other);
            }
        }
        if (!seen[static_cast<std::size_t>(n_ + ej)])
            throw NumericError("transport simplex: basis is not a spanning tree");

        // walk back from the col node; arcs alternate -,+,-,... along the cycle
        std::vector<Index> minus_arcs, plus_arcs;
        Index node = n_ + ej;
        bool minus = true;
        while (node != ei) {
            const Index id = parent_arc[static_cast<std::size_t>(node)];
            (minus ? minus_arcs : plus_arcs).push_back(id);
            node = parent_node[static_cast<std::size_t>(node)];
            minus = !minus;
        }
        double theta = std::numeric_limits<double>::infinity();
        Index leaving = -1;
        for (const Index id : minus_arcs) {
            const double f = arcs_[static_cast<std::size_t>(id)].flow;
            if (f < theta) {
                theta = f;
                leaving = id;
            }
        }
        for (const Index id : minus_arcs) arcs_[static_cast<std::size_t>(id)].flow -= theta;
        for (const Index id : plus_arcs) arcs_[static_cast<std::size_t>(id)].flow += theta;
        drop_arc(leaving);
        add_arc(ei, ej, theta);
        return theta;
    }

    // Re-derive basic flows from the exact marginals by leaf elimination, so
    // row/column sums hold to rounding rather than to accumulated pivot error.
    void rebuild_flows_exact() {
        const Index nn = n_ + m_;
        std::vector<Index> degree(static_cast<std::size_t>(nn), 0);
        Vector residual(nn);
        residual.head(n_) = a_;
        residual.tail(m_) = b_;
        std::vector<std::vector<Index>> adj = adj_;
        for (Index node = 0; node < nn; ++node)
            degree[static_cast<std::size_t>(node)] = static_cast<Index>(adj[static_cast<std::size_t>(node)].size());
        std::vector<Index> leaves;
        for (Index node = 0; node < nn; ++node)
            if (degree[static_cast<std::size_t>(node)] == 1) leaves.push_back(node);
        std::vector<char> removed(arcs_.size(), 0);
        while (!leaves.empty()) {
            const Index node = leaves.back();
            leaves.pop_back();
            Index arc_id = -1;
            for (const Index id : adj[static_cast<std::size_t>(node)])
                if (!removed[static_cast<std::size_t>(id)]) {
                    arc_id = id;
                    break;
                }
            if (arc_id < 0) continue;
            Arc& arc = arcs_[static_cast<std::size_t>(arc_id)];
            arc.flow = std::max(residual(node), 0.0);
            removed[static_cast<std::size_t>(arc_id)] = 1;
            const Index other = (node < n_) ? n_ + arc.col : arc.row;
            residual(other) -= residual(node);
            residual(node) = 0.0;
            if (--degree[static_cast<std::size_t>(other)] == 1) leaves.push_back(other);
        }
    }
};

} // namespace detail

/// Exact discrete optimal transport. Uniform square marginals take the
/// assignment fast path; general weights go through the transportation simplex.
inline CouplingPlan solve_exact(const CostMatrix& cost, const Vector& row_w, const Vector& col_w) {
    const Index n = cost.rows(), m = cost.cols();
    if (row_w.size() != n || col_w.size() != m) throw ConfigError("solve_exact: marginal size mismatch");
    if ((row_w.array() < 0).any() || (col_w.array() < 0).any())
        throw ConfigError("solve_exact: negative marginal weight");
    if (std::abs(row_w.sum() - col_w.sum()) > 1e-9)
        throw ConfigError("solve_exact: marginal sums differ by more than 1e-9");
    if (!cost.values.allFinite()) throw ConfigError("solve_exact: non-finite cost");

    CouplingPlan plan;
    plan.row_marginal = row_w;
    plan.col_marginal = col_w;
    plan.epsilon = 0.0;

    const bool uniform_square =
        n == m && (row_w.array() - row_w(0)).abs().maxCoeff() <= 1e-15 &&
        (col_w.array() - row_w(0)).abs().maxCoeff() <= 1e-15 && row_w(0) > 0;

    if (uniform_square) {
        detail::RowMajorMatrix c = cost.values;
        const auto asg = detail::assignment_jv(c);
        plan.matrix = Matrix::Zero(n, n);
        const double mass = row_w(0);
        for (Index i = 0; i < n; ++i) plan.matrix(i, asg.row_to_col[static_cast<std::size_t>(i)]) = mass;
        plan.cost = mass * asg.cost;
    } else {
        detail::TransportSimplex simplex(cost.values, row_w, col_w);
        auto result = simplex.solve();
        plan.matrix = std::move(result.plan);
        plan.cost = result.cost;
    }
    plan.marginal_error = plan.measured_marginal_error();
    plan.validate(1e-12);
    return plan;
}

struct SinkhornOptions {
    double epsilon = 1.0;
    int max_iter = 1000;
    double tol = 1e-9;
    int check_every = 10;
};

/// Log-domain (softmin) Sinkhorn. Never forms the kernel matrix directly, so
/// small epsilon (the Schrodinger-bridge coupling uses eps = 2 sigma^2) does
/// not underflow. Non-convergence within max_iter is reported, not thrown.
inline CouplingPlan solve_sinkhorn(const CostMatrix& cost, const Vector& row_w, const Vector& col_w,
                                   const SinkhornOptions& opt) {
    const Index n = cost.rows(), m = cost.cols();
    if (row_w.size() != n || col_w.size() != m) throw ConfigError("solve_sinkhorn: marginal size mismatch");
    if (opt.epsilon <= 0) throw ConfigError("solve_sinkhorn: epsilon must be > 0");
    if (std::abs(row_w.sum() - col_w.sum()) > 1e-9)
        throw ConfigError("solve_sinkhorn: marginal sums differ by more than 1e-9");

    const double eps = opt.epsilon;
    const Vector loga = row_w.array().max(1e-300).log();
    const Vector logb = col_w.array().max(1e-300).log();
    Vector f = Vector::Zero(n), g = Vector::Zero(m);

    auto plan_from_potentials = [&]() {
        Matrix logp = (-cost.values).eval();
        logp.colwise() += f;
        logp.rowwise() += g.transpose();
        return (logp / eps).array().exp().matrix().eval();
    };

    CouplingPlan plan;
    plan.row_marginal = row_w;
    plan.col_marginal = col_w;
    plan.epsilon = eps;
    plan.converged = false;

    int iter = 0;
    for (; iter < opt.max_iter; ++iter) {
        // f update: rows match exactly afterwards
        for (Index i = 0; i < n; ++i) {
            const Vector z = (g - cost.values.row(i).transpose()) / eps;
            f(i) = eps * (loga(i) - logsumexp(z));
        }
        // g update: columns match exactly afterwards
        for (Index j = 0; j < m; ++j) {
            const Vector z = (f - cost.values.col(j)) / eps;
            g(j) = eps * (logb(j) - logsumexp(z));
        }
        if ((iter + 1) % opt.check_every == 0 || iter + 1 == opt.max_iter) {
            const Matrix p = plan_from_potentials();
            const double err = std::max((p.rowwise().sum() - row_w).cwiseAbs().maxCoeff(),
                                        (p.colwise().sum().transpose() - col_w).cwiseAbs().maxCoeff());
            if (err < opt.tol) {
                plan.converged = true;
                ++iter;
                break;
            }
        }
    }
    plan.iterations = iter;
    plan.matrix = plan_from_potentials();
    plan.cost = (plan.matrix.array() * cost.values.array()).sum();
    plan.marginal_error = plan.measured_marginal_error();
    return plan;
}

/// i.i.d. categorical draws of (source index, target index) from plan entries.
inline std::vector<std::pair<Index, Index>> sample_pairs(const CouplingPlan& plan, Index batch, Rng& rng) {
    const Index n = plan.matrix.rows(), m = plan.matrix.cols();
    const double total = plan.matrix.sum();
    if (total <= 0.0) throw ConfigError("sample_pairs: plan has no mass");
    std::vector<double> cdf(static_cast<std::size_t>(n * m));
    double acc = 0.0;
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) {
            acc += plan.matrix(i, j) / total;
            cdf[static_cast<std::size_t>(i * m + j)] = acc;
        }
    cdf.back() = 1.0;
    std::vector<std::pair<Index, Index>> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (Index k = 0; k < batch; ++k) {
        const double uvar = rng.uniform01();
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), uvar);
        const Index flat = static_cast<Index>(it - cdf.begin());
        out.emplace_back(flat / m, flat % m);
    }
    return out;
}

struct OtSolverConfig {
    enum class Method { exact, sinkhorn } method = Method::exact;
    double epsilon = 1.0; // sinkhorn only
    int max_iter = 1000;
    double tol = 1e-9;
};

/// Subsampled minibatch transport matrix: average of k per-minibatch optimal
/// plans embedded at the sampled indices. For small k the marginals deviate
/// from the prescribed ones; the deviation is reported in marginal_error and
/// the strict marginal invariant is not asserted.
inline CouplingPlan minibatch_plan(const PointCloud& a, const PointCloud& b, Index m, int k,
                                   const OtSolverConfig& solver, Rng& rng) {
    const Index na = a.size(), nb = b.size();
    if (m < 1 || m > std::min(na, nb)) throw ConfigError("minibatch_plan: m must satisfy 1 <= m <= min(n_a, n_b)");
    if (k < 1) throw ConfigError("minibatch_plan: k must be >= 1");
    if (na * nb > Index(25'000'000)) throw ConfigError("minibatch_plan: dense embedding too large");

    Matrix acc = Matrix::Zero(na, nb);
    const Vector sub_w = Vector::Constant(m, 1.0 / static_cast<double>(m));
    double cost_acc = 0.0;
    for (int rep = 0; rep < k; ++rep) {
        const auto ia = rng.sample_without_replacement(na, m);
        const auto ib = rng.sample_without_replacement(nb, m);
        Matrix pa(m, a.dim()), pb(m, b.dim());
        for (Index r = 0; r < m; ++r) {
            pa.row(r) = a.points().row(ia[static_cast<std::size_t>(r)]);
            pb.row(r) = b.points().row(ib[static_cast<std::size_t>(r)]);
        }
        const PointCloud ca = PointCloud::uniform(std::move(pa));
        const PointCloud cb = PointCloud::uniform(std::move(pb));
        const CostMatrix cost = cost_sq_euclidean(ca, cb);
        CouplingPlan sub = solver.method == OtSolverConfig::Method::exact
                               ? solve_exact(cost, sub_w, sub_w)
                               : solve_sinkhorn(cost, sub_w, sub_w,
                                                SinkhornOptions{solver.epsilon, solver.max_iter, solver.tol, 10});
        cost_acc += sub.cost;
        for (Index r = 0; r < m; ++r)
            for (Index c = 0; c < m; ++c)
                acc(ia[static_cast<std::size_t>(r)], ib[static_cast<std::size_t>(c)]) += sub.matrix(r, c);
    }
    acc /= static_cast<double>(k);

    CouplingPlan plan;
    plan.matrix = std::move(acc);
    plan.row_marginal = a.weights();
    plan.col_marginal = b.weights();
    plan.epsilon = solver.method == OtSolverConfig::Method::sinkhorn ? solver.epsilon : 0.0;
    plan.cost = cost_acc / static_cast<double>(k);
    plan.marginal_error = plan.measured_marginal_error();
    plan.converged = true;
    return plan;
}

} // namespace sf2m
