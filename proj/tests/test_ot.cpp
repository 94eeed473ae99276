#include "sf2m/ot.hpp"
#include "sf2m/datasets.hpp"

#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <vector>

using namespace sf2m;

namespace {

PointCloud cloud_1d(std::initializer_list<double> xs) {
    Matrix pts(static_cast<Index>(xs.size()), 1);
    Index i = 0;
    for (double x : xs) pts(i++, 0) = x;
    return PointCloud::uniform(std::move(pts));
}

PointCloud random_cloud(Index n, Index d, Rng& rng) {
    Matrix pts(n, d);
    rng.fill_normal(pts);
    return PointCloud::uniform(std::move(pts));
}

} // namespace

TEST_CASE("squared euclidean cost basics", "[ot]") {
    const PointCloud a = cloud_1d({0.0});
    const PointCloud b = cloud_1d({3.0});
    const CostMatrix c = cost_sq_euclidean(a, b);
    REQUIRE(c.values(0, 0) == 9.0);

    const CostMatrix self = cost_sq_euclidean(a, a);
    REQUIRE(self.values(0, 0) == 0.0);

    Rng rng(5);
    const PointCloud u = random_cloud(4, 3, rng);
    const PointCloud v = random_cloud(6, 3, rng);
    const CostMatrix cuv = cost_sq_euclidean(u, v);
    const CostMatrix cvu = cost_sq_euclidean(v, u);
    REQUIRE((cuv.values - cvu.values.transpose()).cwiseAbs().maxCoeff() < 1e-12);

    const PointCloud w = random_cloud(4, 2, rng);
    REQUIRE_THROWS_AS(cost_sq_euclidean(u, w), ConfigError);
}

TEST_CASE("geodesic cost matches the 2-node closed form", "[ot]") {
    const PointCloud a = cloud_1d({0.0});
    const PointCloud b = cloud_1d({1.0});
    const auto geo = cost_geodesic(a, b, 1, 0.5, LaplacianKind::unnormalized);
    // exp(-0.5 L) for L = [[1,-1],[-1,1]] has off-diagonal (1 - e^-1)/2
    const double h = (1.0 - std::exp(-1.0)) / 2.0;
    REQUIRE(geo.cost.values(0, 0) == Catch::Approx(std::sqrt(-std::log(h))).epsilon(1e-9));
    REQUIRE_FALSE(geo.disconnected_warning);
}

TEST_CASE("geodesic self-cost is row-minimal on the diagonal", "[ot]") {
    Rng rng(8);
    const PointCloud c = random_cloud(40, 2, rng);
    const auto geo = cost_geodesic(c, c, 5, 1.0);
    REQUIRE(geo.cost.rows() == 40);
    REQUIRE(geo.cost.cols() == 40);
    for (Index i = 0; i < 40; ++i) {
        REQUIRE(geo.cost.values(i, i) <= geo.cost.values.row(i).minCoeff() + 1e-12);
    }
}

TEST_CASE("geodesic cost handles the t=0 and clamped limits", "[ot]") {
    Rng rng(9);
    const PointCloud a = random_cloud(3, 2, rng);
    const PointCloud b = random_cloud(3, 2, rng);
    const auto geo = cost_geodesic(a, b, 2, 0.0);
    const double clamp_cost = std::sqrt(-std::log(1e-12));
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j) REQUIRE(geo.cost.values(i, j) == Catch::Approx(clamp_cost));
    REQUIRE(geo.disconnected_warning); // H = I has zero off-diagonals, all clamped

    REQUIRE_THROWS_AS(cost_geodesic(a, b, 6, 1.0), ConfigError); // k >= union size
}

TEST_CASE("exact solver solves the trivial and monotone instances", "[ot]") {
    const PointCloud a = cloud_1d({0.5});
    const PointCloud b = cloud_1d({2.5});
    const CouplingPlan p = solve_exact(cost_sq_euclidean(a, b), a.weights(), b.weights());
    REQUIRE(p.matrix(0, 0) == 1.0);
    REQUIRE(p.cost == Catch::Approx(4.0));
    REQUIRE(p.epsilon == 0.0);

    const PointCloud u = cloud_1d({0.0, 1.0});
    const PointCloud v = cloud_1d({1.0, 2.0});
    const CouplingPlan m = solve_exact(cost_sq_euclidean(u, v), u.weights(), v.weights());
    REQUIRE(m.cost == Catch::Approx(1.0)); // monotone matching: 0->1, 1->2
    REQUIRE(m.matrix(0, 0) == Catch::Approx(0.5));
    REQUIRE(m.matrix(1, 1) == Catch::Approx(0.5));
}

TEST_CASE("exact solver equals the permutation oracle on small uniform instances", "[ot]") {
    Rng rng(31);
    for (int rep = 0; rep < 60; ++rep) {
        const Index n = 1 + static_cast<Index>(rng.uniform_int(6));
        const Index d = 1 + static_cast<Index>(rng.uniform_int(3));
        const PointCloud a = random_cloud(n, d, rng);
        const PointCloud b = random_cloud(n, d, rng);
        const CostMatrix cost = cost_sq_euclidean(a, b);
        const CouplingPlan plan = solve_exact(cost, a.weights(), b.weights());
        const double oracle = test_oracles::brute_force_uniform_cost(cost.values);
        REQUIRE(plan.cost == Catch::Approx(oracle).margin(1e-9));
        plan.validate(1e-12);
    }
}

TEST_CASE("simplex path matches the 1-D monotone oracle for general weights", "[ot]") {
    Rng rng(77);
    for (int rep = 0; rep < 25; ++rep) {
        const Index n = 2 + static_cast<Index>(rng.uniform_int(7));
        const Index m = 2 + static_cast<Index>(rng.uniform_int(7));
        Matrix pa(n, 1), pb(m, 1);
        Vector wa(n), wb(m);
        for (Index i = 0; i < n; ++i) {
            pa(i, 0) = rng.normal();
            wa(i) = 0.1 + rng.uniform01();
        }
        for (Index j = 0; j < m; ++j) {
            pb(j, 0) = rng.normal();
            wb(j) = 0.1 + rng.uniform01();
        }
        wa /= wa.sum();
        wb /= wb.sum();
        const PointCloud a(pa, wa);
        const PointCloud b(pb, wb);
        const CouplingPlan plan = solve_exact(cost_sq_euclidean(a, b), a.weights(), b.weights());

        std::vector<std::pair<double, double>> av, bv;
        for (Index i = 0; i < n; ++i) av.emplace_back(pa(i, 0), wa(i));
        for (Index j = 0; j < m; ++j) bv.emplace_back(pb(j, 0), wb(j));
        const double oracle = test_oracles::monotone_1d_cost(av, bv, true);
        REQUIRE(plan.cost == Catch::Approx(oracle).margin(1e-9));
        plan.validate(1e-11);
    }
}

TEST_CASE("exact solver validates marginals", "[ot]") {
    const PointCloud a = cloud_1d({0.0, 1.0});
    const PointCloud b = cloud_1d({1.0, 2.0});
    Vector bad(2);
    bad << 0.5, 0.6;
    REQUIRE_THROWS_AS(solve_exact(cost_sq_euclidean(a, b), a.weights(), bad), ConfigError);
}

TEST_CASE("cost scaling preserves the exact plan support", "[ot]") {
    Rng rng(41);
    const PointCloud a = random_cloud(6, 2, rng);
    const PointCloud b = random_cloud(6, 2, rng);
    CostMatrix cost = cost_sq_euclidean(a, b);
    const CouplingPlan base = solve_exact(cost, a.weights(), b.weights());
    cost.values *= 7.5;
    const CouplingPlan scaled = solve_exact(cost, a.weights(), b.weights());
    REQUIRE(scaled.cost == Catch::Approx(7.5 * base.cost).epsilon(1e-12));
    REQUIRE(((base.matrix.array() > 1e-12) == (scaled.matrix.array() > 1e-12)).all());
}

TEST_CASE("sinkhorn approaches the independent coupling for huge epsilon", "[ot]") {
    const PointCloud a = cloud_1d({0.0, 1.0});
    const PointCloud b = cloud_1d({0.5, 1.5});
    const CouplingPlan p = solve_sinkhorn(cost_sq_euclidean(a, b), a.weights(), b.weights(),
                                          SinkhornOptions{1e6, 1000, 1e-9, 1});
    for (Index i = 0; i < 2; ++i)
        for (Index j = 0; j < 2; ++j) REQUIRE(p.matrix(i, j) == Catch::Approx(0.25).margin(1e-6));
    REQUIRE(p.converged);
    REQUIRE(p.marginal_error < 1e-9);
}

TEST_CASE("sinkhorn at tiny epsilon recovers the exact plan", "[ot]") {
    // well-separated 4-point instance: matched pairs are far apart in cost
    Matrix pa(4, 2), pb(4, 2);
    pa << 0, 0, 5, 0, 0, 5, 5, 5;
    pb << 0.1, 0.1, 5.1, 0.1, 0.1, 5.1, 5.1, 5.1;
    const PointCloud a = PointCloud::uniform(pa);
    const PointCloud b = PointCloud::uniform(pb);
    const CostMatrix cost = cost_sq_euclidean(a, b);
    const CouplingPlan exact = solve_exact(cost, a.weights(), b.weights());
    const CouplingPlan sink = solve_sinkhorn(cost, a.weights(), b.weights(),
                                             SinkhornOptions{1e-3, 2000, 1e-9, 10});
    const double tv = 0.5 * (exact.matrix - sink.matrix).cwiseAbs().sum();
    REQUIRE(tv < 1e-3);
}

TEST_CASE("sinkhorn on a symmetric instance returns a symmetric plan", "[ot]") {
    Rng rng(6);
    Matrix pts(5, 2);
    rng.fill_normal(pts);
    pts *= 0.5;
    const PointCloud a = PointCloud::uniform(pts);
    const CouplingPlan p = solve_sinkhorn(cost_sq_euclidean(a, a), a.weights(), a.weights(),
                                          SinkhornOptions{1.0, 20000, 1e-9, 10});
    REQUIRE(p.converged);
    // Gauss-Seidel updates break exact symmetry; at convergence the asymmetry
    // tracks the marginal residual
    REQUIRE((p.matrix - p.matrix.transpose()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("sinkhorn reports non-convergence instead of throwing", "[ot]") {
    Rng rng(14);
    const PointCloud a = random_cloud(12, 2, rng);
    const PointCloud b = random_cloud(12, 2, rng);
    const CouplingPlan p = solve_sinkhorn(cost_sq_euclidean(a, b), a.weights(), b.weights(),
                                          SinkhornOptions{1e-3, 3, 1e-12, 1});
    REQUIRE_FALSE(p.converged);
    REQUIRE(p.iterations == 3);
}

TEST_CASE("exact cost lower-bounds the sinkhorn linear cost", "[ot]") {
    Rng rng(51);
    const PointCloud a = random_cloud(10, 3, rng);
    const PointCloud b = random_cloud(10, 3, rng);
    const CostMatrix cost = cost_sq_euclidean(a, b);
    const CouplingPlan exact = solve_exact(cost, a.weights(), b.weights());
    for (const double eps : {0.05, 0.5, 5.0}) {
        const CouplingPlan sink =
            solve_sinkhorn(cost, a.weights(), b.weights(), SinkhornOptions{eps, 4000, 1e-10, 10});
        REQUIRE(exact.cost <= sink.cost + 1e-9);
    }
}

TEST_CASE("sample_pairs draws from the plan distribution", "[ot]") {
    CouplingPlan identity;
    identity.matrix = 0.25 * Matrix::Identity(4, 4);
    identity.row_marginal = Vector::Constant(4, 0.25);
    identity.col_marginal = Vector::Constant(4, 0.25);
    Rng rng(3);
    for (const auto& [i, j] : sample_pairs(identity, 200, rng)) REQUIRE(i == j);

    CouplingPlan uniform;
    uniform.matrix = Matrix::Constant(2, 2, 0.25);
    uniform.row_marginal = Vector::Constant(2, 0.5);
    uniform.col_marginal = Vector::Constant(2, 0.5);
    Matrix freq = Matrix::Zero(2, 2);
    const Index draws = 100000;
    for (const auto& [i, j] : sample_pairs(uniform, draws, rng)) freq(i, j) += 1.0;
    freq /= static_cast<double>(draws);
    REQUIRE((freq.array() - 0.25).abs().maxCoeff() < 0.01);

    REQUIRE(sample_pairs(uniform, 0, rng).empty());

    CouplingPlan zero;
    zero.matrix = Matrix::Zero(2, 2);
    zero.row_marginal = Vector::Constant(2, 0.5);
    zero.col_marginal = Vector::Constant(2, 0.5);
    REQUIRE_THROWS_AS(sample_pairs(zero, 1, rng), ConfigError);
}

TEST_CASE("full-batch minibatch plan equals the exact plan", "[ot]") {
    Rng rng(61);
    const PointCloud a = random_cloud(6, 2, rng);
    const PointCloud b = random_cloud(6, 2, rng);
    Rng mb_rng(62);
    const CouplingPlan mb = minibatch_plan(a, b, 6, 1, OtSolverConfig{}, mb_rng);
    const CouplingPlan exact = solve_exact(cost_sq_euclidean(a, b), a.weights(), b.weights());
    REQUIRE((mb.matrix - exact.matrix).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(mb.marginal_error < 1e-12);
}

TEST_CASE("single-pair minibatch plan has one nonzero entry", "[ot]") {
    Rng rng(63);
    const PointCloud a = random_cloud(5, 2, rng);
    const PointCloud b = random_cloud(5, 2, rng);
    Rng mb_rng(64);
    const CouplingPlan mb = minibatch_plan(a, b, 1, 1, OtSolverConfig{}, mb_rng);
    REQUIRE((mb.matrix.array() > 0.0).count() == 1);
    REQUIRE(mb.matrix.sum() == Catch::Approx(1.0));
    REQUIRE_THROWS_AS(minibatch_plan(a, b, 6, 1, OtSolverConfig{}, mb_rng), ConfigError);
}

TEST_CASE("minibatch marginal error shrinks with more replicates", "[ot]") {
    Rng rng(65);
    const PointCloud a = random_cloud(6, 2, rng);
    const PointCloud b = random_cloud(6, 2, rng);
    double err_k1 = 0.0, err_k64 = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng r1 = Rng(seed).fork(1);
        Rng r64 = Rng(seed).fork(2);
        err_k1 += minibatch_plan(a, b, 3, 1, OtSolverConfig{}, r1).marginal_error;
        err_k64 += minibatch_plan(a, b, 3, 64, OtSolverConfig{}, r64).marginal_error;
    }
    REQUIRE(err_k64 < err_k1);
}
