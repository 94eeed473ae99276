#include "sf2m/sim.hpp"
#include "sf2m/net.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace sf2m;

namespace {

// minimal model stubs for integrator physics
struct FieldModel {
    double flow_value = 0.0;
    double score_value = 0.0;
    bool score_available = true;
    double span = 1.0;

    double time_span() const { return span; }
    bool has_score() const { return score_available; }
    Matrix eval_flow(const Vector&, const Matrix& x) const {
        return Matrix::Constant(x.rows(), x.cols(), flow_value);
    }
    Matrix eval_score(const Vector&, const Matrix& x) const {
        return Matrix::Constant(x.rows(), x.cols(), score_value);
    }
};

struct LinearDecayModel { // dx = -x dt, exact solution x e^{-t}
    double time_span() const { return 1.0; }
    bool has_score() const { return false; }
    Matrix eval_flow(const Vector&, const Matrix& x) const { return -x; }
    Matrix eval_score(const Vector&, const Matrix& x) const { return x; }
};

} // namespace

TEST_CASE("constant drift ode hits the exact endpoint", "[sim]") {
    FieldModel model;
    model.flow_value = 1.0;
    const Matrix x0 = Matrix::Zero(3, 2);
    const TrajectoryEnsemble traj = simulate_sde(model, x0, 0.0, 100, Rng(1));
    REQUIRE(traj.steps() == 100);
    REQUIRE((traj.terminal().array() - 1.0).abs().maxCoeff() < 1e-12);
    REQUIRE(traj.times(0) == 0.0);
    REQUIRE(traj.times(100) == 1.0);
}

TEST_CASE("the ode path ignores the seed", "[sim]") {
    FieldModel model;
    model.flow_value = 0.7;
    Matrix x0(5, 2);
    Rng rng(3);
    rng.fill_normal(x0);
    const TrajectoryEnsemble a = simulate_sde(model, x0, 0.0, 50, Rng(1));
    const TrajectoryEnsemble b = simulate_sde(model, x0, 0.0, 50, Rng(999));
    for (std::size_t f = 0; f < a.frames.size(); ++f) REQUIRE(a.frames[f] == b.frames[f]);
}

TEST_CASE("euler-maruyama with g=0 is bit-exact explicit euler", "[sim]") {
    MlpModelPair model(2, 1.0, Parametrization::scaled_score, true);
    Rng rng(5);
    model.init(rng);
    Matrix x0(4, 2);
    rng.fill_normal(x0);
    const Index steps = 37;
    const TrajectoryEnsemble traj = simulate_sde(model, x0, 0.0, steps, Rng(7));

    Matrix x = x0;
    const double dt = 1.0 / static_cast<double>(steps);
    for (Index k = 0; k < steps; ++k) {
        const Vector tv = Vector::Constant(4, dt * static_cast<double>(k));
        x += dt * model.eval_flow(tv, x);
        REQUIRE(x == traj.frames[static_cast<std::size_t>(k + 1)]);
    }
}

TEST_CASE("pure diffusion grows the prescribed variance", "[sim]") {
    FieldModel model;
    model.flow_value = 0.0;
    model.score_value = 0.0;
    const Index n = 20000;
    const Matrix x0 = Matrix::Zero(n, 2);
    for (const double g : {0.5, 1.0, 2.0}) {
        const TrajectoryEnsemble traj = simulate_sde(model, x0, g, 50, Rng(11));
        for (Index j = 0; j < 2; ++j) {
            const double mean = traj.terminal().col(j).mean();
            const double var = (traj.terminal().col(j).array() - mean).square().mean();
            const double rel_tol = 3.0 / std::sqrt(2.0 * static_cast<double>(n));
            REQUIRE(var == Catch::Approx(g * g).epsilon(3.0 * rel_tol));
        }
    }
}

TEST_CASE("backward of the zero field is the identity map", "[sim]") {
    FieldModel model;
    Matrix x1(6, 3);
    Rng rng(13);
    rng.fill_normal(x1);
    const TrajectoryEnsemble traj = simulate_backward(model, x1, 0.0, 25, Rng(17));
    REQUIRE(traj.direction == Direction::backward);
    REQUIRE(traj.terminal() == x1);
}

TEST_CASE("forward-then-backward ode round trip is O(dt)", "[sim]") {
    LinearDecayModel model;
    Matrix x0(1, 1);
    x0 << 1.0;
    const Index steps = 100;
    const TrajectoryEnsemble fwd = simulate_sde(model, x0, 0.0, steps, Rng(1));
    const TrajectoryEnsemble bwd = simulate_backward(model, fwd.terminal(), 0.0, steps, Rng(2));
    REQUIRE(std::abs(bwd.terminal()(0, 0) - 1.0) < 0.05);
}

TEST_CASE("first-order convergence: halving dt halves the error", "[sim]") {
    LinearDecayModel model;
    Matrix x0(1, 1);
    x0 << 1.0;
    const double exact = std::exp(-1.0);
    const double err50 = std::abs(simulate_sde(model, x0, 0.0, 50, Rng(1)).terminal()(0, 0) - exact);
    const double err100 = std::abs(simulate_sde(model, x0, 0.0, 100, Rng(1)).terminal()(0, 0) - exact);
    const double ratio = err50 / err100;
    REQUIRE(ratio > 1.7);
    REQUIRE(ratio < 2.3);
}

TEST_CASE("push_forward returns the terminal slice", "[sim]") {
    FieldModel model;
    model.flow_value = 0.0;
    Matrix pts(4, 2);
    Rng rng(19);
    rng.fill_normal(pts);
    const PointCloud cloud = PointCloud::uniform(pts, "in");

    const PointCloud out = push_forward(model, cloud, 0.0, 10, Rng(3));
    REQUIRE(out.points() == cloud.points()); // identity drift
    REQUIRE(out.label() == "in");

    model.flow_value = 0.3;
    const PointCloud one = push_forward(model, cloud, 0.0, 1, Rng(3));
    const PointCloud hundred = push_forward(model, cloud, 0.0, 100, Rng(3));
    REQUIRE(one.points().allFinite());
    REQUIRE(hundred.points().allFinite());
    const TrajectoryEnsemble traj = simulate_sde(model, cloud.points(), 0.0, 100, Rng(3));
    REQUIRE(hundred.points() == traj.terminal());
}

TEST_CASE("stochastic simulation without a score model is rejected", "[sim]") {
    FieldModel model;
    model.score_available = false;
    const Matrix x0 = Matrix::Zero(2, 2);
    REQUIRE_THROWS_AS(simulate_sde(model, x0, 1.0, 10, Rng(1)), ConfigError);
    REQUIRE_THROWS_AS(simulate_backward(model, x0, 1.0, 10, Rng(1)), ConfigError);
    REQUIRE_THROWS_AS(simulate_sde(model, x0, 0.0, 0, Rng(1)), ConfigError);
}

TEST_CASE("interval simulation advances only the requested window", "[sim]") {
    FieldModel model;
    model.flow_value = 2.0;
    const Matrix x0 = Matrix::Zero(1, 1);
    const Matrix x = simulate_interval(model, x0, 0.0, 50, Rng(1), 0.25, 0.75);
    REQUIRE(x(0, 0) == Catch::Approx(1.0).margin(1e-12)); // 2.0 * 0.5
    REQUIRE_THROWS_AS(simulate_interval(model, x0, 0.0, 10, Rng(1), 0.5, 0.5), ConfigError);
}
