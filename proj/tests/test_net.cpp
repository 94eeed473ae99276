#include "sf2m/net.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace sf2m;

namespace {

// central finite differences of a scalar loss over the flat parameter vector
template <class Net, class LossFn>
double fd_gradient(Net& net, LossFn&& loss, Index param, double h = 1e-5) {
    const double saved = net.params()(param);
    net.params()(param) = saved + h;
    const double up = loss();
    net.params()(param) = saved - h;
    const double down = loss();
    net.params()(param) = saved;
    return (up - down) / (2.0 * h);
}

} // namespace

TEST_CASE("zero mlp maps zero input to zero output", "[net]") {
    Mlp net(MlpShape{3, 2, {8, 8}});
    const Matrix x = Matrix::Zero(4, 3);
    REQUIRE(net.apply(x).isZero());
}

TEST_CASE("parameter count matches the closed form", "[net]") {
    const MlpShape shape{6, 5, {64, 64, 64}};
    Mlp net(shape);
    REQUIRE(net.param_count() == (6 + 1) * 64 + (64 + 1) * 64 * 2 + (64 + 1) * 5);
    REQUIRE(net.param_count() == shape.param_count());
}

TEST_CASE("single linear layer is an affine map", "[net]") {
    Mlp net(MlpShape{2, 2, {}});
    Rng rng(1);
    net.init(rng);
    Matrix x(3, 2);
    rng.fill_normal(x);
    const Matrix y = net.apply(x);
    Eigen::Map<const Matrix> w(net.params().data(), 2, 2);
    Eigen::Map<const Vector> b(net.params().data() + 4, 2);
    const Matrix expected = (x * w.transpose()).rowwise() + b.transpose();
    REQUIRE((y - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("forward evaluation is deterministic", "[net]") {
    Mlp net(MlpShape{4, 3, {16, 16}});
    Rng rng(5);
    net.init(rng);
    Matrix x(8, 4);
    rng.fill_normal(x);
    REQUIRE(net.apply(x) == net.apply(x));
}

TEST_CASE("mlp gradients match finite differences", "[net]") {
    Mlp net(MlpShape{3, 2, {64, 64, 64}});
    Rng rng(7);
    net.init(rng);
    Matrix x(8, 3), target(8, 2);
    rng.fill_normal(x);
    rng.fill_normal(target);

    auto loss = [&]() { return (net.apply(x) - target).squaredNorm(); };
    net.forward(x);
    const Vector analytic = net.backward(2.0 * (net.apply(x) - target));

    Rng probe_rng(8);
    for (int probe = 0; probe < 20; ++probe) {
        const Index p = static_cast<Index>(probe_rng.uniform_int(static_cast<std::uint64_t>(net.param_count())));
        const double fd = fd_gradient(net, loss, p);
        const double denom = std::max({std::abs(fd), std::abs(analytic(p)), 1e-6});
        REQUIRE(std::abs(analytic(p) - fd) / denom < 1e-4);
    }
}

TEST_CASE("zero upstream gives zero gradient, batch gradient is additive", "[net]") {
    Mlp net(MlpShape{2, 2, {8}});
    Rng rng(9);
    net.init(rng);
    Matrix x(4, 2);
    rng.fill_normal(x);
    net.forward(x);
    REQUIRE(net.backward(Matrix::Zero(4, 2)).isZero());

    Matrix upstream(4, 2);
    rng.fill_normal(upstream);
    net.forward(x);
    const Vector full = net.backward(upstream);
    Vector summed = Vector::Zero(net.param_count());
    for (Index i = 0; i < 4; ++i) {
        net.forward(x.row(i));
        summed += net.backward(upstream.row(i));
    }
    REQUIRE((full - summed).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("backward without a matching forward is an error", "[net]") {
    Mlp net(MlpShape{2, 2, {4}});
    REQUIRE_THROWS_AS(net.backward(Matrix::Zero(3, 2)), NumericError);
    net.forward(Matrix::Zero(5, 2));
    REQUIRE_THROWS_AS(net.backward(Matrix::Zero(3, 2)), NumericError);
}

TEST_CASE("adamw identities", "[net]") {
    Vector p = Vector::Constant(4, 2.0);

    AdamW no_decay(4, AdamWConfig{1e-3, 0.0});
    Vector before = p;
    no_decay.step(p, Vector::Zero(4));
    REQUIRE(p == before);

    AdamW decay(4, AdamWConfig{1e-3, 0.5});
    decay.step(p, Vector::Zero(4));
    REQUIRE((p - before * (1.0 - 1e-3 * 0.5)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("adamw descends a quadratic bowl", "[net]") {
    Vector p = Vector::Constant(6, 1.0);
    AdamW opt(6, AdamWConfig{0.05, 0.0});
    for (int s = 0; s < 500; ++s) opt.step(p, 2.0 * p);
    REQUIRE(p.norm() < 0.01);
}

TEST_CASE("adamw rejects non-finite gradients with the block name", "[net]") {
    Vector p = Vector::Zero(3);
    Vector g(3);
    g << 0.0, std::nan(""), 0.0;
    AdamW opt(3);
    try {
        opt.step(p, g, [](Index i) { return "block " + std::to_string(i); });
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        REQUIRE(std::string(e.what()).find("block 1") != std::string::npos);
    }
}

TEST_CASE("ngm with zero parameters is the zero drift", "[net]") {
    NgmDrift net(NgmShape{5, 16, true});
    Matrix x(3, 5);
    Rng rng(11);
    rng.fill_normal(x);
    const auto out = net.apply(x);
    REQUIRE(out.drift.isZero());
    REQUIRE(out.score->isZero());
}

TEST_CASE("ngm structural zeros make outputs invariant to masked genes", "[net]") {
    NgmDrift net(NgmShape{4, 10, false});
    Rng rng(13);
    net.init(rng);
    // zero the first-layer weights that read gene 1 in every block
    for (Index j = 0; j < 4; ++j) {
        const Index base = j * net.shape().per_gene();
        Eigen::Map<Matrix> w1(net.params().data() + base, 10, 4);
        w1.col(1).setZero();
    }
    Matrix x(1, 4), x2(1, 4);
    rng.fill_normal(x);
    x2 = x;
    x2(0, 1) += 3.7;
    REQUIRE((net.apply(x).drift - net.apply(x2).drift).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("single-gene linear ngm matches hand computation", "[net]") {
    NgmDrift net(NgmShape{1, 2, false});
    // params: w1 (2x1), b1 (2), w2 (2), c2
    net.params() << 0.5, -0.25, 0.0, 0.0, 1.0, 1.0, 0.1;
    Matrix x(1, 1);
    x << 2.0;
    const double expected = selu(1.0) + selu(-0.5) + 0.1;
    REQUIRE(net.apply(x).drift(0, 0) == Catch::Approx(expected).epsilon(1e-14));
}

TEST_CASE("ngm edge scores read the first layer only", "[net]") {
    NgmShape shape{3, 4, false};
    NgmDrift net(shape);
    REQUIRE(net.edge_scores().isZero());

    // only gene 0 feeds gene 2
    const Index base = 2 * shape.per_gene();
    Eigen::Map<Matrix> w1(net.params().data() + base, 4, 3);
    w1.col(0) << 1.0, 2.0, 2.0, 0.0;
    Matrix scores = net.edge_scores();
    REQUIRE(scores(0, 2) == Catch::Approx(3.0));
    REQUIRE(scores.sum() == Catch::Approx(3.0)); // everything else zero

    // second-layer weights do not move the scores
    Eigen::Map<Vector> w2(net.params().data() + base + 12 + 4, 4);
    w2.setConstant(9.0);
    REQUIRE((net.edge_scores() - scores).cwiseAbs().maxCoeff() == 0.0);

    // diagonal is masked
    Eigen::Map<Matrix> w1_self(net.params().data(), 4, 3);
    w1_self.col(0).setConstant(5.0);
    REQUIRE(net.edge_scores()(0, 0) == 0.0);
}

TEST_CASE("ngm l1 penalty and subgradient", "[net]") {
    NgmShape shape{2, 3, false};
    NgmDrift net(shape);
    const Index base1 = shape.per_gene();
    net.params()(0) = -3.0;        // theta1 entry of gene 0
    net.params()(base1 + 1) = 2.0; // theta1 entry of gene 1
    REQUIRE(net.l1_penalty(1e-5) == Catch::Approx(5e-5));
    REQUIRE(net.l1_penalty(0.0) == 0.0);

    Vector grad = Vector::Zero(net.param_count());
    net.add_l1_grad(1e-5, grad);
    REQUIRE(grad(0) == Catch::Approx(-1e-5));
    REQUIRE(grad(base1 + 1) == Catch::Approx(1e-5));
    REQUIRE(grad(2) == 0.0); // sign(0) = 0

    Vector none = Vector::Zero(net.param_count());
    net.add_l1_grad(0.0, none);
    REQUIRE(none.isZero());
}

TEST_CASE("ngm gradients match finite differences", "[net]") {
    NgmDrift net(NgmShape{3, 12, true});
    Rng rng(17);
    net.init(rng);
    Matrix x(6, 3), tv(6, 3), ts(6, 3);
    rng.fill_normal(x);
    rng.fill_normal(tv);
    rng.fill_normal(ts);

    auto loss = [&]() {
        const auto out = net.apply(x);
        return (out.drift - tv).squaredNorm() + (*out.score - ts).squaredNorm();
    };
    const auto out = net.forward(x);
    const Vector analytic = net.backward(2.0 * (out.drift - tv), 2.0 * (*out.score - ts));

    Rng probe_rng(18);
    for (int probe = 0; probe < 20; ++probe) {
        const Index p = static_cast<Index>(probe_rng.uniform_int(static_cast<std::uint64_t>(net.param_count())));
        const double fd = fd_gradient(net, loss, p);
        const double denom = std::max({std::abs(fd), std::abs(analytic(p)), 1e-6});
        REQUIRE(std::abs(analytic(p) - fd) / denom < 1e-4);
    }
}

TEST_CASE("model pair converts a scaled score to the true score", "[net]") {
    const double sigma = 0.5;
    MlpModelPair pair(2, sigma, Parametrization::scaled_score, true);
    Rng rng(19);
    pair.init(rng);
    Matrix x(3, 2);
    rng.fill_normal(x);
    const Vector t = Vector::Constant(3, 0.4);
    const Matrix raw = pair.score_net().apply(pair.with_time(t, x));
    const Matrix converted = pair.eval_score(t, x);
    REQUIRE((converted - raw * 2.0 / (sigma * sigma)).cwiseAbs().maxCoeff() < 1e-14);

    MlpModelPair flow_only(2, 0.0, Parametrization::scaled_score, false);
    REQUIRE_FALSE(flow_only.has_score());
    REQUIRE_THROWS_AS(flow_only.eval_score(t, x), ConfigError);
}

TEST_CASE("identical seeds give bit-identical initialization", "[net]") {
    auto build = [] {
        MlpModelPair pair(2, 1.0, Parametrization::scaled_score, true);
        Rng rng(42);
        pair.init(rng);
        return pair;
    };
    const MlpModelPair a = build();
    const MlpModelPair b = build();
    REQUIRE(a.flow_net().params() == b.flow_net().params());
    REQUIRE(a.score_net().params() == b.score_net().params());
}
