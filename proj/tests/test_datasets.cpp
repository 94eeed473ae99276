#include "sf2m/datasets.hpp"
#include "sf2m/io.hpp"
#include "sf2m/point_cloud.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace sf2m;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("gaussian toy is deterministic given seed", "[datasets]") {
    ToyParams p;
    p.mean = Vector::Zero(1);
    p.var = 1.0;
    const PointCloud a = make_toy(ToyName::gaussian, 3, 7, p);
    const PointCloud b = make_toy(ToyName::gaussian, 3, 7, p);
    REQUIRE(a.points() == b.points());
    REQUIRE(a.weights() == b.weights());
}

TEST_CASE("8gaussians is centered at the origin", "[datasets]") {
    const PointCloud c = make_toy(ToyName::eight_gaussians, 10000, 11);
    REQUIRE(c.size() == 10000);
    REQUIRE(c.dim() == 2);
    const Vector mean = c.points().colwise().mean();
    REQUIRE(std::abs(mean(0)) < 0.1);
    REQUIRE(std::abs(mean(1)) < 0.1);
    // mode structure: every point is near one of the 8 centers
    for (Index i = 0; i < 50; ++i) {
        double best = 1e9;
        for (int m = 0; m < 8; ++m) {
            const double angle = 2.0 * M_PI * m / 8.0;
            const double dx = c.points()(i, 0) - 3.0 * std::cos(angle);
            const double dy = c.points()(i, 1) - 3.0 * std::sin(angle);
            best = std::min(best, std::sqrt(dx * dx + dy * dy));
        }
        REQUIRE(best < 3.0);
    }
}

TEST_CASE("toy generators reject bad input", "[datasets]") {
    REQUIRE_THROWS_AS(make_toy(ToyName::moons, 0, 1), ConfigError);
    REQUIRE_THROWS_AS(toy_name_from_string("circles"), ConfigError);
}

TEST_CASE("gaussian pair matches its prescribed moments", "[datasets]") {
    const auto [q0, q1] = make_gaussian_pair(5, 10000, 3);
    const Vector m0 = q0.points().colwise().mean();
    const Vector m1 = q1.points().colwise().mean();
    for (Index j = 0; j < 5; ++j) {
        REQUIRE(std::abs(m0(j) + 0.1) < 0.05); // CLT bound ~3/sqrt(n) = 0.03
        REQUIRE(std::abs(m1(j) - 0.1) < 0.05);
    }

    const auto [a0, a1] = make_gaussian_pair(5, 10000, 3);
    REQUIRE(a0.points() == q0.points());
    REQUIRE(a1.points() == q1.points());

    const auto [s, t] = make_gaussian_pair(1, 1, 9);
    REQUIRE(s.size() == 1);
    REQUIRE(s.weights()(0) == 1.0);
    REQUIRE(t.size() == 1);
}

TEST_CASE("sparse sde with zero drift is pure diffusion", "[datasets]") {
    const Index genes = 3, cells = 4000, timepoints = 3;
    const double noise = 0.5;
    const Matrix a = Matrix::Zero(genes, genes);
    const auto result = make_sparse_sde_series(genes, a, timepoints, cells, noise, 21);
    REQUIRE(result.series.count() == 3);
    // per-gene variance grows as noise^2 * t on top of the initial 0.1^2
    for (std::size_t k = 0; k < 3; ++k) {
        const double t = result.series.times[k];
        const Matrix& x = result.series.snapshots[k].points();
        const Vector mean = x.colwise().mean();
        for (Index g = 0; g < genes; ++g) {
            const double var = (x.col(g).array() - mean(g)).square().mean();
            const double expected = 0.01 + noise * noise * t;
            REQUIRE(var == Catch::Approx(expected).margin(0.15 * expected + 0.002));
        }
    }
}

TEST_CASE("snapshots are shuffled permutations of the path states", "[datasets]") {
    const Index genes = 7, cells = 40, timepoints = 5;
    Matrix a = Matrix::Zero(genes, genes);
    a(0, 1) = 1.0;
    a(1, 2) = -1.0;
    const std::uint64_t seed = 5;
    const auto series = make_sparse_sde_series(genes, a, timepoints, cells, 0.3, seed);
    const auto frames = simulate_sparse_sde_paths(genes, a, timepoints, cells, 0.3, seed);
    auto sorted_rows = [](const Matrix& m) {
        std::vector<std::vector<double>> rows;
        for (Index i = 0; i < m.rows(); ++i) {
            std::vector<double> r(m.cols());
            for (Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
            rows.push_back(std::move(r));
        }
        std::sort(rows.begin(), rows.end());
        return rows;
    };
    bool any_shuffled = false;
    for (std::size_t k = 0; k < frames.size(); ++k) {
        const Matrix& snap = series.series.snapshots[k].points();
        REQUIRE(sorted_rows(snap) == sorted_rows(frames[k]));
        if (snap != frames[k]) any_shuffled = true;
    }
    REQUIRE(any_shuffled);
}

TEST_CASE("self-loop gene grows monotonically and tracks the ODE", "[datasets]") {
    const Index genes = 2, cells = 8, timepoints = 9;
    Matrix a = Matrix::Zero(genes, genes);
    a(0, 0) = 1.0;
    const auto frames = simulate_sparse_sde_paths(genes, a, timepoints, cells, 0.0, 13);
    for (Index c = 0; c < cells; ++c) {
        REQUIRE(frames[0](c, 0) > 0.0);
        for (std::size_t k = 1; k < frames.size(); ++k)
            REQUIRE(frames[k](c, 0) > frames[k - 1](c, 0));
    }
    // independent oracle: RK4 on dx = tanh(x) from the same start, span 4
    const double x_start = frames[0](0, 0);
    double x = x_start;
    const int rk_steps = 4000;
    const double h = 4.0 / rk_steps;
    for (int s = 0; s < rk_steps; ++s) {
        const double k1 = std::tanh(x);
        const double k2 = std::tanh(x + 0.5 * h * k1);
        const double k3 = std::tanh(x + 0.5 * h * k2);
        const double k4 = std::tanh(x + h * k3);
        x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    REQUIRE(frames.back()(0, 0) == Catch::Approx(x).margin(0.05));
}

TEST_CASE("sparse sde rejects a nonsquare adjacency", "[datasets]") {
    REQUIRE_THROWS_AS(make_sparse_sde_series(3, Matrix::Zero(3, 4), 5, 10, 0.1, 1), ConfigError);
}

TEST_CASE("csv round trip preserves a cloud", "[datasets][io]") {
    Rng rng(2);
    Matrix pts(5, 3);
    rng.fill_normal(pts);
    const PointCloud c = PointCloud::uniform(pts, "probe");
    const std::string path = temp_path("sf2m_roundtrip.csv");
    save_csv(c, path);
    const PointCloud back = load_csv(path);
    REQUIRE(back.dim() == 3);
    REQUIRE(back.size() == 5);
    REQUIRE((back.points() - c.points()).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((back.weights() - c.weights()).cwiseAbs().maxCoeff() < 1e-12);

    // non-uniform weights travel through the w column
    Vector w(5);
    w << 0.1, 0.2, 0.3, 0.15, 0.25;
    const PointCloud cw(pts, w);
    save_csv(cw, path);
    const PointCloud backw = load_csv(path);
    REQUIRE((backw.weights() - w).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("csv loader reports malformed input", "[datasets][io]") {
    const std::string path = temp_path("sf2m_bad.csv");
    {
        std::ofstream out(path);
    }
    REQUIRE_THROWS_AS(load_csv(path), ParseError);

    {
        std::ofstream out(path);
        out << "x0,x1\n1.0,2.0\n3.0,nan\n";
    }
    try {
        load_csv(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        REQUIRE(std::string(e.what()).find("row 2") != std::string::npos);
    }

    {
        std::ofstream out(path);
        out << "x0,x1\n1.0,2.0\n3.0\n";
    }
    REQUIRE_THROWS_AS(load_csv(path), ParseError);

    {
        std::ofstream out(path);
        out << "x0,x1\n1.0,abc\n";
    }
    REQUIRE_THROWS_AS(load_csv(path), ParseError);
    std::remove(path.c_str());
}

TEST_CASE("whitening composed with its inverse is the identity", "[datasets]") {
    Rng rng(17);
    Matrix pts(200, 4);
    rng.fill_normal(pts);
    pts.col(1) *= 7.0;
    pts.col(2).array() += 3.0;
    const PointCloud c = PointCloud::uniform(pts);
    const Whitener w = Whitener::fit(c);
    const Matrix z = w.apply(c.points());
    REQUIRE(std::abs(z.col(1).mean()) < 1e-10);
    REQUIRE(std::abs(z.col(1).array().square().mean() - 1.0) < 1e-10);
    const Matrix back = w.invert(z);
    REQUIRE((back - c.points()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("point cloud invariants are enforced on construction", "[datasets]") {
    Matrix pts(2, 2);
    pts << 0, 0, 1, 1;
    Vector bad_sum(2);
    bad_sum << 0.5, 0.6;
    REQUIRE_THROWS_AS(PointCloud(pts, bad_sum), ConfigError);
    Vector negative(2);
    negative << 1.5, -0.5;
    REQUIRE_THROWS_AS(PointCloud(pts, negative), ConfigError);
    REQUIRE_THROWS_AS(TimepointSeries({PointCloud::uniform(pts)}), ConfigError);
}
