#pragma once

#include "sf2m/core.hpp"
#include "sf2m/point_cloud.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace sf2m {

enum class ToyName { eight_gaussians, moons, scurve, gaussian };

inline ToyName toy_name_from_string(const std::string& s) {
    if (s == "8gaussians") return ToyName::eight_gaussians;
    if (s == "moons") return ToyName::moons;
    if (s == "scurve") return ToyName::scurve;
    if (s == "gaussian") return ToyName::gaussian;
    throw ConfigError("make_toy: unknown dataset name '" + s + "'");
}

// Pinned 2D benchmark geometry. The conventions (all overridable):
//   8gaussians: modes equally spaced on a circle of radius `scale`,
//               per-mode isotropic std 0.1 * scale. The default radius keeps
//               the empirical-W2 sampling floor (inter-mode multinomial mass,
//               ~0.09 * scale at 5000 points) well under the benchmark bounds.
//   moons:      two interleaved half circles with Gaussian noise `moons_noise`,
//               then x -> moons_scale * x + moons_shift on both coordinates.
//   scurve:     (sin t, sign(t)(cos t - 1)), t ~ U(-3pi/2, 3pi/2), plus
//               scurve_noise * N(0, I).
//   gaussian:   N(mean, var * I) in `dim` dimensions.
struct ToyParams {
    double scale = 3.0;
    double moons_noise = 0.2;
    double moons_scale = 3.0;
    double moons_shift = -1.0;
    double scurve_noise = 0.05;
    Vector mean;      // gaussian only; empty means zeros(dim)
    double var = 1.0; // gaussian only
    Index dim = 2;    // gaussian only
};

inline PointCloud make_toy(ToyName name, Index n, std::uint64_t seed, const ToyParams& params = {}) {
    if (n < 1) throw ConfigError("make_toy: n must be >= 1");
    Rng rng = Rng(seed).fork(0x0701);
    switch (name) {
        case ToyName::eight_gaussians: {
            Matrix x(n, 2);
            const double r = params.scale;
            const double s = 0.1 * params.scale;
            for (Index i = 0; i < n; ++i) {
                const auto mode = rng.uniform_int(8);
                const double angle = 2.0 * M_PI * static_cast<double>(mode) / 8.0;
                x(i, 0) = r * std::cos(angle) + s * rng.normal();
                x(i, 1) = r * std::sin(angle) + s * rng.normal();
            }
            return PointCloud::uniform(std::move(x), "8gaussians");
        }
        case ToyName::moons: {
            Matrix x(n, 2);
            for (Index i = 0; i < n; ++i) {
                const double phi = M_PI * rng.uniform01();
                double px, py;
                if (rng.uniform_int(2) == 0) {
                    px = std::cos(phi);
                    py = std::sin(phi);
                } else {
                    px = 1.0 - std::cos(phi);
                    py = 0.5 - std::sin(phi);
                }
                px += params.moons_noise * rng.normal();
                py += params.moons_noise * rng.normal();
                x(i, 0) = params.moons_scale * px + params.moons_shift;
                x(i, 1) = params.moons_scale * py + params.moons_shift;
            }
            return PointCloud::uniform(std::move(x), "moons");
        }
        case ToyName::scurve: {
            Matrix x(n, 2);
            for (Index i = 0; i < n; ++i) {
                const double t = 1.5 * M_PI * (2.0 * rng.uniform01() - 1.0);
                const double sgn = t >= 0.0 ? 1.0 : -1.0;
                x(i, 0) = std::sin(t) + params.scurve_noise * rng.normal();
                x(i, 1) = sgn * (std::cos(t) - 1.0) + params.scurve_noise * rng.normal();
            }
            return PointCloud::uniform(std::move(x), "scurve");
        }
        case ToyName::gaussian: {
            const Index d = params.mean.size() > 0 ? params.mean.size() : params.dim;
            if (d < 1) throw ConfigError("make_toy: gaussian needs a positive dimension");
            if (params.var < 0) throw ConfigError("make_toy: gaussian variance must be >= 0");
            Vector mean = params.mean.size() > 0 ? params.mean : Vector::Zero(d);
            const double s = std::sqrt(params.var);
            Matrix x(n, d);
            for (Index i = 0; i < n; ++i)
                for (Index j = 0; j < d; ++j) x(i, j) = mean(j) + s * rng.normal();
            return PointCloud::uniform(std::move(x), "gaussian");
        }
    }
    throw ConfigError("make_toy: unknown dataset name");
}

/// Source N(-0.1*1, I) and target N(+0.1*1, I): the Gaussian-to-Gaussian
/// benchmark pair whose Schrodinger bridge is known in closed form.
inline std::pair<PointCloud, PointCloud> make_gaussian_pair(Index dim, Index n, std::uint64_t seed) {
    if (dim < 1) throw ConfigError("make_gaussian_pair: dim must be >= 1");
    if (n < 1) throw ConfigError("make_gaussian_pair: n must be >= 1");
    ToyParams src, tgt;
    src.mean = Vector::Constant(dim, -0.1);
    tgt.mean = Vector::Constant(dim, 0.1);
    Rng rng(seed);
    PointCloud q0 = make_toy(ToyName::gaussian, n, rng.fork(1).seed(), src);
    PointCloud q1 = make_toy(ToyName::gaussian, n, rng.fork(2).seed(), tgt);
    return {std::move(q0), std::move(q1)};
}

// --- Synthetic sparse-dynamics snapshots for network-recovery tests ---------
//
// Cells evolve by dx_j = tanh(sum_i x_i A[i][j]) dt + noise dW_j, i.e.
// adjacency(i, j) is the signed influence of gene i on gene j. The initial law
// is N(e_0, 0.1^2 I) (first gene switched on). Snapshots are taken at
// `timepoints` equally spaced times spanning [0, 4] and each snapshot's row
// order is shuffled independently, destroying the cell pairing.

struct SparseSdeSeries {
    TimepointSeries series;
    Matrix adjacency;
};

/// Unshuffled path states at every snapshot time; frames[k] is cells x genes.
inline std::vector<Matrix> simulate_sparse_sde_paths(Index genes, const Matrix& adjacency,
                                                     Index timepoints, Index cells, double noise,
                                                     std::uint64_t seed, double span = 4.0) {
    if (adjacency.rows() != adjacency.cols())
        throw ConfigError("make_sparse_sde_series: adjacency must be square");
    if (adjacency.rows() != genes)
        throw ConfigError("make_sparse_sde_series: adjacency size does not match gene count");
    if (timepoints < 2) throw ConfigError("make_sparse_sde_series: needs at least 2 timepoints");
    if (cells < 1) throw ConfigError("make_sparse_sde_series: needs at least 1 cell");
    if (noise < 0) throw ConfigError("make_sparse_sde_series: noise must be >= 0");

    Rng rng = Rng(seed).fork(0x5de5);
    Matrix x(cells, genes);
    for (Index c = 0; c < cells; ++c) {
        for (Index g = 0; g < genes; ++g) x(c, g) = 0.1 * rng.normal();
        x(c, 0) += 1.0;
    }

    const double gap = span / static_cast<double>(timepoints - 1);
    const Index substeps = std::max<Index>(1, static_cast<Index>(std::ceil(gap / 0.01)));
    const double dt = gap / static_cast<double>(substeps);
    const double noise_step = noise * std::sqrt(dt);

    std::vector<Matrix> frames;
    frames.reserve(static_cast<std::size_t>(timepoints));
    frames.push_back(x);
    for (Index k = 1; k < timepoints; ++k) {
        for (Index s = 0; s < substeps; ++s) {
            Matrix drift = (x * adjacency).array().tanh();
            x += dt * drift;
            if (noise > 0.0) {
                for (Index c = 0; c < cells; ++c)
                    for (Index g = 0; g < genes; ++g) x(c, g) += noise_step * rng.normal();
            }
        }
        frames.push_back(x);
    }
    return frames;
}

inline SparseSdeSeries make_sparse_sde_series(Index genes, const Matrix& adjacency, Index timepoints,
                                              Index cells, double noise, std::uint64_t seed) {
    std::vector<Matrix> frames =
        simulate_sparse_sde_paths(genes, adjacency, timepoints, cells, noise, seed);

    Rng shuffler = Rng(seed).fork(0x5f1e);
    std::vector<PointCloud> snapshots;
    std::vector<double> times;
    snapshots.reserve(frames.size());
    const double gap = 4.0 / static_cast<double>(timepoints - 1);
    for (std::size_t k = 0; k < frames.size(); ++k) {
        const auto order = shuffler.sample_without_replacement(cells, cells);
        Matrix shuffled(cells, genes);
        for (Index c = 0; c < cells; ++c) shuffled.row(c) = frames[k].row(order[static_cast<std::size_t>(c)]);
        snapshots.push_back(PointCloud::uniform(std::move(shuffled), "t" + std::to_string(k)));
        times.push_back(gap * static_cast<double>(k));
    }
    return SparseSdeSeries{TimepointSeries(std::move(snapshots), std::move(times)), adjacency};
}

} // namespace sf2m
