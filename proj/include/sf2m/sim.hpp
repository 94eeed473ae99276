#pragma once

#include "sf2m/core.hpp"
#include "sf2m/point_cloud.hpp"

#include <cmath>
#include <vector>

namespace sf2m {

enum class Direction { forward, backward };

/// Time-indexed sample paths. frames[k] holds all paths' states at times[k];
/// for backward runs, times is the backward pseudo-time s (states at s sit at
/// physical time span - s), kept strictly increasing from 0.
struct TrajectoryEnsemble {
    Vector times;              // steps + 1 entries, strictly increasing from 0
    std::vector<Matrix> frames; // each n x d
    double g_used = 0.0;
    Direction direction = Direction::forward;

    Index paths() const { return frames.empty() ? 0 : frames.front().rows(); }
    Index dim() const { return frames.empty() ? 0 : frames.front().cols(); }
    Index steps() const { return static_cast<Index>(frames.size()) - 1; }
    const Matrix& terminal() const { return frames.back(); }
};

// A model is anything exposing eval_flow(t, x), eval_score(t, x) (true score),
// has_score(), and time_span(); trained pairs, closed-form oracles, and test
// stubs all plug into the same integrators.

/// Euler-Maruyama over [0, span]: x += [v + (g^2/2) score] dt + g dW. With
/// g = 0 this is explicit Euler on the probability-flow ODE and draws no noise.
template <class Model>
TrajectoryEnsemble simulate_sde(const Model& model, const Matrix& x0, double g, Index steps, Rng rng) {
    if (steps < 1) throw ConfigError("simulate_sde: steps must be >= 1");
    if (g < 0) throw ConfigError("simulate_sde: g must be >= 0");
    if (g > 0 && !model.has_score())
        throw ConfigError("simulate_sde: g > 0 needs a score model (trained with sigma > 0)");

    const double span = model.time_span();
    const double dt = span / static_cast<double>(steps);
    const double noise_scale = g * std::sqrt(dt);

    TrajectoryEnsemble out;
    out.g_used = g;
    out.direction = Direction::forward;
    out.times.resize(steps + 1);
    out.frames.reserve(static_cast<std::size_t>(steps) + 1);
    out.frames.push_back(x0);

    Matrix x = x0;
    Matrix noise(x.rows(), x.cols());
    for (Index k = 0; k < steps; ++k) {
        const double t = dt * static_cast<double>(k);
        out.times(k) = t;
        const Vector tv = Vector::Constant(x.rows(), t);
        Matrix drift = model.eval_flow(tv, x);
        if (g > 0.0) {
            drift += (g * g / 2.0) * model.eval_score(tv, x);
            rng.fill_normal(noise);
            x += dt * drift + noise_scale * noise;
        } else {
            x += dt * drift;
        }
        out.frames.push_back(x);
    }
    out.times(steps) = span;
    return out;
}

/// Time reversal: drift -v + (g^2/2) score, stepped from the terminal time down
/// to 0. Generates the reverse-time marginals of the forward process.
template <class Model>
TrajectoryEnsemble simulate_backward(const Model& model, const Matrix& x1, double g, Index steps, Rng rng) {
    if (steps < 1) throw ConfigError("simulate_backward: steps must be >= 1");
    if (g < 0) throw ConfigError("simulate_backward: g must be >= 0");
    if (g > 0 && !model.has_score())
        throw ConfigError("simulate_backward: g > 0 needs a score model (trained with sigma > 0)");

    const double span = model.time_span();
    const double dt = span / static_cast<double>(steps);
    const double noise_scale = g * std::sqrt(dt);

    TrajectoryEnsemble out;
    out.g_used = g;
    out.direction = Direction::backward;
    out.times.resize(steps + 1);
    out.frames.reserve(static_cast<std::size_t>(steps) + 1);
    out.frames.push_back(x1);

    Matrix x = x1;
    Matrix noise(x.rows(), x.cols());
    for (Index k = 0; k < steps; ++k) {
        const double t = span - dt * static_cast<double>(k); // physical time, decreasing
        out.times(k) = dt * static_cast<double>(k);
        const Vector tv = Vector::Constant(x.rows(), t);
        Matrix drift = -model.eval_flow(tv, x);
        if (g > 0.0) {
            drift += (g * g / 2.0) * model.eval_score(tv, x);
            rng.fill_normal(noise);
            x += dt * drift + noise_scale * noise;
        } else {
            x += dt * drift;
        }
        out.frames.push_back(x);
    }
    out.times(steps) = span;
    return out;
}

/// Terminal slice of a forward simulation as a uniformly weighted cloud.
template <class Model>
PointCloud push_forward(const Model& model, const PointCloud& cloud, double g, Index steps, Rng rng) {
    const TrajectoryEnsemble traj = simulate_sde(model, cloud.points(), g, steps, std::move(rng));
    return PointCloud::uniform(traj.terminal(), cloud.label());
}

/// Forward integration over the sub-interval [t0, t1]; returns terminal states.
template <class Model>
Matrix simulate_interval(const Model& model, const Matrix& x0, double g, Index steps, Rng rng, double t0,
                         double t1) {
    if (steps < 1) throw ConfigError("simulate_interval: steps must be >= 1");
    if (t1 <= t0) throw ConfigError("simulate_interval: t1 must exceed t0");
    if (g > 0 && !model.has_score())
        throw ConfigError("simulate_interval: g > 0 needs a score model");
    const double dt = (t1 - t0) / static_cast<double>(steps);
    const double noise_scale = g * std::sqrt(dt);
    Matrix x = x0;
    Matrix noise(x.rows(), x.cols());
    for (Index k = 0; k < steps; ++k) {
        const double t = t0 + dt * static_cast<double>(k);
        const Vector tv = Vector::Constant(x.rows(), t);
        Matrix drift = model.eval_flow(tv, x);
        if (g > 0.0) {
            drift += (g * g / 2.0) * model.eval_score(tv, x);
            rng.fill_normal(noise);
            x += dt * drift + noise_scale * noise;
        } else {
            x += dt * drift;
        }
    }
    return x;
}

} // namespace sf2m
