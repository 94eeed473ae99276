#pragma once

#include "sf2m/core.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <utility>

namespace sf2m {

/// Optional time-varying diffusion sigma(t) with cumulative F(t) = int_0^t sigma^2.
struct DiffusionSchedule {
    std::function<double(double)> sigma_sq; // sigma^2(t)
    std::function<double(double)> cumulative; // F(t)

    void validate() const {
        if (!sigma_sq || !cumulative) throw ConfigError("DiffusionSchedule: missing callables");
        if (std::abs(cumulative(0.0)) > 1e-12) throw ConfigError("DiffusionSchedule: F(0) must be 0");
        double prev = 0.0;
        for (int k = 1; k <= 100; ++k) {
            const double t = static_cast<double>(k) / 100.0;
            const double f = cumulative(t);
            if (f < prev - 1e-12) throw ConfigError("DiffusionSchedule: F must be nondecreasing");
            prev = f;
        }
    }
};

struct BridgeSpec {
    double sigma = 1.0;
    double var_floor = 1e-6; // additive variance smoothing for sampling/score
    std::optional<DiffusionSchedule> schedule;

    BridgeSpec() = default;
    explicit BridgeSpec(double s, double floor = 1e-6) : sigma(s), var_floor(floor) {
        if (sigma < 0) throw ConfigError("BridgeSpec: sigma must be >= 0");
        if (var_floor < 0) throw ConfigError("BridgeSpec: var_floor must be >= 0");
    }

    void set_schedule(DiffusionSchedule s) {
        s.validate();
        // constant-schedule consistency: F(t) = sigma^2 t
        bool constant = true;
        for (int k = 0; k <= 10; ++k) {
            const double t = static_cast<double>(k) / 10.0;
            if (std::abs(s.sigma_sq(t) - sigma * sigma) > 1e-12) {
                constant = false;
                break;
            }
        }
        if (constant) {
            for (int k = 0; k <= 10; ++k) {
                const double t = static_cast<double>(k) / 10.0;
                if (std::abs(s.cumulative(t) - sigma * sigma * t) > 1e-12)
                    throw ConfigError("BridgeSpec: constant schedule must satisfy F(t) = sigma^2 t");
            }
        }
        schedule = std::move(s);
    }
};

enum class Parametrization { raw_score, scaled_score };

/// mu_t = t x1 + (1-t) x0 and sigma_t = sqrt(sigma^2 t(1-t) + var_floor).
inline std::pair<Vector, double> bridge_mean_std(const BridgeSpec& spec, double t, const Vector& x0,
                                                 const Vector& x1) {
    if (t < 0.0 || t > 1.0) throw ConfigError("bridge_mean_std: t must be in [0, 1]");
    Vector mu = t * x1 + (1.0 - t) * x0;
    const double sd = std::sqrt(spec.sigma * spec.sigma * t * (1.0 - t) + spec.var_floor);
    return {std::move(mu), sd};
}

// Conditional probability-flow drift of the Brownian bridge,
//   u(t, x | x0, x1) = ((1-2t) / (2 t (1-t))) (x - mu_t) + (x1 - x0),
// the flow whose marginals are N(mu_t, sigma^2 t(1-t)). Note the 2 in the
// denominator: it follows from sigma_t'/sigma_t with sigma_t = sigma sqrt(t(1-t)),
// and is what makes u + (sigma^2/2) grad log p equal the pinned-bridge drift
// (x1 - x)/(1-t). Evaluated with the unsmoothed variance; endpoints excluded.
inline Vector conditional_flow(double t, const Vector& x, const Vector& x0, const Vector& x1) {
    if (t <= 0.0 || t >= 1.0) throw ConfigError("conditional_flow: t must lie strictly inside (0, 1)");
    const double coeff = (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t));
    return coeff * (x - (t * x1 + (1.0 - t) * x0)) + (x1 - x0);
}

/// grad_x log p_t(x | x0, x1) = (mu_t - x) / (sigma^2 t(1-t) + var_floor).
inline Vector conditional_score(double t, const Vector& x, const Vector& x0, const Vector& x1,
                                const BridgeSpec& spec) {
    if (t <= 0.0 || t >= 1.0) throw ConfigError("conditional_score: t must lie strictly inside (0, 1)");
    if (spec.sigma <= 0.0) throw ConfigError("conditional_score: undefined for sigma = 0");
    const double denom = spec.sigma * spec.sigma * t * (1.0 - t) + spec.var_floor;
    return ((t * x1 + (1.0 - t) * x0) - x) / denom;
}

// Loss weights: raw lambda(t) = sigma sqrt(t(1-t)) for a network regressing the
// score itself; scaled lambda(t) = 2 sqrt(t(1-t)) / sigma for a network
// regressing (sigma^2/2) grad log p. Both make the weighted target N(0, 1).
inline double lambda_schedule(double t, const BridgeSpec& spec, Parametrization p) {
    if (t < 0.0 || t > 1.0) throw ConfigError("lambda_schedule: t must be in [0, 1]");
    if (spec.sigma <= 0.0) throw ConfigError("lambda_schedule: undefined for sigma = 0");
    const double root = std::sqrt(t * (1.0 - t));
    return p == Parametrization::raw_score ? spec.sigma * root : 2.0 * root / spec.sigma;
}

/// Target for lambda(t) s_theta in the simplified objective ||lambda s + eps||^2.
inline Vector simplified_score_target(const Vector& noise) { return -noise; }

/// Time-varying bridge: x_t | x_1 = b from a is N(a + (b-a) F(t)/F(1), F(t) - F(t)^2/F(1)).
inline std::pair<Vector, double> varying_bridge_moments(const BridgeSpec& spec, double t, const Vector& a,
                                                        const Vector& b) {
    if (!spec.schedule) {
        // constant schedule reduces algebraically to the constant-sigma path;
        // evaluate that form directly so the reduction is bit-identical
        const double s2 = spec.sigma * spec.sigma;
        if (s2 <= 0.0) throw ConfigError("varying_bridge_moments: F(1) must be positive");
        Vector mean = a + (b - a) * t;
        return {std::move(mean), s2 * t * (1.0 - t)};
    }
    const double f_t = spec.schedule->cumulative(t);
    const double f_1 = spec.schedule->cumulative(1.0);
    if (f_1 <= 0.0) throw ConfigError("varying_bridge_moments: F(1) must be positive");
    Vector mean = a + (b - a) * (f_t / f_1);
    const double variance = f_t - f_t * f_t / f_1;
    return {std::move(mean), variance};
}

/// Entropic-OT regularization matching the bridge: 2 F(1) (= 2 sigma^2 when constant).
inline double sb_coupling_epsilon(const BridgeSpec& spec) {
    if (spec.schedule) return 2.0 * spec.schedule->cumulative(1.0);
    return 2.0 * spec.sigma * spec.sigma;
}

/// Sampled regression batch: x = mu_t + sigma_t eps exactly, flow targets from
/// conditional_flow, lambda weights from the chosen parametrization.
struct BridgeBatch {
    Vector t;           // batch
    Matrix x;           // batch x d
    Matrix x0, x1;      // endpoint pairs z
    Matrix flow_target; // u(t, x | z)
    Matrix noise;       // the eps used to draw x
    Vector lambda;      // lambda(t)
};

inline BridgeBatch sample_bridge_batch(const BridgeSpec& spec, const Matrix& x0, const Matrix& x1,
                                       Parametrization param, Rng& rng, double t_clip = 1e-5) {
    if (x0.rows() != x1.rows() || x0.cols() != x1.cols())
        throw ConfigError("sample_bridge_batch: endpoint shape mismatch");
    const Index n = x0.rows(), d = x0.cols();
    BridgeBatch batch;
    batch.x0 = x0;
    batch.x1 = x1;
    batch.t.resize(n);
    batch.x.resize(n, d);
    batch.flow_target.resize(n, d);
    batch.noise.resize(n, d);
    batch.lambda.resize(n);
    const bool score_on = spec.sigma > 0.0;
    for (Index i = 0; i < n; ++i) {
        // U(0,1) clipped away from the endpoint singularity
        const double t = std::min(1.0 - t_clip, std::max(t_clip, rng.uniform01()));
        batch.t(i) = t;
        const double sd = std::sqrt(spec.sigma * spec.sigma * t * (1.0 - t) + spec.var_floor);
        const double coeff = (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t));
        for (Index j = 0; j < d; ++j) {
            const double mu = t * x1(i, j) + (1.0 - t) * x0(i, j);
            const double eps = rng.normal();
            batch.noise(i, j) = eps;
            const double xv = mu + sd * eps;
            batch.x(i, j) = xv;
            batch.flow_target(i, j) = coeff * (xv - mu) + (x1(i, j) - x0(i, j));
        }
        batch.lambda(i) = score_on ? lambda_schedule(t, spec, param) : 0.0;
    }
    return batch;
}

} // namespace sf2m
