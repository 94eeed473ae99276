#pragma once

#include "sf2m/core.hpp"
#include "sf2m/ot.hpp"
#include "sf2m/point_cloud.hpp"
#include "sf2m/sim.hpp"
#include "sf2m/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace sf2m {

enum class WassersteinOrder { w1, w2 };

struct WassersteinReport {
    double value = 0.0;
    Index n_a_used = 0;
    Index n_b_used = 0;
    bool subsampled = false;
};

// Empirical Wasserstein distance via the exact solver. Clouds larger than
// max_points are deterministically subsampled (head prefix of i.i.d. rows) and
// the subsample size is recorded in the report.
inline WassersteinReport wasserstein_report(const PointCloud& a_in, const PointCloud& b_in,
                                            WassersteinOrder order, Index max_points = 5000) {
    if (a_in.dim() != b_in.dim()) throw ConfigError("wasserstein: dimension mismatch");
    const PointCloud a = a_in.head(max_points);
    const PointCloud b = b_in.head(max_points);

    CostMatrix cost = cost_sq_euclidean(a, b);
    if (order == WassersteinOrder::w1) cost.values = cost.values.array().sqrt();
    const CouplingPlan plan = solve_exact(cost, a.weights(), b.weights());

    WassersteinReport rep;
    rep.value = order == WassersteinOrder::w2 ? std::sqrt(std::max(plan.cost, 0.0)) : plan.cost;
    rep.n_a_used = a.size();
    rep.n_b_used = b.size();
    rep.subsampled = a.size() < a_in.size() || b.size() < b_in.size();
    return rep;
}

inline double wasserstein(const PointCloud& a, const PointCloud& b, WassersteinOrder order,
                          Index max_points = 5000) {
    return wasserstein_report(a, b, order, max_points).value;
}

// --- Gaussian moment fits and closed-form KL --------------------------------

struct GaussianFit {
    Vector mean;
    Matrix cov; // unbiased estimator
};

inline GaussianFit fit_gaussian(const Matrix& samples) {
    const Index n = samples.rows(), d = samples.cols();
    if (n < d + 1) throw ConfigError("fit_gaussian: needs at least d+1 samples");
    GaussianFit fit;
    fit.mean = samples.colwise().mean();
    const Matrix centered = samples.rowwise() - fit.mean.transpose();
    fit.cov = centered.transpose() * centered / static_cast<double>(n - 1);
    return fit;
}

/// KL(N(m0, S0) || N(m1, S1)), closed form. A singular fitted covariance is
/// regularized by 1e-8 I; `regularized` reports whether that happened.
inline double gaussian_kl(const Vector& m0, const Matrix& s0_in, const Vector& m1, const Matrix& s1,
                          bool* regularized = nullptr) {
    const Index d = m0.size();
    Matrix s0 = s0_in;
    if (regularized) *regularized = false;
    Eigen::LLT<Matrix> llt0(s0);
    if (llt0.info() != Eigen::Success) {
        s0.diagonal().array() += 1e-8;
        llt0.compute(s0);
        if (regularized) *regularized = true;
        if (llt0.info() != Eigen::Success) throw NumericError("gaussian_kl: fitted covariance not PSD");
    }
    Eigen::LLT<Matrix> llt1(s1);
    if (llt1.info() != Eigen::Success) throw NumericError("gaussian_kl: reference covariance not PSD");

    const Matrix s1_inv_s0 = llt1.solve(s0);
    const Vector diff = m1 - m0;
    const double quad = diff.dot(llt1.solve(diff));
    auto logdet = [](const Eigen::LLT<Matrix>& llt) {
        return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    };
    const double kl =
        0.5 * (s1_inv_s0.trace() + quad - static_cast<double>(d) + logdet(llt1) - logdet(llt0));
    return std::max(kl, 0.0);
}

inline double gaussian_kl_isotropic(const GaussianFit& fit, const Vector& ref_mean, double ref_var,
                                    bool* regularized = nullptr) {
    const Matrix ref_cov = ref_var * Matrix::Identity(fit.mean.size(), fit.mean.size());
    return gaussian_kl(fit.mean, fit.cov, ref_mean, ref_cov, regularized);
}

// --- Closed-form Gaussian-to-Gaussian Schrodinger bridge oracle -------------
//
// Between N(-shift 1, I) and N(+shift 1, I) with reference diffusion sigma, the
// bridge marginal at time t is N((2 shift t - shift) 1, v(t) I) with
// v(t) = t(1-t) sqrt(4 + sigma^4) + (1-t)^2 + t^2. v(0) = v(1) = 1 identically.
struct GaussianSbOracle {
    Index dim = 5;
    double sigma = 1.0;
    double shift = 0.1;

    std::pair<Vector, double> marginal(double t) const {
        if (t < 0.0 || t > 1.0) throw ConfigError("GaussianSbOracle: t must be in [0, 1]");
        const double root = std::sqrt(4.0 + std::pow(sigma, 4));
        const double var = t * (1.0 - t) * root + (1.0 - t) * (1.0 - t) + t * t;
        return {Vector::Constant(dim, 2.0 * shift * t - shift), var};
    }

    double mean_rate() const { return 2.0 * shift; }

    double var_rate(double t) const {
        return (1.0 - 2.0 * t) * (std::sqrt(4.0 + std::pow(sigma, 4)) - 2.0);
    }

    PointCloud sample_source(Index n, std::uint64_t seed) const {
        ToyParams p;
        p.mean = Vector::Constant(dim, -shift);
        return make_toy(ToyName::gaussian, n, seed, p);
    }
};

/// The oracle as a drop-in flow/score model: the affine probability flow
/// u(t, x) = m'(t) + (v'(t)/2v(t))(x - m(t)) and score -(x - m(t))/v(t).
/// Substituting it for trained networks isolates integrator error.
struct GaussianSbOracleModel {
    GaussianSbOracle oracle;

    double time_span() const { return 1.0; }
    bool has_score() const { return true; }

    Matrix eval_flow(const Vector& t, const Matrix& x) const {
        Matrix out(x.rows(), x.cols());
        for (Index i = 0; i < x.rows(); ++i) {
            const auto [mean, var] = oracle.marginal(std::clamp(t(i), 0.0, 1.0));
            const double ratio = oracle.var_rate(std::clamp(t(i), 0.0, 1.0)) / (2.0 * var);
            out.row(i) = (ratio * (x.row(i).transpose() - mean)).transpose().array() + oracle.mean_rate();
        }
        return out;
    }

    Matrix eval_score(const Vector& t, const Matrix& x) const {
        Matrix out(x.rows(), x.cols());
        for (Index i = 0; i < x.rows(); ++i) {
            const auto [mean, var] = oracle.marginal(std::clamp(t(i), 0.0, 1.0));
            out.row(i) = ((mean - x.row(i).transpose()) / var).transpose();
        }
        return out;
    }
};

struct SbBenchmarkReport {
    std::vector<double> times;
    std::vector<double> kl;
    double kl_endpoint = 0.0;
    double kl_mean = 0.0;
    Index n_samples = 0;
    std::uint64_t seed = 0;
    std::string kl_direction = "fit||truth";
};

/// Simulate with g = sigma from fresh source samples, fit a Gaussian at each of
/// `timepoints` equally spaced times, and report KL(fit || oracle marginal).
template <class Model>
SbBenchmarkReport sb_benchmark(const Model& model, const GaussianSbOracle& oracle, Index timepoints = 21,
                               Index n = 10000, Index steps = 20, std::uint64_t seed = 0) {
    if (timepoints < 2) throw ConfigError("sb_benchmark: needs at least 2 timepoints");
    if (steps % (timepoints - 1) != 0)
        throw ConfigError("sb_benchmark: steps must be a multiple of timepoints - 1");
    const PointCloud source = oracle.sample_source(n, seed);
    const TrajectoryEnsemble traj =
        simulate_sde(model, source.points(), oracle.sigma, steps, Rng(seed).fork(0xbe7c));

    SbBenchmarkReport rep;
    rep.n_samples = n;
    rep.seed = seed;
    const Index stride = steps / (timepoints - 1);
    for (Index k = 0; k < timepoints; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(timepoints - 1);
        const auto [mean, var] = oracle.marginal(t);
        const GaussianFit fit = fit_gaussian(traj.frames[static_cast<std::size_t>(k * stride)]);
        rep.times.push_back(t);
        rep.kl.push_back(gaussian_kl_isotropic(fit, mean, var));
    }
    rep.kl_endpoint = rep.kl.back();
    rep.kl_mean = std::accumulate(rep.kl.begin(), rep.kl.end(), 0.0) / static_cast<double>(rep.kl.size());
    return rep;
}

// --- Normalized path energy --------------------------------------------------

/// Mean kinetic energy of the probability-flow ODE, left-endpoint Riemann sum.
template <class Model>
double path_energy(const Model& model, const Matrix& x0, Index steps) {
    const double span = model.time_span();
    const double dt = span / static_cast<double>(steps);
    Matrix x = x0;
    double energy = 0.0;
    for (Index k = 0; k < steps; ++k) {
        const double t = dt * static_cast<double>(k);
        const Vector tv = Vector::Constant(x.rows(), t);
        const Matrix v = model.eval_flow(tv, x);
        energy += v.array().square().rowwise().sum().mean() * dt;
        x += dt * v;
    }
    return energy;
}

/// NPE = |path energy - W2^2(q0, q1)| / W2^2(q0, q1), energy along g = 0 paths.
template <class Model>
double npe(const Model& model, const PointCloud& q0, const PointCloud& q1, Index steps = 100,
           Index w2_max_points = 5000) {
    const double w2 = wasserstein(q0, q1, WassersteinOrder::w2, w2_max_points);
    if (w2 * w2 < 1e-12) throw ConfigError("npe: W2(q0, q1) is zero");
    const double energy = path_energy(model, q0.points(), steps);
    return std::abs(energy - w2 * w2) / (w2 * w2);
}

// --- Leave-one-out interpolation ---------------------------------------------

struct LeaveOneOutReport {
    double w1_model = 0.0;
    double w1_copy_baseline = 0.0; // W1(snapshot k-1, snapshot k)
    Index held_out = 0;
};

// Train on the series minus snapshot k (segment indices relabeled contiguously,
// so the k-1 -> k+1 gap is spanned by one unit segment), then push snapshot k-1
// forward half that segment — the held-out time sits at the middle of the gap —
// and compare against the held-out snapshot.
inline LeaveOneOutReport leave_one_out(const TimepointSeries& series, const TrainConfig& cfg,
                                       std::size_t held_out, Index sim_steps = 100,
                                       Index w2_max_points = 5000) {
    const std::size_t k_count = series.count();
    if (k_count < 3 || held_out < 1 || held_out > k_count - 2)
        throw ConfigError("leave_one_out: held-out index must be interior");

    std::vector<PointCloud> reduced;
    for (std::size_t k = 0; k < k_count; ++k)
        if (k != held_out) reduced.push_back(series.snapshots[k]);
    const TimepointSeries reduced_series(std::move(reduced));

    auto trained = train_trajectory(reduced_series, cfg);

    // global time k-1 .. k-0.5 within the trained (relabeled) clock
    const double t0 = static_cast<double>(held_out - 1);
    const double t1 = t0 + 0.5;
    const Matrix start = series.snapshots[held_out - 1].points();
    Rng rng = Rng(cfg.seed).fork(0x100);
    const Matrix predicted =
        simulate_interval(trained.model, start, cfg.sigma, sim_steps, rng, t0, t1);

    LeaveOneOutReport rep;
    rep.held_out = static_cast<Index>(held_out);
    rep.w1_model = wasserstein(PointCloud::uniform(predicted), series.snapshots[held_out],
                               WassersteinOrder::w1, w2_max_points);
    rep.w1_copy_baseline = wasserstein(series.snapshots[held_out - 1], series.snapshots[held_out],
                                       WassersteinOrder::w1, w2_max_points);
    return rep;
}

// --- Classification metrics for network recovery -----------------------------

struct GrnMetrics {
    double auc_roc = 0.0;
    double avg_precision = 0.0;
};

/// Exact threshold-sweep AUC-ROC (rank statistic with tie correction) and
/// average precision over the (optionally off-diagonal) entries.
inline GrnMetrics grn_metrics(const Matrix& scores, const Matrix& truth, bool mask_diag = true) {
    if (scores.rows() != truth.rows() || scores.cols() != truth.cols())
        throw ConfigError("grn_metrics: shape mismatch");
    std::vector<std::pair<double, int>> items; // (score, label)
    for (Index i = 0; i < scores.rows(); ++i)
        for (Index j = 0; j < scores.cols(); ++j) {
            if (mask_diag && i == j) continue;
            const double tv = truth(i, j);
            if (tv != 0.0 && tv != 1.0) throw ConfigError("grn_metrics: truth must be binary");
            items.emplace_back(scores(i, j), static_cast<int>(tv));
        }
    const auto n_pos = static_cast<double>(
        std::count_if(items.begin(), items.end(), [](const auto& it) { return it.second == 1; }));
    const auto n_neg = static_cast<double>(items.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw ConfigError("grn_metrics: AUC undefined (single-class truth)");

    // AUC via Mann-Whitney with average ranks over ties
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < items.size();) {
        std::size_t j = i;
        while (j < items.size() && items[j].first == items[i].first) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j)); // 1-based
        for (std::size_t k = i; k < j; ++k)
            if (items[k].second == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    GrnMetrics m;
    m.auc_roc = (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);

    // AP: exact sweep over unique thresholds, descending, ties grouped
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
    for (std::size_t i = 0; i < items.size();) {
        std::size_t j = i;
        while (j < items.size() && items[j].first == items[i].first) ++j;
        for (std::size_t k = i; k < j; ++k) {
            if (items[k].second == 1)
                tp += 1.0;
            else
                fp += 1.0;
        }
        const double recall = tp / n_pos;
        const double precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    m.avg_precision = ap;
    return m;
}

// --- Kolmogorov-Smirnov helpers (used by the bridge property suite) ----------

inline double ks_statistic_normal(std::vector<double> samples, double mean, double stddev) {
    std::sort(samples.begin(), samples.end());
    const auto n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double z = (samples[i] - mean) / stddev;
        const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - cdf));
        d = std::max(d, std::abs(cdf - static_cast<double>(i) / n));
    }
    return d;
}

/// Asymptotic Kolmogorov distribution p-value.
inline double ks_pvalue(double d, std::size_t n) {
    const double rn = std::sqrt(static_cast<double>(n));
    const double lambda = (rn + 0.12 + 0.11 / rn) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = 2.0 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * lambda * lambda);
        p += term;
        if (std::abs(term) < 1e-12) break;
    }
    return std::clamp(p, 0.0, 1.0);
}

} // namespace sf2m
