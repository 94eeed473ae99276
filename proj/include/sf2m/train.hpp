#pragma once

#include "sf2m/bridge.hpp"
#include "sf2m/core.hpp"
#include "sf2m/datasets.hpp"
#include "sf2m/net.hpp"
#include "sf2m/ot.hpp"
#include "sf2m/point_cloud.hpp"
#include "sf2m/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace sf2m {

enum class Coupling { exact, sinkhorn, independent, geodesic };

struct LoopConfig {
    int outer_loops = 20;
    long inner_steps = 0;   // gradient steps per outer loop
    Index cache_size = 0;   // resimulated endpoint pairs kept between loops
    Index sim_steps = 20;   // integration steps for the resimulation
};

struct TrainConfig {
    double sigma = 1.0;
    bool score_head = true; // sigma = 0 requires turning this off (flow-only mode)
    Coupling coupling = Coupling::exact;
    Index batch_size = 512;
    long steps = 10000;
    double lr = 1e-3;
    double weight_decay = 1e-5;
    std::uint64_t seed = 0;
    Parametrization parametrization = Parametrization::scaled_score;
    double l1_weight = 0.0; // NGM first-layer sparsity penalty
    std::optional<LoopConfig> loop;
    double var_floor = 1e-6;
    double t_clip = 1e-5;
    int log_every = 100;
    std::optional<double> sinkhorn_epsilon; // default 2 sigma^2
    Index geodesic_knn = 10;
    double geodesic_t_heat = 1.0;
    Index width = 0; // 0 picks the default by dimension

    void validate() const {
        if (sigma < 0) throw ConfigError("TrainConfig: sigma must be >= 0");
        if (sigma == 0 && score_head)
            throw ConfigError("TrainConfig: sigma = 0 with a score head requested (use flow-only mode)");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (steps < 1) throw ConfigError("TrainConfig: steps must be >= 1");
        if (loop) {
            if (loop->cache_size < batch_size)
                throw ConfigError("TrainConfig: loop cache must hold at least one batch");
            if (loop->outer_loops < 1 || loop->inner_steps < 1)
                throw ConfigError("TrainConfig: loop shape must be positive");
        }
    }

    // Flow-only mode samples x = mu_t exactly: with sigma = 0 the conditional
    // path is deterministic, and var_floor jitter would be amplified by the
    // 1/(t(1-t)) flow coefficient near the clipped endpoints.
    BridgeSpec bridge_spec() const { return BridgeSpec(sigma, sigma > 0.0 ? var_floor : 0.0); }
};

struct LossReport {
    long step = 0;
    double flow_loss = 0.0;
    double score_loss = 0.0;
    double total = 0.0;
    double wallclock = 0.0;
};

struct OuterLoopDiag {
    int outer = 0;
    double mean_flow_loss = 0.0;
    double mean_score_loss = 0.0;
    double cache_source_mean_err = 0.0; // |mean(cache x0) - mean(q0)|_2
    double cache_target_mean_err = 0.0;
};

struct StepLosses {
    double flow_loss = 0.0;
    double score_loss = 0.0;
};

namespace detail {

inline void check_targets_finite(const BridgeBatch& batch) {
    if (batch.flow_target.allFinite() && batch.noise.allFinite()) return;
    for (Index i = 0; i < batch.flow_target.rows(); ++i)
        if (!batch.flow_target.row(i).allFinite() || !batch.noise.row(i).allFinite())
            throw NumericError("loss_step: non-finite regression target at t = " + std::to_string(batch.t(i)));
    throw NumericError("loss_step: non-finite regression target");
}

/// Raw-parametrization score target (mu - x)/(sigma^2 t(1-t) + floor) = -eps/sigma_t.
inline Matrix raw_score_target(const BridgeBatch& batch, const BridgeSpec& spec) {
    Matrix target(batch.noise.rows(), batch.noise.cols());
    for (Index i = 0; i < target.rows(); ++i) {
        const double t = batch.t(i);
        const double sd = std::sqrt(spec.sigma * spec.sigma * t * (1.0 - t) + spec.var_floor);
        target.row(i) = -batch.noise.row(i) / sd;
    }
    return target;
}

} // namespace detail

// Regression losses of one batch and their parameter gradients:
//   flow term  mean_i ||v(t_i, x_i) - u(t_i, x_i | z_i)||^2
//   score term mean_i ||lambda_i s + eps_i||^2            (scaled parametrization)
//              mean_i lambda_i^2 ||s - grad log p_i||^2   (raw parametrization)
// `net_time` substitutes the network's time input (global time in trajectory
// mode); targets always use the batch's local times. `score_target_override`
// lets callers regress against a custom score field (raw parametrization).
inline StepLosses loss_step(MlpModelPair& model, const BridgeBatch& batch, const TrainConfig& cfg,
                            Vector* flow_grad, Vector* score_grad, const Vector* net_time = nullptr,
                            const Matrix* score_target_override = nullptr) {
    detail::check_targets_finite(batch);
    const Index n = batch.x.rows();
    const Vector& t_net = net_time ? *net_time : batch.t;
    const Matrix input = model.with_time(t_net, batch.x);

    StepLosses losses;
    {
        Matrix v = model.flow_net().forward(input);
        Matrix diff = v - batch.flow_target;
        losses.flow_loss = diff.squaredNorm() / static_cast<double>(n);
        if (flow_grad) *flow_grad = model.flow_net().backward(2.0 * diff / static_cast<double>(n));
    }
    if (model.has_score() && cfg.score_head) {
        Matrix s = model.score_net().forward(input);
        Matrix upstream;
        if (cfg.parametrization == Parametrization::scaled_score && !score_target_override) {
            // residual r_i = lambda_i s_i + eps_i, loss mean ||r||^2
            Matrix r = s.array().colwise() * batch.lambda.array();
            r += batch.noise;
            losses.score_loss = r.squaredNorm() / static_cast<double>(n);
            upstream = (2.0 / static_cast<double>(n)) * (r.array().colwise() * batch.lambda.array()).matrix();
        } else {
            const Matrix target = score_target_override
                                      ? *score_target_override
                                      : detail::raw_score_target(batch, cfg.bridge_spec());
            Matrix diff = s - target;
            const Vector lam2 = batch.lambda.cwiseProduct(batch.lambda);
            losses.score_loss =
                (diff.array().square().rowwise().sum() * lam2.array()).sum() / static_cast<double>(n);
            upstream = (2.0 / static_cast<double>(n)) * (diff.array().colwise() * lam2.array()).matrix();
        }
        if (score_grad) *score_grad = model.score_net().backward(upstream);
    }
    return losses;
}

inline StepLosses loss_step(NgmModelPair& model, const BridgeBatch& batch, const TrainConfig& cfg,
                            Vector* grad, Vector* /*unused*/ = nullptr, const Vector* /*net_time*/ = nullptr,
                            const Matrix* score_target_override = nullptr) {
    detail::check_targets_finite(batch);
    const Index n = batch.x.rows();
    auto out = model.net().forward(batch.x);

    StepLosses losses;
    Matrix gv = out.drift - batch.flow_target;
    losses.flow_loss = gv.squaredNorm() / static_cast<double>(n);
    gv *= 2.0 / static_cast<double>(n);

    Matrix gs;
    if (model.has_score() && cfg.score_head) {
        const Matrix& s = *out.score;
        if (cfg.parametrization == Parametrization::scaled_score && !score_target_override) {
            Matrix r = s.array().colwise() * batch.lambda.array();
            r += batch.noise;
            losses.score_loss = r.squaredNorm() / static_cast<double>(n);
            gs = (2.0 / static_cast<double>(n)) * (r.array().colwise() * batch.lambda.array()).matrix();
        } else {
            const Matrix target = score_target_override
                                      ? *score_target_override
                                      : detail::raw_score_target(batch, cfg.bridge_spec());
            Matrix diff = s - target;
            const Vector lam2 = batch.lambda.cwiseProduct(batch.lambda);
            losses.score_loss =
                (diff.array().square().rowwise().sum() * lam2.array()).sum() / static_cast<double>(n);
            gs = (2.0 / static_cast<double>(n)) * (diff.array().colwise() * lam2.array()).matrix();
        }
    }
    if (grad) {
        *grad = model.net().backward(gv, gs);
        model.net().add_l1_grad(cfg.l1_weight, *grad);
    }
    return losses;
}

namespace detail {

/// i.i.d. index draws from a cloud's weights (uniform fast path).
class CloudSampler {
public:
    explicit CloudSampler(const PointCloud& cloud) : n_(cloud.size()), uniform_(cloud.uniform_weights()) {
        if (!uniform_) {
            cdf_.resize(static_cast<std::size_t>(n_));
            double acc = 0.0;
            for (Index i = 0; i < n_; ++i) {
                acc += cloud.weights()(i);
                cdf_[static_cast<std::size_t>(i)] = acc;
            }
            cdf_.back() = 1.0;
        }
    }

    Index draw(Rng& rng) const {
        if (uniform_) return static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(n_)));
        const double u = rng.uniform01();
        return static_cast<Index>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
    }

private:
    Index n_;
    bool uniform_;
    std::vector<double> cdf_;
};

inline Matrix gather_rows(const Matrix& src, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), src.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = src.row(rows[r]);
    return out;
}

// Minibatch coupling machinery shared by all training loops. For geodesic
// couplings the heat-kernel cost over the full union is computed once and
// sliced per minibatch; entries are squared to serve as the OT ground cost.
class PairSampler {
public:
    PairSampler(const PointCloud& q0, const PointCloud& q1, const TrainConfig& cfg)
        : q0_(q0), q1_(q1), cfg_(cfg), samp0_(q0), samp1_(q1) {
        if (q0.dim() != q1.dim()) throw ConfigError("train: source/target dimension mismatch");
        if (cfg.coupling == Coupling::geodesic) {
            const auto geo = cost_geodesic(q0, q1, cfg.geodesic_knn, cfg.geodesic_t_heat);
            geodesic_cost_ = geo.cost.values;
        }
    }

    std::pair<Matrix, Matrix> draw(Index m, Rng& rng) const {
        std::vector<Index> i0(static_cast<std::size_t>(m)), i1(static_cast<std::size_t>(m));
        for (Index r = 0; r < m; ++r) {
            i0[static_cast<std::size_t>(r)] = samp0_.draw(rng);
            i1[static_cast<std::size_t>(r)] = samp1_.draw(rng);
        }
        Matrix x0 = gather_rows(q0_.points(), i0);
        Matrix x1 = gather_rows(q1_.points(), i1);
        if (cfg_.coupling == Coupling::independent) return {std::move(x0), std::move(x1)};

        Matrix cost;
        if (cfg_.coupling == Coupling::geodesic) {
            cost.resize(m, m);
            for (Index r = 0; r < m; ++r)
                for (Index c = 0; c < m; ++c) {
                    const double g = geodesic_cost_(i0[static_cast<std::size_t>(r)], i1[static_cast<std::size_t>(c)]);
                    cost(r, c) = g * g;
                }
        } else {
            const Vector n0 = x0.rowwise().squaredNorm();
            const Vector n1 = x1.rowwise().squaredNorm();
            cost = (-2.0 * x0 * x1.transpose());
            cost.colwise() += n0;
            cost.rowwise() += n1.transpose();
            cost = cost.cwiseMax(0.0);
        }

        const bool entropic = cfg_.coupling == Coupling::sinkhorn ||
                              (cfg_.coupling == Coupling::geodesic && cfg_.sigma > 0.0);
        if (entropic) {
            const double eps = cfg_.sinkhorn_epsilon.value_or(2.0 * cfg_.sigma * cfg_.sigma);
            const Vector w = Vector::Constant(m, 1.0 / static_cast<double>(m));
            const CouplingPlan plan =
                solve_sinkhorn(CostMatrix{std::move(cost), CostKind::sq_euclidean}, w, w,
                               SinkhornOptions{eps > 0 ? eps : 1e-8, 1000, 1e-9, 10});
            const auto pairs = sample_pairs(plan, m, rng);
            Matrix y0(m, x0.cols()), y1(m, x1.cols());
            for (Index r = 0; r < m; ++r) {
                y0.row(r) = x0.row(pairs[static_cast<std::size_t>(r)].first);
                y1.row(r) = x1.row(pairs[static_cast<std::size_t>(r)].second);
            }
            return {std::move(y0), std::move(y1)};
        }

        // exact coupling: the optimal minibatch plan is a permutation; read its
        // support directly instead of categorical resampling
        RowMajorMatrix c = cost;
        const auto asg = assignment_jv(c);
        Matrix y1(m, x1.cols());
        for (Index r = 0; r < m; ++r) y1.row(r) = x1.row(asg.row_to_col[static_cast<std::size_t>(r)]);
        return {std::move(x0), std::move(y1)};
    }

private:
    const PointCloud& q0_;
    const PointCloud& q1_;
    const TrainConfig& cfg_;
    CloudSampler samp0_, samp1_;
    Matrix geodesic_cost_;
};

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

template <class ModelT>
struct Optim;

template <>
struct Optim<MlpModelPair> {
    AdamW flow;
    std::optional<AdamW> score;

    Optim(MlpModelPair& m, const TrainConfig& cfg)
        : flow(m.flow_net().param_count(), AdamWConfig{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8}) {
        if (m.has_score())
            score.emplace(m.score_net().param_count(), AdamWConfig{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8});
    }

    void apply(MlpModelPair& m, const Vector& fg, const Vector& sg) {
        flow.step(m.flow_net().params(), fg,
                  [&](Index i) { return "flow " + m.flow_net().describe_param(i); });
        if (m.has_score() && sg.size() > 0)
            score->step(m.score_net().params(), sg,
                        [&](Index i) { return "score " + m.score_net().describe_param(i); });
    }
};

template <>
struct Optim<NgmModelPair> {
    AdamW opt;

    Optim(NgmModelPair& m, const TrainConfig& cfg)
        : opt(m.net().param_count(), AdamWConfig{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8}) {}

    void apply(NgmModelPair& m, const Vector& g, const Vector&) {
        opt.step(m.net().params(), g, [&](Index i) { return m.net().describe_param(i); });
    }
};

template <class ModelT, class BatchFn>
std::vector<LossReport> run_steps(ModelT& model, const TrainConfig& cfg, long steps, long step_offset,
                                  Optim<ModelT>& optim, const Stopwatch& clock, BatchFn&& make_batch,
                                  std::vector<StepLosses>* trace = nullptr) {
    std::vector<LossReport> reports;
    const BridgeSpec spec = cfg.bridge_spec();
    Vector flow_grad, score_grad;
    for (long s = 0; s < steps; ++s) {
        const long global_step = step_offset + s;
        Rng rng = Rng(cfg.seed).fork(0x57e9'0000ULL + static_cast<std::uint64_t>(global_step));
        auto [pairs, net_time] = make_batch(global_step, rng);
        BridgeBatch batch =
            sample_bridge_batch(spec, pairs.first, pairs.second, cfg.parametrization, rng, cfg.t_clip);
        const Vector* tnet = nullptr;
        Vector shifted;
        if (net_time.size() > 0) {
            shifted = batch.t + net_time;
            tnet = &shifted;
        }
        const StepLosses losses = loss_step(model, batch, cfg, &flow_grad, &score_grad, tnet);
        optim.apply(model, flow_grad, score_grad);
        if (trace) trace->push_back(losses);
        if (global_step % cfg.log_every == 0 || s + 1 == steps) {
            reports.push_back(LossReport{global_step, losses.flow_loss, losses.score_loss,
                                         losses.flow_loss + losses.score_loss, clock.seconds()});
        }
    }
    return reports;
}

} // namespace detail

template <class ModelT>
struct TrainResult {
    ModelT model;
    std::vector<LossReport> reports;
    std::vector<OuterLoopDiag> loop_diags;
};

/// Pairwise training between two empirical distributions (minibatch couplings
/// drawn fresh every step; independent mode skips the OT solve).
inline TrainResult<MlpModelPair> train_pair(const PointCloud& q0, const PointCloud& q1,
                                            const TrainConfig& cfg) {
    cfg.validate();
    if (q0.dim() != q1.dim()) throw ConfigError("train_pair: dimension mismatch");
    MlpModelPair model(q0.dim(), cfg.sigma, cfg.parametrization, cfg.score_head, 1.0, cfg.width);
    Rng init_rng = Rng(cfg.seed).fork(0x1417);
    model.init(init_rng);

    detail::Optim<MlpModelPair> optim(model, cfg);
    detail::PairSampler sampler(q0, q1, cfg);
    detail::Stopwatch clock;
    auto reports = detail::run_steps(model, cfg, cfg.steps, 0, optim, clock,
                                     [&](long, Rng& rng) {
                                         return std::make_pair(sampler.draw(cfg.batch_size, rng), Vector());
                                     });
    return TrainResult<MlpModelPair>{std::move(model), std::move(reports), {}};
}

namespace detail {

// Trajectory training core: per step, solve one minibatch coupling per
// segment, then spread the batch across segments (one segment draw per
// example) and condition the networks on global time local_t + segment.
template <class ModelT>
std::vector<LossReport> run_trajectory_steps(ModelT& model, const TimepointSeries& series,
                                             const TrainConfig& cfg, Optim<ModelT>& optim) {
    const std::size_t segments = series.count() - 1;
    std::vector<std::unique_ptr<PairSampler>> samplers;
    samplers.reserve(segments);
    for (std::size_t k = 0; k < segments; ++k)
        samplers.push_back(std::make_unique<PairSampler>(series.snapshots[k], series.snapshots[k + 1], cfg));

    Stopwatch clock;
    return run_steps(model, cfg, cfg.steps, 0, optim, clock, [&](long, Rng& rng) {
        // K = 2 degenerates to pairwise training; keep the draw sequence
        // identical to train_pair so the two paths agree bit-for-bit
        if (segments == 1)
            return std::make_pair(samplers[0]->draw(cfg.batch_size, rng), Vector());
        std::vector<std::pair<Matrix, Matrix>> segment_pairs;
        segment_pairs.reserve(segments);
        for (std::size_t k = 0; k < segments; ++k)
            segment_pairs.push_back(samplers[k]->draw(cfg.batch_size, rng));
        Matrix x0(cfg.batch_size, series.dim()), x1(cfg.batch_size, series.dim());
        Vector offsets(cfg.batch_size);
        for (Index i = 0; i < cfg.batch_size; ++i) {
            const auto k = rng.uniform_int(segments);
            x0.row(i) = segment_pairs[k].first.row(i);
            x1.row(i) = segment_pairs[k].second.row(i);
            offsets(i) = static_cast<double>(k);
        }
        return std::make_pair(std::make_pair(std::move(x0), std::move(x1)), std::move(offsets));
    });
}

} // namespace detail

/// Multi-marginal training: one shared model across all segments, conditioned
/// on global time in [0, K-1]; each segment is a unit-time bridge.
inline TrainResult<MlpModelPair> train_trajectory(const TimepointSeries& series, const TrainConfig& cfg) {
    cfg.validate();
    MlpModelPair model(series.dim(), cfg.sigma, cfg.parametrization, cfg.score_head,
                       static_cast<double>(series.count() - 1), cfg.width);
    Rng init_rng = Rng(cfg.seed).fork(0x1417);
    model.init(init_rng);
    detail::Optim<MlpModelPair> optim(model, cfg);
    auto reports = detail::run_trajectory_steps(model, series, cfg, optim);
    return TrainResult<MlpModelPair>{std::move(model), std::move(reports), {}};
}

/// Trajectory training with the structured (network-readout) drift.
inline TrainResult<NgmModelPair> train_trajectory_ngm(const TimepointSeries& series, const TrainConfig& cfg) {
    cfg.validate();
    NgmModelPair model(series.dim(), cfg.sigma, cfg.parametrization, cfg.score_head,
                       static_cast<double>(series.count() - 1));
    Rng init_rng = Rng(cfg.seed).fork(0x1417);
    model.init(init_rng);
    detail::Optim<NgmModelPair> optim(model, cfg);
    auto reports = detail::run_trajectory_steps(model, series, cfg, optim);
    return TrainResult<NgmModelPair>{std::move(model), std::move(reports), {}};
}

// Looped variant: after each block of inner steps, resimulate cache_size/2
// forward trajectories from q0 and cache_size/2 backward trajectories from q1;
// later blocks draw endpoint pairs from that cache instead of solving OT.
inline TrainResult<MlpModelPair> train_looped(const PointCloud& q0, const PointCloud& q1,
                                              const TrainConfig& cfg) {
    cfg.validate();
    if (!cfg.loop) throw ConfigError("train_looped: loop config missing");
    const LoopConfig& loop = *cfg.loop;

    MlpModelPair model(q0.dim(), cfg.sigma, cfg.parametrization, cfg.score_head, 1.0, cfg.width);
    Rng init_rng = Rng(cfg.seed).fork(0x1417);
    model.init(init_rng);
    detail::Optim<MlpModelPair> optim(model, cfg);
    detail::PairSampler ot_sampler(q0, q1, cfg);
    detail::Stopwatch clock;

    const Vector q0_mean = q0.points().colwise().mean();
    const Vector q1_mean = q1.points().colwise().mean();

    TrainResult<MlpModelPair> result{std::move(model), {}, {}};
    Matrix cache_x0, cache_x1;
    bool have_cache = false;

    for (int l = 0; l < loop.outer_loops; ++l) {
        std::vector<StepLosses> trace;
        auto make_batch = [&](long, Rng& rng) {
            if (!have_cache) return std::make_pair(ot_sampler.draw(cfg.batch_size, rng), Vector());
            Matrix x0(cfg.batch_size, q0.dim()), x1(cfg.batch_size, q1.dim());
            for (Index i = 0; i < cfg.batch_size; ++i) {
                const Index r = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(cache_x0.rows())));
                x0.row(i) = cache_x0.row(r);
                x1.row(i) = cache_x1.row(r);
            }
            return std::make_pair(std::make_pair(std::move(x0), std::move(x1)), Vector());
        };
        auto reports = detail::run_steps(result.model, cfg, loop.inner_steps,
                                         static_cast<long>(l) * loop.inner_steps, optim, clock, make_batch,
                                         &trace);
        result.reports.insert(result.reports.end(), reports.begin(), reports.end());

        // resimulate the endpoint cache: half forward from q0, half backward from q1
        Rng sim_rng = Rng(cfg.seed).fork(0x100f'0000ULL + static_cast<std::uint64_t>(l));
        const Index half = loop.cache_size / 2;
        auto draw_points = [&](const PointCloud& cloud, Index count, Rng& rng) {
            if (count <= cloud.size()) return detail::gather_rows(cloud.points(),
                                                                  rng.sample_without_replacement(cloud.size(), count));
            std::vector<Index> idx(static_cast<std::size_t>(count));
            for (Index i = 0; i < count; ++i)
                idx[static_cast<std::size_t>(i)] = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(cloud.size())));
            return detail::gather_rows(cloud.points(), idx);
        };
        const Matrix fwd_start = draw_points(q0, half, sim_rng);
        const Matrix bwd_start = draw_points(q1, loop.cache_size - half, sim_rng);
        const double g = cfg.sigma;
        const Matrix fwd_end =
            simulate_sde(result.model, fwd_start, g, loop.sim_steps, sim_rng.fork(1)).terminal();
        const Matrix bwd_end =
            simulate_backward(result.model, bwd_start, g, loop.sim_steps, sim_rng.fork(2)).terminal();

        cache_x0.resize(loop.cache_size, q0.dim());
        cache_x1.resize(loop.cache_size, q1.dim());
        cache_x0.topRows(half) = fwd_start;
        cache_x1.topRows(half) = fwd_end;
        cache_x0.bottomRows(loop.cache_size - half) = bwd_end;
        cache_x1.bottomRows(loop.cache_size - half) = bwd_start;
        have_cache = true;

        OuterLoopDiag diag;
        diag.outer = l;
        for (const auto& sl : trace) {
            diag.mean_flow_loss += sl.flow_loss;
            diag.mean_score_loss += sl.score_loss;
        }
        diag.mean_flow_loss /= static_cast<double>(trace.size());
        diag.mean_score_loss /= static_cast<double>(trace.size());
        diag.cache_source_mean_err = (cache_x0.colwise().mean().transpose() - q0_mean).norm();
        diag.cache_target_mean_err = (cache_x1.colwise().mean().transpose() - q1_mean).norm();
        result.loop_diags.push_back(diag);
    }
    return result;
}

} // namespace sf2m
