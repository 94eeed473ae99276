#pragma once

#include "sf2m/bridge.hpp"
#include "sf2m/core.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sf2m {

constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
constexpr double kSeluScale = 1.0507009873554804934193349852946;

inline double selu(double x) {
    return x > 0.0 ? kSeluScale * x : kSeluScale * kSeluAlpha * (std::exp(x) - 1.0);
}

inline double selu_grad(double x) {
    return x > 0.0 ? kSeluScale : kSeluScale * kSeluAlpha * std::exp(x);
}

struct MlpShape {
    Index input = 0;
    Index output = 0;
    std::vector<Index> hidden{64, 64, 64};

    Index param_count() const {
        Index total = 0, in = input;
        for (const Index h : hidden) {
            total += (in + 1) * h;
            in = h;
        }
        return total + (in + 1) * output;
    }

    std::vector<Index> widths() const {
        std::vector<Index> w{input};
        w.insert(w.end(), hidden.begin(), hidden.end());
        w.push_back(output);
        return w;
    }
};

// Fully connected SELU network, linear output layer. Parameters live in one
// flat vector (per layer: W as out x in column-major, then bias), which keeps
// the optimizer, checkpointing, and finite-difference probes trivial.
class Mlp {
public:
    explicit Mlp(MlpShape shape) : shape_(std::move(shape)) {
        if (shape_.input < 1 || shape_.output < 1) throw ConfigError("Mlp: input/output must be positive");
        params_ = Vector::Zero(shape_.param_count());
        offsets_.clear();
        Index off = 0, in = shape_.input;
        auto layers = shape_.hidden;
        layers.push_back(shape_.output);
        for (const Index out : layers) {
            offsets_.push_back({off, out, in});
            off += (in + 1) * out;
            in = out;
        }
    }

    const MlpShape& shape() const { return shape_; }
    Index param_count() const { return params_.size(); }
    const Vector& params() const { return params_; }
    Vector& params() { return params_; }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    void init(Rng& rng) {
        for (std::size_t l = 0; l < offsets_.size(); ++l) {
            const auto [off, out, in] = offsets_[l];
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            for (Index k = 0; k < (in + 1) * out; ++k) params_(off + k) = rng.uniform(-bound, bound);
        }
    }

    /// Pure evaluation, no caches; safe to call concurrently on a frozen net.
    Matrix apply(const Matrix& x) const {
        check_input(x);
        Matrix a = x;
        for (std::size_t l = 0; l < offsets_.size(); ++l) {
            a = affine(l, a);
            if (l + 1 < offsets_.size()) a = a.unaryExpr([](double z) { return selu(z); });
        }
        return a;
    }

    /// Evaluation that caches activations for a subsequent backward().
    Matrix forward(const Matrix& x) {
        check_input(x);
        acts_.assign(1, x);
        preacts_.clear();
        Matrix a = x;
        for (std::size_t l = 0; l < offsets_.size(); ++l) {
            Matrix z = affine(l, a);
            preacts_.push_back(z);
            if (l + 1 < offsets_.size())
                a = z.unaryExpr([](double v) { return selu(v); });
            else
                a = z;
            acts_.push_back(a);
        }
        cached_rows_ = x.rows();
        return a;
    }

    /// Reverse-mode gradient of sum_i <upstream_i, f(x_i)> w.r.t. parameters.
    Vector backward(const Matrix& upstream) const {
        if (cached_rows_ < 0 || upstream.rows() != cached_rows_)
            throw NumericError("Mlp::backward: stale or missing forward cache");
        if (upstream.cols() != shape_.output) throw ConfigError("Mlp::backward: upstream width mismatch");
        Vector grad = Vector::Zero(params_.size());
        Matrix gz = upstream;
        for (std::size_t l = offsets_.size(); l-- > 0;) {
            if (l + 1 < offsets_.size())
                gz = gz.cwiseProduct(preacts_[l].unaryExpr([](double z) { return selu_grad(z); }));
            const auto [off, out, in] = offsets_[l];
            Eigen::Map<Matrix> gw(grad.data() + off, out, in);
            Eigen::Map<Vector> gb(grad.data() + off + in * out, out);
            gw = gz.transpose() * acts_[l];
            gb = gz.colwise().sum().transpose();
            if (l > 0) {
                Eigen::Map<const Matrix> w(params_.data() + off, out, in);
                gz = (gz * w).eval();
            }
        }
        return grad;
    }

    std::string describe_param(Index idx) const {
        for (std::size_t l = 0; l < offsets_.size(); ++l) {
            const auto [off, out, in] = offsets_[l];
            if (idx < off + (in + 1) * out)
                return "layer " + std::to_string(l) + (idx < off + in * out ? " weights" : " bias");
        }
        return "out of range";
    }

private:
    struct LayerOffset {
        Index offset, out, in;
    };

    void check_input(const Matrix& x) const {
        if (x.cols() != shape_.input)
            throw ConfigError("Mlp: input width " + std::to_string(x.cols()) + ", expected " +
                              std::to_string(shape_.input));
    }

    Matrix affine(std::size_t l, const Matrix& a) const {
        const auto [off, out, in] = offsets_[l];
        Eigen::Map<const Matrix> w(params_.data() + off, out, in);
        Eigen::Map<const Vector> b(params_.data() + off + in * out, out);
        Matrix z = a * w.transpose();
        z.rowwise() += b.transpose();
        return z;
    }

    MlpShape shape_;
    Vector params_;
    std::vector<LayerOffset> offsets_;

    // forward caches
    std::vector<Matrix> acts_;
    std::vector<Matrix> preacts_;
    Index cached_rows_ = -1;
};

// Decoupled-weight-decay Adam over a flat parameter vector.
struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamW {
public:
    AdamW(Index n, AdamWConfig cfg = {}) : cfg_(cfg), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

    long step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }

    void step(Eigen::Ref<Vector> params, const Vector& grads,
              const std::function<std::string(Index)>& name = {}) {
        if (params.size() != m_.size() || grads.size() != m_.size())
            throw ConfigError("AdamW: parameter/moment size mismatch");
        if (!grads.allFinite()) {
            Index bad = 0;
            for (Index i = 0; i < grads.size(); ++i)
                if (!std::isfinite(grads(i))) {
                    bad = i;
                    break;
                }
            throw NumericError("AdamW: non-finite gradient at parameter " + std::to_string(bad) +
                               (name ? " (" + name(bad) + ")" : ""));
        }
        ++step_;
        m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grads;
        v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grads.cwiseProduct(grads);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        const Vector mhat = m_ / bc1;
        const Vector vhat = v_ / bc2;
        params -= cfg_.lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps) +
                             cfg_.weight_decay * params.array())
                      .matrix();
    }

private:
    AdamWConfig cfg_;
    Vector m_;
    Vector v_;
    long step_ = 0;
};

// Structured drift for network-recovery readout: one two-layer SELU block per
// output gene, all sharing the input. The first-layer column norms form a
// continuous adjacency over genes; the optional score head reuses the first
// layer. The drift is autonomous (no time input), so first-layer sensitivity
// speaks only about gene-gene influence.
struct NgmShape {
    Index genes = 0;
    Index hidden = 100;
    bool score_head = true;

    Index per_gene() const { return hidden * genes + hidden + hidden + 1 + (score_head ? hidden + 1 : 0); }
    Index param_count() const { return genes * per_gene(); }
};

class NgmDrift {
public:
    explicit NgmDrift(NgmShape shape) : shape_(shape) {
        if (shape_.genes < 1 || shape_.hidden < 1) throw ConfigError("NgmDrift: invalid shape");
        params_ = Vector::Zero(shape_.param_count());
    }

    const NgmShape& shape() const { return shape_; }
    Index param_count() const { return params_.size(); }
    const Vector& params() const { return params_; }
    Vector& params() { return params_; }

    void init(Rng& rng) {
        const double b1 = 1.0 / std::sqrt(static_cast<double>(shape_.genes));
        const double b2 = 1.0 / std::sqrt(static_cast<double>(shape_.hidden));
        for (Index j = 0; j < shape_.genes; ++j) {
            const Index base = j * shape_.per_gene();
            const Index hw = shape_.hidden * shape_.genes;
            for (Index k = 0; k < hw + shape_.hidden; ++k) params_(base + k) = rng.uniform(-b1, b1);
            for (Index k = hw + shape_.hidden; k < shape_.per_gene(); ++k)
                params_(base + k) = rng.uniform(-b2, b2);
        }
    }

    struct Output {
        Matrix drift;           // batch x genes
        std::optional<Matrix> score; // batch x genes when the head exists
    };

    Output apply(const Matrix& x) const { return run(x, nullptr); }

    Output forward(const Matrix& x) {
        cache_.x = x;
        cache_.pre.assign(static_cast<std::size_t>(shape_.genes), Matrix());
        Output out = run(x, &cache_);
        cache_.rows = x.rows();
        return out;
    }

    /// Gradient of sum <gv, drift> + sum <gs, score>; gs ignored without a head.
    Vector backward(const Matrix& gv, const Matrix& gs = Matrix()) const {
        if (cache_.rows < 0 || gv.rows() != cache_.rows)
            throw NumericError("NgmDrift::backward: stale or missing forward cache");
        const bool with_score = shape_.score_head && gs.size() > 0;
        Vector grad = Vector::Zero(params_.size());
        for (Index j = 0; j < shape_.genes; ++j) {
            const Index base = j * shape_.per_gene();
            const Index hw = shape_.hidden * shape_.genes;
            Eigen::Map<const Matrix> w1(params_.data() + base, shape_.hidden, shape_.genes);
            Eigen::Map<const Vector> w2(params_.data() + base + hw + shape_.hidden, shape_.hidden);
            const Matrix& z = cache_.pre[static_cast<std::size_t>(j)];
            const Matrix h = z.unaryExpr([](double v) { return selu(v); });

            Eigen::Map<Matrix> gw1(grad.data() + base, shape_.hidden, shape_.genes);
            Eigen::Map<Vector> gb1(grad.data() + base + hw, shape_.hidden);
            Eigen::Map<Vector> gw2(grad.data() + base + hw + shape_.hidden, shape_.hidden);
            double& gc2 = grad(base + hw + shape_.hidden + shape_.hidden);

            gw2 = h.transpose() * gv.col(j);
            gc2 = gv.col(j).sum();
            Matrix gh = gv.col(j) * w2.transpose();
            if (with_score) {
                Eigen::Map<const Vector> ws(params_.data() + base + hw + 2 * shape_.hidden + 1, shape_.hidden);
                Eigen::Map<Vector> gws(grad.data() + base + hw + 2 * shape_.hidden + 1, shape_.hidden);
                double& gcs = grad(base + hw + 3 * shape_.hidden + 1);
                gws = h.transpose() * gs.col(j);
                gcs = gs.col(j).sum();
                gh += gs.col(j) * ws.transpose();
            }
            const Matrix gz = gh.cwiseProduct(z.unaryExpr([](double v) { return selu_grad(v); }));
            gw1 = gz.transpose() * cache_.x;
            gb1 = gz.colwise().sum().transpose();
        }
        return grad;
    }

    /// score(i -> j) = L2 norm of the first-layer weights carrying x_i into
    /// gene j's block; self loops on the diagonal are masked to zero.
    Matrix edge_scores() const {
        Matrix scores(shape_.genes, shape_.genes);
        for (Index j = 0; j < shape_.genes; ++j) {
            Eigen::Map<const Matrix> w1(params_.data() + j * shape_.per_gene(), shape_.hidden, shape_.genes);
            for (Index i = 0; i < shape_.genes; ++i) scores(i, j) = w1.col(i).norm();
        }
        scores.diagonal().setZero();
        return scores;
    }

    double l1_penalty(double lambda1) const {
        double total = 0.0;
        for (Index j = 0; j < shape_.genes; ++j) {
            Eigen::Map<const Matrix> w1(params_.data() + j * shape_.per_gene(), shape_.hidden, shape_.genes);
            total += w1.cwiseAbs().sum();
        }
        return lambda1 * total;
    }

    /// Subgradient lambda1 * sign(theta1), sign(0) = 0, added in place.
    void add_l1_grad(double lambda1, Vector& grad) const {
        if (lambda1 == 0.0) return;
        for (Index j = 0; j < shape_.genes; ++j) {
            const Index base = j * shape_.per_gene();
            const Index hw = shape_.hidden * shape_.genes;
            for (Index k = 0; k < hw; ++k) {
                const double w = params_(base + k);
                grad(base + k) += w > 0.0 ? lambda1 : (w < 0.0 ? -lambda1 : 0.0);
            }
        }
    }

    std::string describe_param(Index idx) const {
        const Index j = idx / shape_.per_gene();
        const Index rem = idx % shape_.per_gene();
        const Index hw = shape_.hidden * shape_.genes;
        std::string part = rem < hw                        ? "theta1"
                           : rem < hw + shape_.hidden      ? "bias1"
                           : rem < hw + 2 * shape_.hidden + 1 ? "flow head"
                                                              : "score head";
        return "gene " + std::to_string(j) + " " + part;
    }

private:
    struct Cache {
        Matrix x;
        std::vector<Matrix> pre;
        Index rows = -1;
    };

    Output run(const Matrix& x, Cache* cache) const {
        if (x.cols() != shape_.genes) throw ConfigError("NgmDrift: input width must equal gene count");
        Output out;
        out.drift.resize(x.rows(), shape_.genes);
        if (shape_.score_head) out.score = Matrix(x.rows(), shape_.genes);
        for (Index j = 0; j < shape_.genes; ++j) {
            const Index base = j * shape_.per_gene();
            const Index hw = shape_.hidden * shape_.genes;
            Eigen::Map<const Matrix> w1(params_.data() + base, shape_.hidden, shape_.genes);
            Eigen::Map<const Vector> b1(params_.data() + base + hw, shape_.hidden);
            Eigen::Map<const Vector> w2(params_.data() + base + hw + shape_.hidden, shape_.hidden);
            const double c2 = params_(base + hw + shape_.hidden + shape_.hidden);
            Matrix z = x * w1.transpose();
            z.rowwise() += b1.transpose();
            if (cache) cache->pre[static_cast<std::size_t>(j)] = z;
            const Matrix h = z.unaryExpr([](double v) { return selu(v); });
            out.drift.col(j) = h * w2 + Vector::Constant(x.rows(), c2);
            if (shape_.score_head) {
                Eigen::Map<const Vector> ws(params_.data() + base + hw + 2 * shape_.hidden + 1, shape_.hidden);
                const double cs = params_(base + hw + 3 * shape_.hidden + 1);
                out.score->col(j) = h * ws + Vector::Constant(x.rows(), cs);
            }
        }
        return out;
    }

    NgmShape shape_;
    Vector params_;
    mutable Cache cache_;
};

// ---------------------------------------------------------------------------
// Flow/score model pairs: what training produces and simulation consumes.
// eval_score always returns the true score grad log p_t; the scaled
// parametrization stores (sigma^2/2) grad log p in the network and converts on
// the way out.

inline Index default_mlp_width(Index dim) { return dim >= 512 ? 256 : 64; }

class MlpModelPair {
public:
    MlpModelPair(Index dim, double sigma, Parametrization param, bool with_score, double time_span = 1.0,
                 Index width = 0)
        : flow_(make_shape(dim, width)),
          score_(with_score ? std::optional<Mlp>(Mlp(make_shape(dim, width))) : std::nullopt),
          dim_(dim),
          sigma_(sigma),
          param_(param),
          time_span_(time_span) {}

    static MlpShape make_shape(Index dim, Index width) {
        const Index w = width > 0 ? width : default_mlp_width(dim + 1);
        return MlpShape{dim + 1, dim, {w, w, w}};
    }

    void init(Rng& rng) {
        flow_.init(rng);
        if (score_) score_->init(rng);
    }

    Index dim() const { return dim_; }
    double sigma() const { return sigma_; }
    Parametrization parametrization() const { return param_; }
    double time_span() const { return time_span_; }
    void set_time_span(double s) { time_span_ = s; }
    bool has_score() const { return score_.has_value(); }

    Mlp& flow_net() { return flow_; }
    const Mlp& flow_net() const { return flow_; }
    Mlp& score_net() {
        if (!score_) throw ConfigError("MlpModelPair: no score network");
        return *score_;
    }
    const Mlp& score_net() const {
        if (!score_) throw ConfigError("MlpModelPair: no score network");
        return *score_;
    }

    Matrix eval_flow(const Vector& t, const Matrix& x) const { return flow_.apply(with_time(t, x)); }

    Matrix eval_score(const Vector& t, const Matrix& x) const {
        if (!score_) throw ConfigError("MlpModelPair: score requested from a flow-only model");
        Matrix s = score_->apply(with_time(t, x));
        if (param_ == Parametrization::scaled_score) s *= 2.0 / (sigma_ * sigma_);
        return s;
    }

    Matrix with_time(const Vector& t, const Matrix& x) const {
        if (t.size() != x.rows()) throw ConfigError("MlpModelPair: time/sample count mismatch");
        Matrix in(x.rows(), x.cols() + 1);
        in.col(0) = t;
        in.rightCols(x.cols()) = x;
        return in;
    }

private:
    Mlp flow_;
    std::optional<Mlp> score_;
    Index dim_;
    double sigma_;
    Parametrization param_;
    double time_span_;
};

class NgmModelPair {
public:
    NgmModelPair(Index genes, double sigma, Parametrization param, bool with_score, double time_span = 1.0,
                 Index hidden = 100)
        : net_(NgmShape{genes, hidden, with_score}),
          sigma_(sigma),
          param_(param),
          time_span_(time_span) {}

    void init(Rng& rng) { net_.init(rng); }

    Index dim() const { return net_.shape().genes; }
    double sigma() const { return sigma_; }
    Parametrization parametrization() const { return param_; }
    double time_span() const { return time_span_; }
    void set_time_span(double s) { time_span_ = s; }
    bool has_score() const { return net_.shape().score_head; }

    NgmDrift& net() { return net_; }
    const NgmDrift& net() const { return net_; }

    Matrix eval_flow(const Vector&, const Matrix& x) const { return net_.apply(x).drift; }

    Matrix eval_score(const Vector&, const Matrix& x) const {
        if (!has_score()) throw ConfigError("NgmModelPair: score requested from a flow-only model");
        Matrix s = *net_.apply(x).score;
        if (param_ == Parametrization::scaled_score) s *= 2.0 / (sigma_ * sigma_);
        return s;
    }

private:
    NgmDrift net_;
    double sigma_;
    Parametrization param_;
    double time_span_;
};

} // namespace sf2m
