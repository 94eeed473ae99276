#pragma once

#include "sf2m/core.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sf2m {

/// A weighted finite set of d-dimensional samples (an empirical distribution).
/// Rows of points() are samples; weights are nonnegative and sum to 1.
class PointCloud {
public:
    PointCloud(Matrix points, Vector weights, std::string label = {})
        : points_(std::move(points)), weights_(std::move(weights)), label_(std::move(label)) {
        if (points_.rows() == 0) throw ConfigError("PointCloud: needs at least one point");
        if (weights_.size() != points_.rows())
            throw ConfigError("PointCloud: weight count does not match point count");
        if ((weights_.array() < 0.0).any())
            throw ConfigError("PointCloud: negative weight");
        const double total = weights_.sum();
        if (std::abs(total - 1.0) > 1e-12)
            throw ConfigError("PointCloud: weights sum to " + std::to_string(total) + ", expected 1");
    }

    static PointCloud uniform(Matrix points, std::string label = {}) {
        const Index n = points.rows();
        if (n == 0) throw ConfigError("PointCloud: needs at least one point");
        return PointCloud(std::move(points), Vector::Constant(n, 1.0 / static_cast<double>(n)),
                          std::move(label));
    }

    Index size() const { return points_.rows(); }
    Index dim() const { return points_.cols(); }
    const Matrix& points() const { return points_; }
    const Vector& weights() const { return weights_; }
    const std::string& label() const { return label_; }

    bool uniform_weights(double tol = 1e-12) const {
        return (weights_.array() - 1.0 / static_cast<double>(size())).abs().maxCoeff() <= tol;
    }

    /// Deterministic head-subsample (rows are i.i.d. draws, so a prefix is unbiased).
    PointCloud head(Index k) const {
        if (k >= size()) return *this;
        Matrix pts = points_.topRows(k);
        Vector w = weights_.head(k);
        w /= w.sum();
        return PointCloud(std::move(pts), std::move(w), label_);
    }

private:
    Matrix points_;
    Vector weights_;
    std::string label_;
};

/// Ordered snapshots of a population at strictly increasing times.
struct TimepointSeries {
    std::vector<PointCloud> snapshots;
    std::vector<double> times;

    TimepointSeries(std::vector<PointCloud> snaps, std::vector<double> t = {})
        : snapshots(std::move(snaps)), times(std::move(t)) {
        if (snapshots.size() < 2) throw ConfigError("TimepointSeries: needs at least 2 snapshots");
        if (times.empty()) {
            times.resize(snapshots.size());
            for (std::size_t k = 0; k < times.size(); ++k) times[k] = static_cast<double>(k);
        }
        if (times.size() != snapshots.size())
            throw ConfigError("TimepointSeries: time labels do not match snapshot count");
        for (std::size_t k = 1; k < times.size(); ++k)
            if (times[k] <= times[k - 1]) throw ConfigError("TimepointSeries: times must be strictly increasing");
        const Index d = snapshots.front().dim();
        for (const auto& s : snapshots)
            if (s.dim() != d) throw ConfigError("TimepointSeries: snapshots must share dimension");
    }

    Index dim() const { return snapshots.front().dim(); }
    std::size_t count() const { return snapshots.size(); }
};

/// Per-dimension affine map to mean 0, variance 1, with exact inverse.
class Whitener {
public:
    static Whitener fit(const PointCloud& cloud) {
        const Matrix& x = cloud.points();
        Whitener w;
        w.mean_ = x.colwise().mean();
        Vector var = ((x.rowwise() - w.mean_.transpose()).array().square().colwise().sum() /
                      static_cast<double>(x.rows()))
                         .transpose();
        w.scale_ = var.array().sqrt().max(1e-300).matrix();
        return w;
    }

    Matrix apply(const Matrix& x) const {
        return ((x.rowwise() - mean_.transpose()).array().rowwise() / scale_.transpose().array()).matrix();
    }

    Matrix invert(const Matrix& z) const {
        return ((z.array().rowwise() * scale_.transpose().array()).matrix().rowwise() + mean_.transpose());
    }

    PointCloud apply(const PointCloud& c) const { return PointCloud(apply(c.points()), c.weights(), c.label()); }
    PointCloud invert(const PointCloud& c) const { return PointCloud(invert(c.points()), c.weights(), c.label()); }

    const Vector& mean() const { return mean_; }
    const Vector& scale() const { return scale_; }

private:
    Vector mean_;
    Vector scale_;
};

} // namespace sf2m
