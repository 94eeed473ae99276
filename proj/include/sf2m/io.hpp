#pragma once

#include "sf2m/core.hpp"
#include "sf2m/net.hpp"
#include "sf2m/ot.hpp"
#include "sf2m/point_cloud.hpp"
#include "sf2m/sim.hpp"

#include <json.hpp>

#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace sf2m {

using Json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& token, std::size_t row) {
    double value = 0.0;
    const char* begin = token.data();
    const char* end = begin + token.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end)
        throw ParseError("CSV row " + std::to_string(row) + ": non-numeric cell '" + token + "'");
    if (std::isnan(value)) throw ParseError("CSV row " + std::to_string(row) + ": NaN cell");
    return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string token;
    std::stringstream ss(line);
    while (std::getline(ss, token, ',')) out.push_back(token);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

} // namespace detail

// --- Point clouds ------------------------------------------------------------
//
// Header x0,...,x{d-1}; an optional trailing w column carries non-uniform
// weights. A JSON metadata sidecar <path>.meta.json records dim/n/label.

inline void save_csv(const PointCloud& cloud, const std::string& path, const Json& extra_meta = {}) {
    std::ofstream out(path);
    if (!out) throw ParseError("save_csv: cannot open " + path);
    const bool with_weights = !cloud.uniform_weights();
    for (Index j = 0; j < cloud.dim(); ++j) out << (j ? "," : "") << "x" << j;
    if (with_weights) out << ",w";
    out << "\n";
    for (Index i = 0; i < cloud.size(); ++i) {
        for (Index j = 0; j < cloud.dim(); ++j)
            out << (j ? "," : "") << detail::format_double(cloud.points()(i, j));
        if (with_weights) out << "," << detail::format_double(cloud.weights()(i));
        out << "\n";
    }
    Json meta{{"dim", cloud.dim()}, {"n", cloud.size()}, {"label", cloud.label()}};
    if (extra_meta.is_object())
        for (const auto& [k, v] : extra_meta.items()) meta[k] = v;
    std::ofstream meta_out(path + ".meta.json");
    meta_out << meta.dump(2) << "\n";
}

inline PointCloud load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("load_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.empty()) throw ParseError("load_csv: empty file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv_line(line);
    Index dim = 0;
    bool with_weights = false;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "x" + std::to_string(c)) {
            ++dim;
        } else if (header[c] == "w" && c + 1 == header.size()) {
            with_weights = true;
        } else if ((header[c] == "t" || header[c] == "path_id")) {
            throw ParseError("load_csv: " + path + " is a trajectory file; load the terminal slice instead");
        } else {
            throw ParseError("load_csv: unexpected header column '" + header[c] + "'");
        }
    }
    if (dim == 0) throw ParseError("load_csv: no coordinate columns in " + path);

    std::vector<double> values;
    std::vector<double> weights;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const auto cells = detail::split_csv_line(line);
        if (static_cast<Index>(cells.size()) != dim + (with_weights ? 1 : 0))
            throw ParseError("CSV row " + std::to_string(row) + ": expected " +
                             std::to_string(dim + (with_weights ? 1 : 0)) + " cells, got " +
                             std::to_string(cells.size()));
        for (Index j = 0; j < dim; ++j)
            values.push_back(detail::parse_double(cells[static_cast<std::size_t>(j)], row));
        if (with_weights) weights.push_back(detail::parse_double(cells.back(), row));
    }
    if (row == 0) throw ParseError("load_csv: no data rows in " + path);
    Matrix pts(static_cast<Index>(row), dim);
    for (Index i = 0; i < pts.rows(); ++i)
        for (Index j = 0; j < dim; ++j) pts(i, j) = values[static_cast<std::size_t>(i * dim + j)];
    if (with_weights) {
        Vector w = Eigen::Map<Vector>(weights.data(), static_cast<Index>(weights.size()));
        return PointCloud(std::move(pts), std::move(w));
    }
    return PointCloud::uniform(std::move(pts));
}

// --- Trajectories: x0,...,x{d-1},t,path_id -----------------------------------

inline void save_csv(const TrajectoryEnsemble& traj, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("save_csv: cannot open " + path);
    const Index d = traj.dim();
    for (Index j = 0; j < d; ++j) out << (j ? "," : "") << "x" << j;
    out << ",t,path_id\n";
    for (Index p = 0; p < traj.paths(); ++p) {
        for (std::size_t f = 0; f < traj.frames.size(); ++f) {
            for (Index j = 0; j < d; ++j)
                out << (j ? "," : "") << detail::format_double(traj.frames[f](p, j));
            out << "," << detail::format_double(traj.times(static_cast<Index>(f))) << "," << p << "\n";
        }
    }
}

// --- Coupling plans -----------------------------------------------------------

inline void save_plan_csv(const CouplingPlan& plan, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("save_plan_csv: cannot open " + path);
    for (Index i = 0; i < plan.matrix.rows(); ++i) {
        for (Index j = 0; j < plan.matrix.cols(); ++j)
            out << (j ? "," : "") << detail::format_double(plan.matrix(i, j));
        out << "\n";
    }
}

inline void save_plan_sparse(const CouplingPlan& plan, const std::string& path, double threshold = 0.0) {
    std::ofstream out(path);
    if (!out) throw ParseError("save_plan_sparse: cannot open " + path);
    out << "i,j,mass\n";
    for (Index i = 0; i < plan.matrix.rows(); ++i)
        for (Index j = 0; j < plan.matrix.cols(); ++j)
            if (plan.matrix(i, j) > threshold)
                out << i << "," << j << "," << detail::format_double(plan.matrix(i, j)) << "\n";
}

inline Json plan_diagnostics_json(const CouplingPlan& plan) {
    return Json{{"iterations", plan.iterations},
                {"marginal_error", plan.marginal_error},
                {"converged", plan.converged},
                {"epsilon", plan.epsilon},
                {"cost", plan.cost}};
}

// --- Checkpoints ---------------------------------------------------------------
//
// One JSON header line followed by the raw little-endian float64 parameter
// vector (flow parameters, then score parameters for MLP pairs).

using ModelAny = std::variant<MlpModelPair, NgmModelPair>;

namespace detail {

inline void write_params(std::ofstream& out, const Vector& params) {
    out.write(reinterpret_cast<const char*>(params.data()),
              static_cast<std::streamsize>(params.size() * sizeof(double)));
}

inline Vector read_params(std::ifstream& in, Index count) {
    Vector params(count);
    in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw ParseError("checkpoint: truncated parameter block");
    return params;
}

} // namespace detail

inline void save_checkpoint(const ModelAny& model, const std::string& path, std::uint64_t seed = 0,
                            long step = 0) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("save_checkpoint: cannot open " + path);
    Json header;
    header["format"] = "sf2m-ckpt-1";
    header["seed"] = seed;
    header["step"] = step;
    if (const auto* mlp = std::get_if<MlpModelPair>(&model)) {
        header["kind"] = "mlp_pair";
        header["dim"] = mlp->dim();
        header["hidden"] = mlp->flow_net().shape().hidden;
        header["has_score"] = mlp->has_score();
        header["sigma"] = mlp->sigma();
        header["parametrization"] =
            mlp->parametrization() == Parametrization::scaled_score ? "scaled_score" : "raw_score";
        header["time_span"] = mlp->time_span();
        out << header.dump() << "\n";
        detail::write_params(out, mlp->flow_net().params());
        if (mlp->has_score()) detail::write_params(out, mlp->score_net().params());
    } else {
        const auto& ngm = std::get<NgmModelPair>(model);
        header["kind"] = "ngm_pair";
        header["genes"] = ngm.dim();
        header["hidden"] = ngm.net().shape().hidden;
        header["has_score"] = ngm.has_score();
        header["sigma"] = ngm.sigma();
        header["parametrization"] =
            ngm.parametrization() == Parametrization::scaled_score ? "scaled_score" : "raw_score";
        header["time_span"] = ngm.time_span();
        out << header.dump() << "\n";
        detail::write_params(out, ngm.net().params());
    }
}

inline ModelAny load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("load_checkpoint: cannot open " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw ParseError("load_checkpoint: missing header");
    Json header;
    try {
        header = Json::parse(header_line);
    } catch (const Json::parse_error& e) {
        throw ParseError(std::string("load_checkpoint: bad header: ") + e.what());
    }
    if (header.value("format", "") != "sf2m-ckpt-1")
        throw ParseError("load_checkpoint: unknown format");
    const auto param = header.value("parametrization", "scaled_score") == std::string("raw_score")
                           ? Parametrization::raw_score
                           : Parametrization::scaled_score;
    const std::string kind = header.value("kind", "");
    if (kind == "mlp_pair") {
        const Index dim = header.at("dim").get<Index>();
        const auto hidden = header.at("hidden").get<std::vector<Index>>();
        MlpModelPair model(dim, header.at("sigma").get<double>(), param, header.at("has_score").get<bool>(),
                           header.at("time_span").get<double>(), hidden.empty() ? 0 : hidden.front());
        model.flow_net().params() = detail::read_params(in, model.flow_net().param_count());
        if (model.has_score())
            model.score_net().params() = detail::read_params(in, model.score_net().param_count());
        return model;
    }
    if (kind == "ngm_pair") {
        NgmModelPair model(header.at("genes").get<Index>(), header.at("sigma").get<double>(), param,
                           header.at("has_score").get<bool>(), header.at("time_span").get<double>(),
                           header.at("hidden").get<Index>());
        model.net().params() = detail::read_params(in, model.net().param_count());
        return model;
    }
    throw ParseError("load_checkpoint: unknown model kind '" + kind + "'");
}

// Evaluation adapters so a loaded checkpoint plugs into the templated
// integrators without visiting at every call site.
struct AnyModel {
    ModelAny model;

    double time_span() const {
        return std::visit([](const auto& m) { return m.time_span(); }, model);
    }
    bool has_score() const {
        return std::visit([](const auto& m) { return m.has_score(); }, model);
    }
    double sigma() const {
        return std::visit([](const auto& m) { return m.sigma(); }, model);
    }
    Matrix eval_flow(const Vector& t, const Matrix& x) const {
        return std::visit([&](const auto& m) { return m.eval_flow(t, x); }, model);
    }
    Matrix eval_score(const Vector& t, const Matrix& x) const {
        return std::visit([&](const auto& m) { return m.eval_score(t, x); }, model);
    }
};

} // namespace sf2m
