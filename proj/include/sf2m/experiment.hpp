#pragma once

#include "sf2m/datasets.hpp"
#include "sf2m/eval.hpp"
#include "sf2m/io.hpp"
#include "sf2m/toml.hpp"
#include "sf2m/train.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

namespace sf2m {

inline Coupling coupling_from_string(const std::string& s) {
    if (s == "exact") return Coupling::exact;
    if (s == "sinkhorn") return Coupling::sinkhorn;
    if (s == "independent") return Coupling::independent;
    if (s == "geodesic") return Coupling::geodesic;
    throw ConfigError("unknown coupling '" + s + "'");
}

inline Parametrization parametrization_from_string(const std::string& s) {
    if (s == "scaled_score") return Parametrization::scaled_score;
    if (s == "raw_score") return Parametrization::raw_score;
    throw ConfigError("unknown parametrization '" + s + "'");
}

/// [train] table -> TrainConfig. The lambda schedule follows the
/// parametrization (the schedules are defined as matched pairs).
inline TrainConfig parse_train_config(const Json& j) {
    TrainConfig cfg;
    cfg.sigma = j.value("sigma", 1.0);
    cfg.score_head = j.value("score_head", cfg.sigma > 0.0);
    cfg.coupling = coupling_from_string(j.value("coupling", "exact"));
    cfg.batch_size = j.value("batch_size", Index(512));
    cfg.steps = j.value("steps", 10000L);
    cfg.lr = j.value("lr", 1e-3);
    cfg.weight_decay = j.value("weight_decay", 1e-5);
    cfg.parametrization = parametrization_from_string(j.value("parametrization", "scaled_score"));
    cfg.l1_weight = j.value("l1_weight", 0.0);
    cfg.var_floor = j.value("var_floor", 1e-6);
    cfg.t_clip = j.value("t_clip", 1e-5);
    cfg.log_every = j.value("log_every", 100);
    cfg.width = j.value("width", Index(0));
    cfg.geodesic_knn = j.value("geodesic_knn", Index(10));
    cfg.geodesic_t_heat = j.value("geodesic_t_heat", 1.0);
    if (j.contains("sinkhorn_epsilon")) cfg.sinkhorn_epsilon = j.at("sinkhorn_epsilon").get<double>();
    if (j.contains("loop")) {
        const Json& lj = j.at("loop");
        LoopConfig loop;
        loop.outer_loops = lj.value("outer_loops", 20);
        loop.inner_steps = lj.value("inner_steps", std::max<long>(1, cfg.steps / loop.outer_loops));
        loop.cache_size = lj.value("cache_size", Index(10000));
        loop.sim_steps = lj.value("sim_steps", Index(20));
        cfg.loop = loop;
    }
    return cfg;
}

inline ToyParams parse_toy_params(const Json& j) {
    ToyParams p;
    p.scale = j.value("scale", 5.0);
    p.moons_noise = j.value("moons_noise", 0.2);
    p.moons_scale = j.value("moons_scale", 3.0);
    p.moons_shift = j.value("moons_shift", -1.0);
    p.scurve_noise = j.value("scurve_noise", 0.05);
    p.var = j.value("var", 1.0);
    p.dim = j.value("dim", Index(2));
    if (j.contains("mean")) {
        if (j.at("mean").is_array()) {
            const auto vals = j.at("mean").get<std::vector<double>>();
            p.mean = Eigen::Map<const Vector>(vals.data(), static_cast<Index>(vals.size()));
        } else {
            p.mean = Vector::Constant(p.dim, j.at("mean").get<double>());
        }
    }
    return p;
}

struct ExperimentConfig {
    enum class Kind { two_dim, gaussian_sb, trajectory, grn };

    Kind kind = Kind::two_dim;
    std::vector<std::uint64_t> seeds;
    std::string out_dir = "out";
    TrainConfig train;
    Json dataset;
    Json eval;
    bool export_trajectories = false;
    Json raw;

    static Kind kind_from_string(const std::string& s) {
        if (s == "two_dim") return Kind::two_dim;
        if (s == "gaussian_sb") return Kind::gaussian_sb;
        if (s == "trajectory") return Kind::trajectory;
        if (s == "grn") return Kind::grn;
        throw ConfigError("unknown experiment '" + s + "'");
    }

    static ExperimentConfig from_json(const Json& j) {
        ExperimentConfig cfg;
        cfg.raw = j;
        cfg.kind = kind_from_string(j.value("experiment", ""));
        if (!j.contains("seeds") || !j.at("seeds").is_array() || j.at("seeds").empty())
            throw ConfigError("experiment config: nonempty 'seeds' array required");
        for (const auto& s : j.at("seeds")) cfg.seeds.push_back(s.get<std::uint64_t>());
        cfg.out_dir = j.value("out_dir", std::string("out"));
        cfg.train = parse_train_config(j.value("train", Json::object()));
        cfg.dataset = j.value("dataset", Json::object());
        cfg.eval = j.value("eval", Json::object());
        cfg.export_trajectories = j.value("export_trajectories", false);
        return cfg;
    }
};

namespace detail {

inline Index env_thread_cap() {
    if (const char* env = std::getenv("SF2M_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1) return static_cast<Index>(v);
    }
    return static_cast<Index>(std::max(1u, std::thread::hardware_concurrency()));
}

inline void write_loss_csv(const std::vector<LossReport>& reports, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path);
    out << "step,flow_loss,score_loss,total,wallclock\n";
    for (const auto& r : reports)
        out << r.step << "," << format_double(r.flow_loss) << "," << format_double(r.score_loss) << ","
            << format_double(r.total) << "," << format_double(r.wallclock) << "\n";
}

inline void write_loop_diags_csv(const std::vector<OuterLoopDiag>& diags, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path);
    out << "outer,mean_flow_loss,mean_score_loss,cache_source_mean_err,cache_target_mean_err\n";
    for (const auto& d : diags)
        out << d.outer << "," << format_double(d.mean_flow_loss) << "," << format_double(d.mean_score_loss)
            << "," << format_double(d.cache_source_mean_err) << ","
            << format_double(d.cache_target_mean_err) << "\n";
}

inline void write_kl_breakdown_csv(const SbBenchmarkReport& rep, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path);
    out << "t,kl\n";
    for (std::size_t k = 0; k < rep.times.size(); ++k)
        out << format_double(rep.times[k]) << "," << format_double(rep.kl[k]) << "\n";
}

inline PointCloud make_two_dim_cloud(const Json& spec, Index n, std::uint64_t seed) {
    const std::string name = spec.value("name", "gaussian");
    return make_toy(toy_name_from_string(name), n, seed, parse_toy_params(spec.value("params", Json::object())));
}

inline Matrix adjacency_from_json(const Json& dataset, Index genes) {
    Matrix a = Matrix::Zero(genes, genes);
    if (!dataset.contains("adjacency") || dataset.at("adjacency").is_string()) {
        const std::string name =
            dataset.contains("adjacency") ? dataset.at("adjacency").get<std::string>() : "bifurcating7";
        if (name == "bifurcating7") {
            if (genes != 7) throw ConfigError("bifurcating7 adjacency needs genes = 7");
            // driver gene 0 feeds a toggle-switch pair (1, 2) with downstream reporters
            const std::vector<std::tuple<int, int, double>> edges = {
                {0, 1, 1.0}, {0, 2, 1.0}, {1, 1, 0.8},  {2, 2, 0.8},  {1, 2, -1.2},
                {2, 1, -1.2}, {1, 3, 1.0}, {2, 4, 1.0}, {3, 5, 1.0},  {4, 6, 1.0}};
            for (const auto& [i, j, w] : edges) a(i, j) = w;
            return a;
        }
        throw ConfigError("unknown adjacency preset '" + name + "'");
    }
    for (const auto& triple : dataset.at("adjacency")) {
        if (!triple.is_array() || triple.size() != 3)
            throw ConfigError("adjacency entries must be [i, j, weight] triples");
        const Index i = triple[0].get<Index>(), j = triple[1].get<Index>();
        if (i < 0 || i >= genes || j < 0 || j >= genes) throw ConfigError("adjacency index out of range");
        a(i, j) = triple[2].get<double>();
    }
    return a;
}

inline TimepointSeries gaussian_line_series(const Json& dataset, std::uint64_t seed) {
    const Index k_count = dataset.value("snapshots", Index(3));
    const Index dim = dataset.value("dim", Index(1));
    const Index n = dataset.value("n", Index(512));
    const double mean_start = dataset.value("mean_start", -1.0);
    const double mean_step = dataset.value("mean_step", 1.0);
    const double var = dataset.value("var", 1.0);
    std::vector<PointCloud> snaps;
    Rng rng(seed);
    for (Index k = 0; k < k_count; ++k) {
        ToyParams p;
        p.mean = Vector::Constant(dim, mean_start + mean_step * static_cast<double>(k));
        p.var = var;
        snaps.push_back(make_toy(ToyName::gaussian, n, rng.fork(100 + static_cast<std::uint64_t>(k)).seed(), p));
    }
    return TimepointSeries(std::move(snaps));
}

inline TimepointSeries series_from_dataset(const Json& dataset, std::uint64_t seed) {
    const std::string kind = dataset.value("kind", "gaussian_line");
    if (kind == "gaussian_line") return gaussian_line_series(dataset, seed);
    if (kind == "csv") {
        std::vector<PointCloud> snaps;
        for (const auto& path : dataset.at("paths")) snaps.push_back(load_csv(path.get<std::string>()));
        return TimepointSeries(std::move(snaps));
    }
    throw ConfigError("unknown trajectory dataset kind '" + kind + "'");
}

} // namespace detail

struct SeedOutcome {
    std::uint64_t seed = 0;
    std::map<std::string, double> metrics;
};

namespace detail {

inline SeedOutcome run_two_dim_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    const Json& ds = cfg.dataset;
    const Index train_n = ds.value("train_size", Index(10000));
    const Index test_n = ds.value("test_size", Index(10000));
    const Json source = ds.value("source", Json{{"name", "gaussian"}});
    const Json target = ds.value("target", Json{{"name", "8gaussians"}});

    Rng streams(seed);
    const PointCloud q0 = make_two_dim_cloud(source, train_n, streams.fork(1).seed());
    const PointCloud q1 = make_two_dim_cloud(target, train_n, streams.fork(2).seed());
    const PointCloud q0_test = make_two_dim_cloud(source, test_n, streams.fork(3).seed());
    const PointCloud q1_test = make_two_dim_cloud(target, test_n, streams.fork(4).seed());

    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const auto trained = train_pair(q0, q1, tc);

    const Index sim_steps = cfg.eval.value("sim_steps", Index(100));
    const Index w2_points = cfg.eval.value("w2_max_points", Index(5000));
    const double g = cfg.eval.value("g", tc.sigma);
    const PointCloud pushed =
        push_forward(trained.model, q0_test, g, sim_steps, Rng(seed).fork(0xe0a1));

    SeedOutcome out;
    out.seed = seed;
    out.metrics["w2"] = wasserstein(pushed, q1_test, WassersteinOrder::w2, w2_points);
    out.metrics["npe"] = npe(trained.model, q0_test, q1_test, sim_steps, w2_points);

    const std::string tag = "_seed" + std::to_string(seed);
    save_checkpoint(ModelAny(trained.model), cfg.out_dir + "/model" + tag + ".ckpt", seed, tc.steps);
    write_loss_csv(trained.reports, cfg.out_dir + "/loss" + tag + ".csv");
    if (cfg.export_trajectories) {
        const Index paths = std::min<Index>(q0_test.size(), 512);
        const TrajectoryEnsemble traj = simulate_sde(trained.model, q0_test.head(paths).points(), g,
                                                     sim_steps, Rng(seed).fork(0xe0a2));
        save_csv(traj, cfg.out_dir + "/traj" + tag + ".csv");
    }
    return out;
}

inline SeedOutcome run_gaussian_sb_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    const Index dim = cfg.dataset.value("dim", Index(5));
    const Index n = cfg.dataset.value("n", Index(10000));
    const auto [q0, q1] = make_gaussian_pair(dim, n, seed);

    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const bool looped = tc.loop.has_value();
    auto trained = looped ? train_looped(q0, q1, tc) : train_pair(q0, q1, tc);

    GaussianSbOracle oracle;
    oracle.dim = dim;
    oracle.sigma = tc.sigma;
    const Index timepoints = cfg.eval.value("timepoints", Index(21));
    const Index eval_n = cfg.eval.value("n", Index(10000));
    const Index steps = cfg.eval.value("sim_steps", Index(20));
    const SbBenchmarkReport rep = sb_benchmark(trained.model, oracle, timepoints, eval_n, steps, seed);

    SeedOutcome out;
    out.seed = seed;
    out.metrics["kl_endpoint"] = rep.kl_endpoint;
    out.metrics["kl_mean_path"] = rep.kl_mean;

    const std::string tag = "_seed" + std::to_string(seed);
    save_checkpoint(ModelAny(trained.model), cfg.out_dir + "/model" + tag + ".ckpt", seed, tc.steps);
    write_loss_csv(trained.reports, cfg.out_dir + "/loss" + tag + ".csv");
    write_kl_breakdown_csv(rep, cfg.out_dir + "/kl_per_time" + tag + ".csv");
    if (looped) write_loop_diags_csv(trained.loop_diags, cfg.out_dir + "/loop_diags" + tag + ".csv");
    return out;
}

inline SeedOutcome run_trajectory_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    const TimepointSeries series = series_from_dataset(cfg.dataset, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;

    const std::size_t held_out =
        cfg.eval.value("held_out", static_cast<std::size_t>(series.count() / 2));
    const Index w2_points = cfg.eval.value("w2_max_points", Index(5000));
    const Index sim_steps = cfg.eval.value("sim_steps", Index(100));
    const LeaveOneOutReport rep = leave_one_out(series, tc, held_out, sim_steps, w2_points);

    SeedOutcome out;
    out.seed = seed;
    out.metrics["w1_held_out"] = rep.w1_model;
    out.metrics["w1_copy_baseline"] = rep.w1_copy_baseline;
    return out;
}

inline SeedOutcome run_grn_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    const Index genes = cfg.dataset.value("genes", Index(7));
    const Index timepoints = cfg.dataset.value("timepoints", Index(8));
    const Index cells = cfg.dataset.value("cells", Index(300));
    const double noise = cfg.dataset.value("noise", 0.2);
    const Matrix adjacency = adjacency_from_json(cfg.dataset, genes);
    const SparseSdeSeries data = make_sparse_sde_series(genes, adjacency, timepoints, cells, noise, seed);

    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const auto trained = train_trajectory_ngm(data.series, tc);

    const Matrix scores = trained.model.net().edge_scores();
    Matrix truth(genes, genes);
    for (Index i = 0; i < genes; ++i)
        for (Index j = 0; j < genes; ++j) truth(i, j) = adjacency(i, j) != 0.0 ? 1.0 : 0.0;
    const GrnMetrics metrics = grn_metrics(scores, truth, true);

    SeedOutcome out;
    out.seed = seed;
    out.metrics["auc_roc"] = metrics.auc_roc;
    out.metrics["avg_precision"] = metrics.avg_precision;

    const std::string tag = "_seed" + std::to_string(seed);
    save_checkpoint(ModelAny(trained.model), cfg.out_dir + "/model" + tag + ".ckpt", seed, tc.steps);
    write_loss_csv(trained.reports, cfg.out_dir + "/loss" + tag + ".csv");
    std::ofstream scores_out(cfg.out_dir + "/edge_scores" + tag + ".csv");
    for (Index i = 0; i < genes; ++i) {
        for (Index j = 0; j < genes; ++j) scores_out << (j ? "," : "") << format_double(scores(i, j));
        scores_out << "\n";
    }
    return out;
}

inline SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    switch (cfg.kind) {
        case ExperimentConfig::Kind::two_dim: return run_two_dim_seed(cfg, seed);
        case ExperimentConfig::Kind::gaussian_sb: return run_gaussian_sb_seed(cfg, seed);
        case ExperimentConfig::Kind::trajectory: return run_trajectory_seed(cfg, seed);
        case ExperimentConfig::Kind::grn: return run_grn_seed(cfg, seed);
    }
    throw ConfigError("unknown experiment kind");
}

} // namespace detail

/// Execute every seed (parallel up to SF2M_THREADS), aggregate mean/std per
/// metric, and write metrics.json plus per-seed artifacts into out_dir.
inline Json run_experiment(const ExperimentConfig& cfg, const std::string& config_source_path = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    if (!config_source_path.empty()) {
        const bool json_config =
            config_source_path.size() >= 5 &&
            config_source_path.substr(config_source_path.size() - 5) == ".json";
        fs::copy_file(config_source_path, cfg.out_dir + (json_config ? "/config.json" : "/config.toml"),
                      fs::copy_options::overwrite_existing);
    }

    const auto t_start = std::chrono::steady_clock::now();
    std::vector<SeedOutcome> outcomes(cfg.seeds.size());
    std::vector<std::string> errors(cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    const Index n_threads =
        std::min<Index>(detail::env_thread_cap(), static_cast<Index>(cfg.seeds.size()));

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cfg.seeds.size()) return;
            try {
                outcomes[i] = detail::run_seed(cfg, cfg.seeds[i]);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (Index t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (std::size_t i = 0; i < errors.size(); ++i)
        if (!errors[i].empty())
            throw NumericError("seed " + std::to_string(cfg.seeds[i]) + ": " + errors[i]);

    Json metrics = Json::object();
    if (!outcomes.empty()) {
        for (const auto& [name, first_value] : outcomes.front().metrics) {
            (void)first_value;
            std::vector<double> values;
            for (const auto& o : outcomes) values.push_back(o.metrics.at(name));
            double mean = 0.0;
            for (const double v : values) mean += v;
            mean /= static_cast<double>(values.size());
            double var = 0.0;
            for (const double v : values) var += (v - mean) * (v - mean);
            const double std_dev =
                values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
            metrics[name] = Json{{"mean", mean}, {"std", std_dev}, {"values", values}};
        }
    }

    Json result;
    result["experiment"] = cfg.raw.value("experiment", "");
    result["seeds"] = cfg.seeds;
    result["metrics"] = metrics;
    result["wallclock"] =
        Json{{"total_seconds",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count()}};

    std::ofstream out(cfg.out_dir + "/metrics.json");
    if (!out) throw ParseError("cannot open " + cfg.out_dir + "/metrics.json");
    out << result.dump(2) << "\n";
    return result;
}

inline Json run_experiment_file(const std::string& config_path, const std::string& out_override = {},
                                const std::vector<std::uint64_t>& seed_override = {}) {
    Json j = load_config_file(config_path);
    if (!out_override.empty()) j["out_dir"] = out_override;
    if (!seed_override.empty()) j["seeds"] = seed_override;
    ExperimentConfig cfg = ExperimentConfig::from_json(j);
    return run_experiment(cfg, config_path);
}

} // namespace sf2m
