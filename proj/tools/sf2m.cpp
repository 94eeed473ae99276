// Experiment CLI: config-driven benchmark runs plus standalone training,
// simulation, metric, and transport-plan commands.

#include "sf2m/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace sf2m;

int cmd_run(const std::string& config, const std::string& out, const std::vector<std::uint64_t>& seeds) {
    const Json result = run_experiment_file(config, out, seeds);
    std::cout << result.dump(2) << "\n";
    // exit 0 iff every requested metric was produced
    for (const auto& [name, entry] : result.at("metrics").items()) {
        (void)name;
        if (!entry.contains("mean") || !std::isfinite(entry.at("mean").get<double>())) return 1;
    }
    return result.at("metrics").empty() ? 1 : 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, long seed_flag) {
    Json j = load_config_file(config_path);
    if (!out_dir.empty()) j["out_dir"] = out_dir;
    if (seed_flag >= 0) j["seeds"] = std::vector<long>{seed_flag};
    ExperimentConfig cfg = ExperimentConfig::from_json(j);
    std::filesystem::create_directories(cfg.out_dir);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seeds.front();

    ModelAny model = [&]() -> ModelAny {
        switch (cfg.kind) {
            case ExperimentConfig::Kind::two_dim: {
                Rng streams(tc.seed);
                const Index n = cfg.dataset.value("train_size", Index(10000));
                const PointCloud q0 = detail::make_two_dim_cloud(
                    cfg.dataset.value("source", Json{{"name", "gaussian"}}), n, streams.fork(1).seed());
                const PointCloud q1 = detail::make_two_dim_cloud(
                    cfg.dataset.value("target", Json{{"name", "8gaussians"}}), n, streams.fork(2).seed());
                auto r = tc.loop ? train_looped(q0, q1, tc) : train_pair(q0, q1, tc);
                detail::write_loss_csv(r.reports, cfg.out_dir + "/loss.csv");
                return ModelAny(std::move(r.model));
            }
            case ExperimentConfig::Kind::gaussian_sb: {
                const auto [q0, q1] = make_gaussian_pair(cfg.dataset.value("dim", Index(5)),
                                                         cfg.dataset.value("n", Index(10000)), tc.seed);
                auto r = tc.loop ? train_looped(q0, q1, tc) : train_pair(q0, q1, tc);
                detail::write_loss_csv(r.reports, cfg.out_dir + "/loss.csv");
                if (tc.loop) detail::write_loop_diags_csv(r.loop_diags, cfg.out_dir + "/loop_diags.csv");
                return ModelAny(std::move(r.model));
            }
            case ExperimentConfig::Kind::trajectory: {
                const TimepointSeries series = detail::series_from_dataset(cfg.dataset, tc.seed);
                auto r = train_trajectory(series, tc);
                detail::write_loss_csv(r.reports, cfg.out_dir + "/loss.csv");
                return ModelAny(std::move(r.model));
            }
            case ExperimentConfig::Kind::grn: {
                const Index genes = cfg.dataset.value("genes", Index(7));
                const Matrix adjacency = detail::adjacency_from_json(cfg.dataset, genes);
                const SparseSdeSeries data = make_sparse_sde_series(
                    genes, adjacency, cfg.dataset.value("timepoints", Index(8)),
                    cfg.dataset.value("cells", Index(300)), cfg.dataset.value("noise", 0.2), tc.seed);
                auto r = train_trajectory_ngm(data.series, tc);
                detail::write_loss_csv(r.reports, cfg.out_dir + "/loss.csv");
                return ModelAny(std::move(r.model));
            }
        }
        throw ConfigError("unknown experiment kind");
    }();

    save_checkpoint(model, cfg.out_dir + "/model.ckpt", tc.seed, tc.steps);
    std::cout << "checkpoint written to " << cfg.out_dir << "/model.ckpt\n";
    return 0;
}

int cmd_simulate(const std::string& ckpt, const std::string& input, double g, Index steps,
                 std::uint64_t seed, const std::string& out, bool backward, const std::string& terminal) {
    const AnyModel model{load_checkpoint(ckpt)};
    const PointCloud cloud = load_csv(input);
    const TrajectoryEnsemble traj = backward
                                        ? simulate_backward(model, cloud.points(), g, steps, Rng(seed))
                                        : simulate_sde(model, cloud.points(), g, steps, Rng(seed));
    if (!out.empty()) save_csv(traj, out);
    if (!terminal.empty()) save_csv(PointCloud::uniform(traj.terminal()), terminal);
    std::cout << "simulated " << traj.paths() << " paths, " << traj.steps() << " steps, g = " << g << "\n";
    return 0;
}

int cmd_eval(const std::string& metric, const std::string& a_path, const std::string& b_path,
             const std::string& ckpt, Index max_points, Index steps) {
    if (metric == "w2" || metric == "w1") {
        const PointCloud a = load_csv(a_path);
        const PointCloud b = load_csv(b_path);
        const WassersteinReport rep = wasserstein_report(
            a, b, metric == "w2" ? WassersteinOrder::w2 : WassersteinOrder::w1, max_points);
        Json out{{"metric", metric},
                 {"value", rep.value},
                 {"n_a_used", rep.n_a_used},
                 {"n_b_used", rep.n_b_used},
                 {"subsampled", rep.subsampled}};
        std::cout << out.dump(2) << "\n";
        return 0;
    }
    if (metric == "npe") {
        if (ckpt.empty()) throw ConfigError("eval --metric npe needs --checkpoint");
        const AnyModel model{load_checkpoint(ckpt)};
        const PointCloud q0 = load_csv(a_path);
        const PointCloud q1 = load_csv(b_path);
        const double value = npe(model, q0, q1, steps, max_points);
        std::cout << Json{{"metric", "npe"}, {"value", value}}.dump(2) << "\n";
        return 0;
    }
    throw ConfigError("unknown metric '" + metric + "' (use w1, w2, npe)");
}

int cmd_ot_solve(const std::string& method, const std::string& a_path, const std::string& b_path,
                 double epsilon, int max_iter, double tol, const std::string& out,
                 const std::string& sparse, const std::string& diagnostics, const std::string& cost_kind,
                 Index knn, double t_heat) {
    const PointCloud a = load_csv(a_path);
    const PointCloud b = load_csv(b_path);
    CostMatrix cost = cost_kind == "geodesic" ? cost_geodesic(a, b, knn, t_heat).cost
                                              : cost_sq_euclidean(a, b);
    if (cost_kind == "geodesic") cost.values = cost.values.array().square();

    CouplingPlan plan;
    if (method == "exact") {
        plan = solve_exact(cost, a.weights(), b.weights());
    } else if (method == "sinkhorn") {
        plan = solve_sinkhorn(cost, a.weights(), b.weights(), SinkhornOptions{epsilon, max_iter, tol, 10});
    } else {
        throw ConfigError("unknown method '" + method + "' (use exact or sinkhorn)");
    }
    if (!out.empty()) save_plan_csv(plan, out);
    if (!sparse.empty()) save_plan_sparse(plan, sparse);
    const Json diag = plan_diagnostics_json(plan);
    if (!diagnostics.empty()) {
        std::ofstream dout(diagnostics);
        dout << diag.dump(2) << "\n";
    }
    std::cout << diag.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sf2m: simulation-free score and flow matching for Schrodinger bridges"};
    app.require_subcommand(1);

    std::string config, out, input, ckpt, terminal, a_path, b_path, metric = "w2";
    std::string method = "exact", sparse, diagnostics, cost_kind = "sqeuclidean";
    std::vector<std::uint64_t> seeds;
    long seed_flag = -1;
    std::uint64_t sim_seed = 0;
    double g = 0.0, epsilon = 1.0, tol = 1e-9, t_heat = 1.0;
    sf2m::Index steps = 100, max_points = 5000, knn = 10, paths = 0;
    int max_iter = 1000;
    bool backward = false;

    auto* run = app.add_subcommand("run", "run a config-driven experiment end to end");
    run->add_option("--config", config, "TOML or JSON experiment config")->required();
    run->add_option("--out", out, "output directory (overrides config)");
    run->add_option("--seed", seeds, "seed list override");

    auto* train = app.add_subcommand("train", "train one model from a config");
    train->add_option("--config", config)->required();
    train->add_option("--out", out);
    train->add_option("--seed", seed_flag);

    auto* simulate = app.add_subcommand("simulate", "integrate the learned ODE/SDE from a cloud");
    simulate->add_option("--checkpoint", ckpt)->required();
    simulate->add_option("--input", input, "source cloud CSV")->required();
    simulate->add_option("--g", g, "inference diffusion scale");
    simulate->add_option("--steps", steps);
    simulate->add_option("--seed", sim_seed);
    simulate->add_option("--out", out, "trajectory CSV");
    simulate->add_option("--terminal", terminal, "terminal cloud CSV");
    simulate->add_flag("--backward", backward, "integrate the time-reversed SDE");

    auto* eval = app.add_subcommand("eval", "compute a metric between clouds");
    eval->add_option("--metric", metric, "w1, w2, or npe");
    eval->add_option("--a", a_path)->required();
    eval->add_option("--b", b_path)->required();
    eval->add_option("--checkpoint", ckpt, "model (npe only)");
    eval->add_option("--max-points", max_points);
    eval->add_option("--steps", steps);

    auto* ot = app.add_subcommand("ot-solve", "solve a standalone transport plan");
    ot->add_option("--method", method, "exact or sinkhorn");
    ot->add_option("--a", a_path)->required();
    ot->add_option("--b", b_path)->required();
    ot->add_option("--epsilon", epsilon);
    ot->add_option("--max-iter", max_iter);
    ot->add_option("--tol", tol);
    ot->add_option("--out", out, "dense plan CSV");
    ot->add_option("--sparse", sparse, "sparse (i,j,mass) CSV");
    ot->add_option("--diagnostics", diagnostics, "solver diagnostics JSON");
    ot->add_option("--cost", cost_kind, "sqeuclidean or geodesic");
    ot->add_option("--knn", knn);
    ot->add_option("--t-heat", t_heat);

    auto* export_traj = app.add_subcommand("export-traj", "simulate and export sample paths");
    export_traj->add_option("--checkpoint", ckpt)->required();
    export_traj->add_option("--input", input)->required();
    export_traj->add_option("--g", g);
    export_traj->add_option("--steps", steps);
    export_traj->add_option("--seed", sim_seed);
    export_traj->add_option("--paths", paths, "cap on exported paths (0 = all)");
    export_traj->add_option("--out", out)->required();
    export_traj->add_flag("--backward", backward);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config, out, seeds);
        if (train->parsed()) return cmd_train(config, out, seed_flag);
        if (simulate->parsed()) {
            if (out.empty() && terminal.empty())
                throw sf2m::ConfigError("simulate: provide --out and/or --terminal");
            return cmd_simulate(ckpt, input, g, steps, sim_seed, out, backward, terminal);
        }
        if (eval->parsed()) return cmd_eval(metric, a_path, b_path, ckpt, max_points, steps);
        if (ot->parsed())
            return cmd_ot_solve(method, a_path, b_path, epsilon, max_iter, tol, out, sparse, diagnostics,
                                cost_kind, knn, t_heat);
        if (export_traj->parsed()) {
            const sf2m::AnyModel model{sf2m::load_checkpoint(ckpt)};
            sf2m::PointCloud cloud = sf2m::load_csv(input);
            if (paths > 0) cloud = cloud.head(paths);
            const sf2m::TrajectoryEnsemble traj =
                backward ? sf2m::simulate_backward(model, cloud.points(), g, steps, sf2m::Rng(sim_seed))
                         : sf2m::simulate_sde(model, cloud.points(), g, steps, sf2m::Rng(sim_seed));
            sf2m::save_csv(traj, out);
            std::cout << "wrote " << traj.paths() << " paths to " << out << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
