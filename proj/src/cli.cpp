#include "cpql/cli.hpp"

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "cpql/sweep.hpp"

namespace cpql {

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::int64_t seed_override = -1;
    int threads = 0;
};

void write_manifest(const std::string& out_dir, const json& resolved_config,
                    const std::vector<std::string>& files) {
    json manifest{{"tool", kToolVersion}, {"config", resolved_config}, {"files", files}};
    write_text_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
}

int with_config(const CommonOpts& opts, const std::function<int(const json&)>& body) {
    json cfg;
    try {
        cfg = load_json_file(opts.config_path);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    try {
        return body(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "config error in " << opts.config_path << ": " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_gen_env(const CommonOpts& opts) {
    return with_config(opts, [&](const json& j) {
        EnvSpec spec = EnvSpec::from_json(j.contains("env") ? j.at("env") : j);
        if (opts.seed_override >= 0) spec.seed = opts.seed_override;
        const FiniteMdp mdp = make_env(spec);
        write_text_file(opts.out_dir + "/mdp.json", mdp.to_json().dump(2) + "\n");
        write_manifest(opts.out_dir, spec.to_json(), {"mdp.json"});
        std::cout << "wrote " << opts.out_dir << "/mdp.json (S=" << mdp.num_states
                  << ", A=" << mdp.num_actions << ")\n";
        return 0;
    });
}

int cmd_collect(const CommonOpts& opts) {
    return with_config(opts, [&](const json& j) {
        ExperimentConfig cfg = ExperimentConfig::from_json(j);
        if (opts.seed_override >= 0) cfg.dataset.seed = opts.seed_override;
        const FiniteMdp mdp = make_env(cfg.env);
        RecipeReport rep;
        const TrajectoryDataset ds =
            dataset_recipe(mdp, cfg.dataset.quality, cfg.dataset.episodes,
                           derive_seed(cfg.master_seed, cfg.dataset.seed),
                           cfg.dataset.horizon, {5, 3, 2}, &rep);
        ds.save(opts.out_dir + "/dataset.jsonl");
        json resolved = cfg.to_json();
        resolved["recipe"] = json{{"medium_bisection_ok", rep.medium_bisection_ok},
                                  {"medium_temperature", rep.medium_temperature}};
        write_manifest(opts.out_dir, resolved,
                       {"dataset.jsonl", "dataset.jsonl.meta.json"});
        std::cout << "wrote " << opts.out_dir << "/dataset.jsonl (" << ds.episodes.size()
                  << " episodes, " << ds.total_steps() << " steps)\n";
        return 0;
    });
}

int cmd_train(const CommonOpts& opts) {
    return with_config(opts, [&](const json& j) {
        ExperimentConfig cfg = ExperimentConfig::from_json(j);
        if (opts.seed_override >= 0) cfg.master_seed = opts.seed_override;
        cfg.alpha_grid = {cfg.alpha_grid.front()};
        cfg.lambda_grid = {cfg.lambda_grid.front()};
        cfg.repeats = 1;
        const auto results = run_sweep(cfg, 1, opts.out_dir);
        std::cout << "final j_eval " << format_double(results.front().j_eval) << ", score "
                  << format_double(results.front().score) << "\n";
        return 0;
    });
}

int cmd_sweep(const CommonOpts& opts) {
    return with_config(opts, [&](const json& j) {
        ExperimentConfig cfg = ExperimentConfig::from_json(j);
        if (opts.seed_override >= 0) cfg.master_seed = opts.seed_override;
        try {
            const auto results = run_sweep(cfg, opts.threads, opts.out_dir);
            std::cout << results.size() << " cells -> " << opts.out_dir
                      << "/results.json\n";
            return 0;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            std::cerr << "sweep error: " << e.what() << "\n";
            return 1;
        }
    });
}

int cmd_verify(std::uint64_t seed, const std::string& out_dir) {
    try {
        SuiteGrid grid;
        const auto reports = run_full_suite(seed, grid);
        int failed = 0;
        for (const auto& r : reports) {
            if (r.asserted && !r.passed) {
                ++failed;
                std::cout << "[FAIL] " << r.name << " residual "
                          << format_double(r.residual) << " tol "
                          << format_double(r.tolerance) << "\n";
            }
        }
        write_text_file(out_dir + "/verify_report.json",
                        suite_to_json(reports).dump(2) + "\n");
        json cfg{{"seed", seed}};
        write_manifest(out_dir, cfg, {"verify_report.json"});
        std::cout << reports.size() - failed << "/" << reports.size() << " checks passed; "
                  << "report at " << out_dir << "/verify_report.json\n";
        return failed == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "verify error: " << e.what() << "\n";
        return 1;
    }
}

Exploration exploration_from_name(const std::string& s) {
    if (s == "epsilon_greedy") return Exploration::EpsilonGreedy;
    if (s == "softmax") return Exploration::Softmax;
    throw ConfigError("o2o.exploration", "unknown exploration '" + s + "'");
}

O2oConfig o2o_from_json(const json& j) {
    O2oConfig cfg;
    if (!j.contains("o2o")) throw ConfigError("o2o", "missing");
    const auto& o = j.at("o2o");
    if (o.contains("offline")) {
        const auto& f = o.at("offline");
        cfg.offline.alpha = f.value("alpha", cfg.offline.alpha);
        cfg.offline.lambda = f.value("lambda", cfg.offline.lambda);
        cfg.offline.segment_len = f.value("segment_len", cfg.offline.segment_len);
        cfg.offline.batch = f.value("batch", cfg.offline.batch);
        cfg.offline.lr = f.value("lr", cfg.offline.lr);
        cfg.offline.tau = f.value("tau", cfg.offline.tau);
        cfg.offline.iters = f.value("iters", cfg.offline.iters);
        cfg.offline.twin_tables = f.value("twin_tables", cfg.offline.twin_tables);
        cfg.offline.seed = f.value("seed", cfg.offline.seed);
    }
    cfg.online_steps = o.value("online_steps", cfg.online_steps);
    if (o.contains("exploration")) {
        cfg.exploration = exploration_from_name(o.at("exploration").get<std::string>());
    }
    cfg.epsilon = o.value("epsilon", cfg.epsilon);
    cfg.exploration_temperature =
        o.value("exploration_temperature", cfg.exploration_temperature);
    cfg.replay_capacity = o.value("replay_capacity", cfg.replay_capacity);
    cfg.online_segment_len = o.value("online_segment_len", cfg.online_segment_len);
    cfg.eval_every = o.value("eval_every", cfg.eval_every);
    cfg.seed = o.value("seed", cfg.seed);
    cfg.retain_offline_data = o.value("retain_offline_data", cfg.retain_offline_data);
    cfg.online_horizon = o.value("online_horizon", cfg.online_horizon);
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw ConfigError("o2o", e.what());
    }
    return cfg;
}

int cmd_o2o(const CommonOpts& opts) {
    return with_config(opts, [&](const json& j) {
        ExperimentConfig exp = ExperimentConfig::from_json(j);
        O2oConfig cfg = o2o_from_json(j);
        if (opts.seed_override >= 0) cfg.seed = opts.seed_override;
        const FiniteMdp mdp = make_env(exp.env);
        const TrajectoryDataset ds = dataset_recipe(
            mdp, exp.dataset.quality, exp.dataset.episodes,
            derive_seed(exp.master_seed, exp.dataset.seed), exp.dataset.horizon);
        try {
            const auto [main_arm, base_arm] = compare_transition_baselines(
                mdp, ds, cfg, TransitionBaseline::CqlToQlearning);
            write_text_file(opts.out_dir + "/o2o_main.csv", main_arm.to_csv());
            write_text_file(opts.out_dir + "/o2o_baseline.csv", base_arm.to_csv());
            json pairing{{"tool", kToolVersion},
                         {"arms",
                          json::array({json{{"name", "cpql_to_pql"},
                                            {"trace", "o2o_main.csv"},
                                            {"seed", derive_seed(cfg.seed, 0)}},
                                       json{{"name", "cql_to_qlearning"},
                                            {"trace", "o2o_baseline.csv"},
                                            {"seed", derive_seed(cfg.seed, 1)}}})}};
            write_text_file(opts.out_dir + "/pairing.json", pairing.dump(2) + "\n");
            write_manifest(opts.out_dir, exp.to_json(),
                           {"o2o_main.csv", "o2o_baseline.csv", "pairing.json"});
            std::cout << "wrote paired traces to " << opts.out_dir << "\n";
            return 0;
        } catch (const std::exception& e) {
            std::cerr << "o2o error: " << e.what() << "\n";
            return 1;
        }
    });
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Tabular offline multi-step RL workbench"};
    app.require_subcommand(1);

    CommonOpts gen_opts, collect_opts, train_opts, sweep_opts, o2o_opts;
    std::uint64_t verify_seed = 1;
    std::string verify_out = "out";
    double score_raw = 0.0, score_min = 0.0, score_max = 100.0;

    auto add_common = [](CLI::App* cmd, CommonOpts& o, bool threads = false) {
        cmd->add_option("--config", o.config_path, "JSON config file")->required();
        cmd->add_option("--out", o.out_dir, "output directory");
        cmd->add_option("--seed", o.seed_override, "seed override");
        if (threads) cmd->add_option("--threads", o.threads, "worker threads (0 = auto)");
    };

    add_common(app.add_subcommand("gen-env", "generate an environment file"), gen_opts);
    add_common(app.add_subcommand("collect", "collect an offline dataset"), collect_opts);
    add_common(app.add_subcommand("train", "train a single grid cell"), train_opts);
    add_common(app.add_subcommand("sweep", "run an experiment grid"), sweep_opts, true);
    add_common(app.add_subcommand("o2o", "offline-to-online comparison"), o2o_opts);

    auto* verify = app.add_subcommand("verify", "run the verification suite");
    verify->add_option("--seed", verify_seed, "suite seed");
    verify->add_option("--out", verify_out, "output directory");

    auto* score = app.add_subcommand("score", "normalize a raw return");
    score->add_option("--raw", score_raw, "raw return")->required();
    score->add_option("--ref-min", score_min, "reference minimum")->required();
    score->add_option("--ref-max", score_max, "reference maximum")->required();

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (app.got_subcommand("gen-env")) return cmd_gen_env(gen_opts);
    if (app.got_subcommand("collect")) return cmd_collect(collect_opts);
    if (app.got_subcommand("train")) return cmd_train(train_opts);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep_opts);
    if (app.got_subcommand("o2o")) return cmd_o2o(o2o_opts);
    if (app.got_subcommand("verify")) return cmd_verify(verify_seed, verify_out);
    if (app.got_subcommand("score")) {
        try {
            ScoreRef ref{score_min, score_max};
            std::cout << format_double(normalized_score(score_raw, ref)) << "\n";
            return 0;
        } catch (const std::exception& e) {
            std::cerr << "score error: " << e.what() << "\n";
            return 2;
        }
    }
    return 2;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace cpql
