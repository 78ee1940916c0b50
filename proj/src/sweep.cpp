#include "cpql/sweep.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <thread>

namespace cpql {

namespace {

const char* method_name(TrainMethod m) { return m == TrainMethod::Exact ? "exact" : "sgd"; }

TrainMethod method_from_name(const std::string& s) {
    if (s == "exact") return TrainMethod::Exact;
    if (s == "sgd") return TrainMethod::Sgd;
    throw ConfigError("train.method", "expected 'exact' or 'sgd', got '" + s + "'");
}

OperatorKind operator_from_name(const std::string& s) {
    if (s == "cpql") return OperatorKind::Cpql;
    if (s == "cql") return OperatorKind::Cql;
    if (s == "nstep") return OperatorKind::NStep;
    if (s == "retrace") return OperatorKind::Retrace;
    if (s == "treebackup") return OperatorKind::TreeBackup;
    throw ConfigError("train.operator", "unknown operator '" + s + "'");
}

const char* quality_name(DatasetQuality q) {
    switch (q) {
        case DatasetQuality::Random: return "random";
        case DatasetQuality::Medium: return "medium";
        case DatasetQuality::Expert: return "expert";
        case DatasetQuality::Mixed: return "mixed";
    }
    return "?";
}

DatasetQuality quality_from_name(const std::string& s) {
    if (s == "random") return DatasetQuality::Random;
    if (s == "medium") return DatasetQuality::Medium;
    if (s == "expert") return DatasetQuality::Expert;
    if (s == "mixed") return DatasetQuality::Mixed;
    throw ConfigError("dataset.quality", "unknown quality '" + s + "'");
}

const char* improvement_name(Improvement i) {
    switch (i) {
        case Improvement::Greedy: return "greedy";
        case Improvement::Softmax: return "softmax";
        case Improvement::PenalizedHillClimb: return "hill_climb";
    }
    return "?";
}

Improvement improvement_from_name(const std::string& s) {
    if (s == "greedy") return Improvement::Greedy;
    if (s == "softmax") return Improvement::Softmax;
    if (s == "hill_climb") return Improvement::PenalizedHillClimb;
    throw ConfigError("train.improvement", "unknown improvement '" + s + "'");
}

}  // namespace

const char* operator_name(OperatorKind op) {
    switch (op) {
        case OperatorKind::Cpql: return "cpql";
        case OperatorKind::Cql: return "cql";
        case OperatorKind::NStep: return "nstep";
        case OperatorKind::Retrace: return "retrace";
        case OperatorKind::TreeBackup: return "treebackup";
    }
    return "?";
}

void ExperimentConfig::validate() const {
    if (alpha_grid.empty()) throw ConfigError("train.alpha_grid", "must be non-empty");
    if (lambda_grid.empty()) throw ConfigError("train.lambda_grid", "must be non-empty");
    for (double a : alpha_grid) {
        if (a < 0.0) throw ConfigError("train.alpha_grid", "entries must be >= 0");
    }
    for (double l : lambda_grid) {
        if (l < 0.0 || l >= 1.0) {
            throw ConfigError("train.lambda_grid",
                              "entries must lie in [0,1); 1 is rejected");
        }
    }
    if (repeats < 1) throw ConfigError("repeats", "must be >= 1");
    if (dataset.episodes < 1) throw ConfigError("dataset.episodes", "must be >= 1");
    if (dataset.horizon < 1) throw ConfigError("dataset.horizon", "must be >= 1");
    if (method == TrainMethod::Sgd && op != OperatorKind::Cpql && op != OperatorKind::Cql) {
        throw ConfigError("train.operator", "sgd method supports cpql and cql only");
    }
    try {
        train.validate();
    } catch (const std::exception& e) {
        throw ConfigError("train", e.what());
    }
    if (score_ref) score_ref->validate();
}

json ExperimentConfig::to_json() const {
    json j;
    j["env"] = env.to_json();
    j["dataset"] = json{{"quality", quality_name(dataset.quality)},
                        {"episodes", dataset.episodes},
                        {"horizon", dataset.horizon},
                        {"seed", dataset.seed}};
    j["train"] = json{{"method", method_name(method)},
                      {"operator", operator_name(op)},
                      {"alpha_grid", alpha_grid},
                      {"lambda_grid", lambda_grid},
                      {"segment_len", train.segment_len},
                      {"batch", train.batch},
                      {"lr", train.lr},
                      {"tau", train.tau},
                      {"iters", train.iters},
                      {"improvement", improvement_name(train.improvement)},
                      {"softmax_temperature", train.softmax_temperature},
                      {"twin_tables", train.twin_tables}};
    if (score_ref) {
        j["eval"] = json{{"score_ref", json{{"min", score_ref->ref_min},
                                            {"max", score_ref->ref_max}}}};
    } else {
        j["eval"] = json::object();
    }
    j["output_dir"] = output_dir;
    j["master_seed"] = master_seed;
    j["repeats"] = repeats;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    try {
        if (!j.contains("env")) throw ConfigError("env", "missing");
        c.env = EnvSpec::from_json(j.at("env"));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("env", e.what());
    }
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        if (d.contains("quality")) {
            c.dataset.quality = quality_from_name(d.at("quality").get<std::string>());
        }
        c.dataset.episodes = d.value("episodes", c.dataset.episodes);
        c.dataset.horizon = d.value("horizon", c.dataset.horizon);
        c.dataset.seed = d.value("seed", c.dataset.seed);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        if (t.contains("method")) c.method = method_from_name(t.at("method").get<std::string>());
        if (t.contains("operator")) {
            c.op = operator_from_name(t.at("operator").get<std::string>());
        }
        if (t.contains("alpha_grid")) {
            c.alpha_grid = t.at("alpha_grid").get<std::vector<double>>();
        }
        if (t.contains("lambda_grid")) {
            c.lambda_grid = t.at("lambda_grid").get<std::vector<double>>();
        }
        c.train.segment_len = t.value("segment_len", c.train.segment_len);
        c.train.batch = t.value("batch", c.train.batch);
        c.train.lr = t.value("lr", c.train.lr);
        c.train.tau = t.value("tau", c.train.tau);
        c.train.iters = t.value("iters", c.train.iters);
        if (t.contains("improvement")) {
            c.train.improvement =
                improvement_from_name(t.at("improvement").get<std::string>());
        }
        c.train.softmax_temperature =
            t.value("softmax_temperature", c.train.softmax_temperature);
        c.train.twin_tables = t.value("twin_tables", c.train.twin_tables);
    }
    if (j.contains("eval") && j.at("eval").contains("score_ref")) {
        const auto& s = j.at("eval").at("score_ref");
        ScoreRef ref;
        ref.ref_min = s.at("min").get<double>();
        ref.ref_max = s.at("max").get<double>();
        c.score_ref = ref;
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.repeats = j.value("repeats", c.repeats);
    c.validate();
    return c;
}

json CellResult::to_json() const {
    return json{{"operator", op},   {"alpha", alpha}, {"lambda", lambda},
                {"seed", seed},     {"j_eval", j_eval}, {"avg_q", avg_q},
                {"score", score},   {"trace_path", trace_path}};
}

namespace {

struct CellKey {
    double alpha;
    double lambda;
    int repeat;
};

// Penalized iteration with the chosen backup on the empirical model;
// greedy/softmax improvement restricted to observed pairs.
std::pair<ExactIterResult, TrainTrace> run_operator_cell(const EmpiricalModel& emp,
                                                         OperatorKind op,
                                                         const CpqlConfig& cfg,
                                                         const FiniteMdp& eval_mdp,
                                                         double deploy_lambda) {
    const TabularPolicy pi_beta = emp.behavior_policy();
    if (op == OperatorKind::Cpql || op == OperatorKind::Cql) {
        CpqlConfig c = cfg;
        if (op == OperatorKind::Cql) c.lambda = 0.0;
        ExactIterResult res = cpql_exact_iterate(emp, pi_beta, c, &eval_mdp);
        return {res, res.trace};
    }
    const BackupModel model(emp);
    const int S = emp.num_states, A = emp.num_actions;
    QTable q = QTable::zeros(S, A);
    TabularPolicy policy = pi_beta;
    TrainTrace trace;
    trace.records.reserve(cfg.iters);
    for (int it = 0; it < cfg.iters; ++it) {
        QTable backed;
        switch (op) {
            case OperatorKind::NStep:
                backed = nstep_backup(model, pi_beta, policy, cfg.segment_len, q);
                break;
            case OperatorKind::Retrace:
                backed = retrace_backup(model, pi_beta, policy, cfg.lambda, q);
                break;
            case OperatorKind::TreeBackup:
                backed = treebackup_backup(model, pi_beta, policy, cfg.lambda, q);
                break;
            default:
                throw std::logic_error("unexpected operator");
        }
        Eigen::MatrixXd pen = ratio_penalty_table(policy, pi_beta);
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a)
                if (!emp.pair_observed(s, a)) pen(s, a) = 0.0;
        QTable next{backed.values - cfg.alpha * pen};
        const double td = (next.values - q.values).array().abs().maxCoeff();
        q = std::move(next);
        policy = improve_policy(model, pi_beta, q,
                                cfg.improvement == Improvement::PenalizedHillClimb
                                    ? Improvement::Softmax
                                    : cfg.improvement,
                                cfg.softmax_temperature);
        TrainRecord rec;
        rec.iter = it;
        rec.td_loss = td;
        rec.penalty = cfg.alpha * expected_ratio_penalty(policy, pi_beta).mean();
        double sum = 0.0;
        int cnt = 0;
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a)
                if (emp.pair_observed(s, a)) {
                    sum += q.values(s, a);
                    ++cnt;
                }
        rec.avg_q = cnt ? sum / cnt : 0.0;
        rec.j_eval =
            expected_return(eval_mdp, mixture_policy(pi_beta, policy, deploy_lambda));
        trace.records.push_back(rec);
    }
    ExactIterResult res;
    res.q = q;
    res.policy = policy;
    res.trace = trace;
    res.trace.q_final = q;
    res.trace.policy_final = policy;
    return {res, res.trace};
}

}  // namespace

std::vector<CellResult> run_sweep(const ExperimentConfig& config, int threads,
                                  const std::string& out_dir) {
    config.validate();
    const FiniteMdp mdp = make_env(config.env);

    // One dataset per repeat, shared across the alpha/lambda axes.
    std::vector<TrajectoryDataset> datasets;
    std::vector<std::uint64_t> repeat_seeds;
    datasets.reserve(config.repeats);
    for (int r = 0; r < config.repeats; ++r) {
        const std::uint64_t s =
            derive_seed(derive_seed(config.master_seed, config.dataset.seed), r);
        repeat_seeds.push_back(s);
        datasets.push_back(dataset_recipe(mdp, config.dataset.quality,
                                          config.dataset.episodes, s,
                                          config.dataset.horizon));
    }

    ScoreRef ref;
    if (config.score_ref) {
        ref = *config.score_ref;
    } else {
        ref.ref_min = expected_return(
            mdp, TabularPolicy::uniform(mdp.num_states, mdp.num_actions));
        ref.ref_max = expected_return(mdp, value_iteration(mdp, 1e-12).second);
        if (!(ref.ref_max > ref.ref_min)) ref.ref_max = ref.ref_min + 1.0;
    }

    std::vector<CellKey> cells;
    for (double alpha : config.alpha_grid)
        for (double lambda : config.lambda_grid)
            for (int r = 0; r < config.repeats; ++r) cells.push_back({alpha, lambda, r});

    std::vector<CellResult> results(cells.size());
    std::vector<TrainTrace> traces(cells.size());
    std::vector<std::string> errors(cells.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const CellKey& key = cells[i];
            try {
                CpqlConfig cfg = config.train;
                cfg.alpha = key.alpha;
                cfg.lambda = key.lambda;
                cfg.seed = derive_seed(config.master_seed, i);
                const TrajectoryDataset& ds = datasets[key.repeat];
                const double deploy_lambda =
                    config.op == OperatorKind::Cpql ? key.lambda : 0.0;

                CellResult cell;
                cell.op = operator_name(config.op);
                cell.alpha = key.alpha;
                cell.lambda = key.lambda;
                cell.seed = repeat_seeds[key.repeat];

                if (config.method == TrainMethod::Exact) {
                    const EmpiricalModel emp =
                        build_empirical_model(ds, mdp.num_states, mdp.num_actions);
                    auto [res, trace] =
                        run_operator_cell(emp, config.op, cfg, mdp, deploy_lambda);
                    const TabularPolicy deployed = mixture_policy(
                        emp.behavior_policy(), res.policy, deploy_lambda);
                    cell.j_eval = expected_return(mdp, deployed);
                    double sum = 0.0;
                    int cnt = 0;
                    for (int s = 0; s < mdp.num_states; ++s)
                        for (int a = 0; a < mdp.num_actions; ++a)
                            if (emp.pair_observed(s, a)) {
                                sum += res.q.values(s, a);
                                ++cnt;
                            }
                    cell.avg_q = cnt ? sum / cnt : 0.0;
                    traces[i] = std::move(trace);
                } else {
                    TrainTrace trace = cpql_sgd_train(ds, cfg, &mdp);
                    const TabularPolicy deployed = mixture_policy(
                        build_empirical_model(ds, mdp.num_states, mdp.num_actions)
                            .behavior_policy(),
                        trace.policy_final, deploy_lambda);
                    cell.j_eval = expected_return(mdp, deployed);
                    cell.avg_q = trace.records.empty() ? 0.0 : trace.records.back().avg_q;
                    traces[i] = std::move(trace);
                }
                cell.score = normalized_score(cell.j_eval, ref);
                results[i] = std::move(cell);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };

    int n_threads = threads > 0 ? threads
                                : static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::max(1, std::min<int>(n_threads, static_cast<int>(cells.size())));
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    bool any_error = false;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!errors[i].empty()) any_error = true;
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        json arr = json::array();
        for (std::size_t i = 0; i < results.size(); ++i) {
            char name[128];
            std::snprintf(name, sizeof(name), "trace_%s_a%g_l%g_r%d.csv",
                          results[i].op.c_str(), results[i].alpha, results[i].lambda,
                          cells[i].repeat);
            results[i].trace_path = name;
            write_text_file(out_dir + "/" + name, traces[i].to_csv());
            json row = results[i].to_json();
            if (!errors[i].empty()) row["error"] = errors[i];
            arr.push_back(row);
        }
        write_text_file(out_dir + "/results.json", arr.dump(2) + "\n");
        json manifest{{"tool", kToolVersion},
                      {"config", config.to_json()},
                      {"cells", results.size()},
                      {"files", json::array({"results.json", "plot.gp"})}};
        write_text_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
        std::ostringstream gp;
        gp << "set datafile separator ','\n"
           << "set key outside\n"
           << "set xlabel 'iteration'\n"
           << "set ylabel 'avg Q'\n"
           << "plot \\\n";
        for (std::size_t i = 0; i < results.size(); ++i) {
            gp << "  '" << results[i].trace_path << "' using 1:4 with lines title '"
               << results[i].op << " a=" << results[i].alpha
               << " l=" << results[i].lambda << (i + 1 < results.size() ? "', \\\n" : "'\n");
        }
        write_text_file(out_dir + "/plot.gp", gp.str());
    }

    if (any_error) {
        std::string all;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (!errors[i].empty()) {
                all += "cell " + std::to_string(i) + ": " + errors[i] + "; ";
            }
        }
        throw std::runtime_error("sweep finished with cell errors: " + all);
    }
    return results;
}

}  // namespace cpql
