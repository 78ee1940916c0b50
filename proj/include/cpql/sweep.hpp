#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cpql/envs.hpp"
#include "cpql/o2o.hpp"
#include "cpql/theory.hpp"

namespace cpql {

/// Config-file error carrying the offending field name.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& field, const std::string& what)
        : std::runtime_error("config field '" + field + "': " + what), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

enum class OperatorKind { Cpql, Cql, NStep, Retrace, TreeBackup };

enum class TrainMethod { Exact, Sgd };

struct DatasetCfg {
    DatasetQuality quality = DatasetQuality::Medium;
    int episodes = 300;
    int horizon = 40;
    std::uint64_t seed = 0;
};

/// Grid-experiment description; see the README for the JSON schema.
struct ExperimentConfig {
    EnvSpec env;
    DatasetCfg dataset;
    CpqlConfig train;
    TrainMethod method = TrainMethod::Exact;
    OperatorKind op = OperatorKind::Cpql;
    std::vector<double> alpha_grid = {1.0};
    std::vector<double> lambda_grid = {0.0};
    std::optional<ScoreRef> score_ref;  // computed from the env when absent
    std::string output_dir = "out";
    std::uint64_t master_seed = 1;
    int repeats = 1;

    void validate() const;
    json to_json() const;
    static ExperimentConfig from_json(const json& j);
};

struct CellResult {
    std::string op;
    double alpha = 0.0;
    double lambda = 0.0;
    std::uint64_t seed = 0;  // repeat stream seed
    double j_eval = 0.0;
    double avg_q = 0.0;
    double score = 0.0;
    std::string trace_path;

    json to_json() const;
};

/// Executes every (alpha, lambda, repeat) cell of the grid. Per-repeat
/// datasets are shared across the alpha/lambda axes so spreads compare
/// matched data; cell seeds derive from (master_seed, cell index). Results
/// come back sorted by cell key and are invariant to the worker count.
/// When out_dir is non-empty, per-cell trace CSVs, results.json, a
/// manifest and a gnuplot script are written there.
std::vector<CellResult> run_sweep(const ExperimentConfig& config, int threads = 0,
                                  const std::string& out_dir = "");

const char* operator_name(OperatorKind op);

}  // namespace cpql
