#pragma once

#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "cpql/cpql.hpp"

namespace cpql {

enum class Exploration { EpsilonGreedy, Softmax };

struct O2oConfig {
    CpqlConfig offline;
    int online_steps = 1000;
    Exploration exploration = Exploration::EpsilonGreedy;
    double epsilon = 0.1;
    double exploration_temperature = 1.0;
    int replay_capacity = 256;   // episodes
    int online_segment_len = 5;
    int eval_every = 10;
    std::uint64_t seed = 0;
    bool retain_offline_data = false;  // keep offline episodes in the replay
    int online_horizon = 0;            // 0: reuse the dataset horizon

    void validate() const;
};

enum class Phase { Offline, Online };

struct O2oRecord {
    Phase phase = Phase::Offline;
    int step = 0;
    double avg_q = 0.0;  // fixed probe batch, comparable across phases/arms
    double j_eval = std::numeric_limits<double>::quiet_NaN();
    int episodes_completed = 0;
};

enum class EpisodeSource { Offline, Online };

struct O2oTrace {
    std::vector<O2oRecord> records;
    int transition_index = -1;  // record taken at the phase boundary,
                                // before any online update
    QTable q_final;
    TabularPolicy policy_final;
    std::vector<EpisodeSource> replay_provenance;  // final replay contents

    /// CSV with header phase,step,avg_q,j_eval.
    std::string to_csv() const;
};

/// Phase 1: stochastic conservative training on the dataset. Phase 2:
/// the same tables continue as a plain multi-step learner (alpha = 0)
/// acting in the true environment with an exploration wrapper over the
/// greedy policy, replaying its own episodes. The probe batch for avg_q
/// is drawn once at the start, so the boundary records agree bit-for-bit.
O2oTrace run_offline_to_online(const FiniteMdp& mdp, const TrajectoryDataset& ds,
                               const O2oConfig& cfg);

enum class TransitionBaseline { CqlToQlearning, CpqlToPql };

/// Runs the configured arm next to a single-step arm (lambda = 0 offline,
/// one-step online updates) with matched seeds; returns (main, baseline).
std::pair<O2oTrace, O2oTrace> compare_transition_baselines(const FiniteMdp& mdp,
                                                           const TrajectoryDataset& ds,
                                                           const O2oConfig& cfg,
                                                           TransitionBaseline baseline);

}  // namespace cpql
