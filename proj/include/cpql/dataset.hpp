#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpql/mdp.hpp"
#include "cpql/rng.hpp"

namespace cpql {

/// One rollout: states s_0..s_T, actions a_0..a_{T-1}, rewards r_0..r_{T-1}.
struct Episode {
    std::vector<int> states;
    std::vector<int> actions;
    std::vector<double> rewards;

    int length() const { return static_cast<int>(actions.size()); }
};

struct DatasetMeta {
    std::string mdp_sha256;
    std::string policy_sha256;
    std::uint64_t seed = 0;
    int horizon = 0;
    double gamma = 0.0;
    // Carried in memory only; the meta file holds the five fields above.
    // Loaders fall back to max|r| observed in the data.
    double r_max = 0.0;
};

/// Offline dataset: episodes collected by a behavior policy.
struct TrajectoryDataset {
    std::vector<Episode> episodes;
    DatasetMeta meta;

    std::int64_t total_steps() const;
    bool empty() const { return episodes.empty(); }

    /// JSON Lines, one episode per line:
    ///   {"states":[...],"actions":[...],"rewards":[...]}
    /// plus <path>.meta.json with
    ///   {"mdp_sha256","policy_sha256","seed","horizon","gamma"}.
    void save(const std::string& path) const;
    static TrajectoryDataset load(const std::string& path);
};

/// Contiguous slice of one episode.
struct Segment {
    std::vector<int> states;     // length n+1
    std::vector<int> actions;    // length n
    std::vector<double> rewards; // length n
    bool truncated = false;      // cut short by the episode end

    int length() const { return static_cast<int>(actions.size()); }
};

/// Maximum-likelihood model estimated from a dataset: counts, empirical
/// behavior policy, empirical transitions and rewards.
struct EmpiricalModel {
    int num_states = 0;
    int num_actions = 0;
    double gamma = 0.0;
    double r_max = 0.0;
    Eigen::MatrixXi counts;            // N(s,a)
    Eigen::VectorXi state_visits;      // N(s), action-taking visits
    Eigen::MatrixXd pi_beta_hat;       // count ratios; zero rows where N(s)=0
    std::vector<Eigen::MatrixXd> P_hat;
    Eigen::MatrixXd r_hat;
    std::vector<char> state_in_data;   // s appeared anywhere in the data
    std::vector<char> state_has_action;// some action was taken at s

    bool pair_observed(int s, int a) const { return counts(s, a) > 0; }

    /// Behavior-policy estimate as a validated policy. Rows at states with
    /// no recorded action fall back to uniform (flagged via state_has_action).
    TabularPolicy behavior_policy() const;
};

/// Rolls out `num_episodes` episodes of fixed `horizon` steps.
/// Deterministic given the seed; starts from d0, acts by pi_beta.
TrajectoryDataset collect_trajectories(const FiniteMdp& mdp, const TabularPolicy& pi_beta,
                                       int num_episodes, int horizon, std::uint64_t seed);

/// Count-ratio estimates; no smoothing. Throws std::invalid_argument on an
/// empty dataset.
EmpiricalModel build_empirical_model(const TrajectoryDataset& ds, int num_states,
                                     int num_actions);

/// Convenience overload that sizes the model from the data itself.
EmpiricalModel build_empirical_model(const TrajectoryDataset& ds);

/// Draws `batch` segments of target length n, start positions uniform over
/// all valid (episode, offset) pairs; never crosses episode boundaries.
/// When allow_truncation, offsets near an episode end yield shorter
/// segments (flagged); otherwise such offsets are excluded and an error is
/// raised if no episode has length >= n.
std::vector<Segment> sample_segments(const TrajectoryDataset& ds, int n, int batch,
                                     std::uint64_t seed, bool allow_truncation = true);

/// Same draw routine on an externally owned RNG stream.
std::vector<Segment> sample_segments_rng(const std::vector<Episode>& episodes, int n,
                                         int batch, Rng& rng, bool allow_truncation = true);

}  // namespace cpql
