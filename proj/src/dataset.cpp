#include "cpql/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cpql {

std::int64_t TrajectoryDataset::total_steps() const {
    std::int64_t n = 0;
    for (const auto& ep : episodes) n += ep.length();
    return n;
}

void TrajectoryDataset::save(const std::string& path) const {
    std::ostringstream lines;
    for (const auto& ep : episodes) {
        json line{{"states", ep.states}, {"actions", ep.actions}, {"rewards", ep.rewards}};
        lines << line.dump() << "\n";
    }
    write_text_file(path, lines.str());
    json meta_json{{"mdp_sha256", meta.mdp_sha256},
                   {"policy_sha256", meta.policy_sha256},
                   {"seed", meta.seed},
                   {"horizon", meta.horizon},
                   {"gamma", meta.gamma}};
    write_text_file(path + ".meta.json", meta_json.dump(2) + "\n");
}

TrajectoryDataset TrajectoryDataset::load(const std::string& path) {
    TrajectoryDataset ds;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::string line;
    double max_abs_r = 0.0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        Episode ep;
        ep.states = j.at("states").get<std::vector<int>>();
        ep.actions = j.at("actions").get<std::vector<int>>();
        ep.rewards = j.at("rewards").get<std::vector<double>>();
        if (ep.states.size() != ep.actions.size() + 1 ||
            ep.actions.size() != ep.rewards.size() || ep.actions.empty()) {
            throw std::runtime_error("dataset episode with inconsistent lengths: " + path);
        }
        for (double rr : ep.rewards) max_abs_r = std::max(max_abs_r, std::abs(rr));
        ds.episodes.push_back(std::move(ep));
    }
    const json meta = load_json_file(path + ".meta.json");
    ds.meta.mdp_sha256 = meta.at("mdp_sha256").get<std::string>();
    ds.meta.policy_sha256 = meta.at("policy_sha256").get<std::string>();
    ds.meta.seed = meta.at("seed").get<std::uint64_t>();
    ds.meta.horizon = meta.at("horizon").get<int>();
    ds.meta.gamma = meta.at("gamma").get<double>();
    ds.meta.r_max = max_abs_r;
    return ds;
}

TrajectoryDataset collect_trajectories(const FiniteMdp& mdp, const TabularPolicy& pi_beta,
                                       int num_episodes, int horizon, std::uint64_t seed) {
    if (horizon < 1) throw std::invalid_argument("collect_trajectories: horizon must be >= 1");
    if (num_episodes < 0) throw std::invalid_argument("collect_trajectories: negative episode count");
    mdp.validate();
    pi_beta.validate();

    TrajectoryDataset ds;
    ds.meta.mdp_sha256 = mdp.sha256();
    ds.meta.policy_sha256 = pi_beta.sha256();
    ds.meta.seed = seed;
    ds.meta.horizon = horizon;
    ds.meta.gamma = mdp.gamma;
    ds.meta.r_max = mdp.r_max;

    Rng rng(seed);
    ds.episodes.reserve(num_episodes);
    for (int e = 0; e < num_episodes; ++e) {
        Episode ep;
        int s = rng.categorical(mdp.d0);
        ep.states.push_back(s);
        for (int t = 0; t < horizon; ++t) {
            const int a = rng.categorical(pi_beta.probs.row(s).transpose());
            ep.actions.push_back(a);
            ep.rewards.push_back(mdp.r(s, a));
            s = rng.categorical(mdp.P[a].row(s).transpose());
            ep.states.push_back(s);
        }
        ds.episodes.push_back(std::move(ep));
    }
    return ds;
}

EmpiricalModel build_empirical_model(const TrajectoryDataset& ds, int num_states,
                                     int num_actions) {
    if (ds.empty()) throw std::invalid_argument("build_empirical_model: empty dataset");
    EmpiricalModel m;
    m.num_states = num_states;
    m.num_actions = num_actions;
    m.gamma = ds.meta.gamma;
    m.r_max = ds.meta.r_max;
    m.counts = Eigen::MatrixXi::Zero(num_states, num_actions);
    m.state_visits = Eigen::VectorXi::Zero(num_states);
    m.pi_beta_hat = Eigen::MatrixXd::Zero(num_states, num_actions);
    m.P_hat.assign(num_actions, Eigen::MatrixXd::Zero(num_states, num_states));
    m.r_hat = Eigen::MatrixXd::Zero(num_states, num_actions);
    m.state_in_data.assign(num_states, 0);
    m.state_has_action.assign(num_states, 0);

    std::vector<Eigen::MatrixXi> next_counts(num_actions,
                                             Eigen::MatrixXi::Zero(num_states, num_states));
    Eigen::MatrixXd reward_sums = Eigen::MatrixXd::Zero(num_states, num_actions);
    for (const auto& ep : ds.episodes) {
        for (int t = 0; t < ep.length(); ++t) {
            const int s = ep.states[t];
            const int a = ep.actions[t];
            const int s2 = ep.states[t + 1];
            if (s < 0 || s >= num_states || a < 0 || a >= num_actions || s2 < 0 ||
                s2 >= num_states) {
                throw std::invalid_argument("build_empirical_model: index out of range");
            }
            m.counts(s, a) += 1;
            m.state_visits[s] += 1;
            next_counts[a](s, s2) += 1;
            reward_sums(s, a) += ep.rewards[t];
            m.state_in_data[s] = 1;
            m.state_in_data[s2] = 1;
            m.state_has_action[s] = 1;
        }
    }

    for (int s = 0; s < num_states; ++s) {
        if (m.state_visits[s] > 0) {
            for (int a = 0; a < num_actions; ++a) {
                m.pi_beta_hat(s, a) = static_cast<double>(m.counts(s, a)) /
                                      static_cast<double>(m.state_visits[s]);
            }
        }
        for (int a = 0; a < num_actions; ++a) {
            if (m.counts(s, a) > 0) {
                const double n = m.counts(s, a);
                m.r_hat(s, a) = reward_sums(s, a) / n;
                for (int s2 = 0; s2 < num_states; ++s2) {
                    m.P_hat[a](s, s2) = next_counts[a](s, s2) / n;
                }
            }
        }
    }
    return m;
}

EmpiricalModel build_empirical_model(const TrajectoryDataset& ds) {
    int max_s = -1, max_a = -1;
    for (const auto& ep : ds.episodes) {
        for (int s : ep.states) max_s = std::max(max_s, s);
        for (int a : ep.actions) max_a = std::max(max_a, a);
    }
    return build_empirical_model(ds, max_s + 1, max_a + 1);
}

TabularPolicy EmpiricalModel::behavior_policy() const {
    TabularPolicy pi;
    pi.probs = pi_beta_hat;
    for (int s = 0; s < num_states; ++s) {
        if (!state_has_action[s]) {
            pi.probs.row(s).setConstant(1.0 / num_actions);
        }
    }
    pi.validate();
    return pi;
}

std::vector<Segment> sample_segments_rng(const std::vector<Episode>& episodes, int n,
                                         int batch, Rng& rng, bool allow_truncation) {
    if (n < 1) throw std::invalid_argument("sample_segments: n must be >= 1");
    if (batch < 0) throw std::invalid_argument("sample_segments: negative batch");
    // Valid start offsets per episode; full segments only when truncation is off.
    std::vector<std::int64_t> cum;
    cum.reserve(episodes.size() + 1);
    cum.push_back(0);
    for (const auto& ep : episodes) {
        const int len = ep.length();
        const int starts = allow_truncation ? len : std::max(0, len - n + 1);
        cum.push_back(cum.back() + starts);
    }
    if (cum.back() == 0) {
        throw std::invalid_argument(
            "sample_segments: no episode long enough and truncation disabled");
    }

    std::vector<Segment> out;
    out.reserve(batch);
    for (int b = 0; b < batch; ++b) {
        const std::int64_t pos = rng.uniform_int64(cum.back());
        const auto it = std::upper_bound(cum.begin(), cum.end(), pos);
        const int e = static_cast<int>(it - cum.begin()) - 1;
        const int t0 = static_cast<int>(pos - cum[e]);
        const Episode& ep = episodes[e];
        const int len = std::min(n, ep.length() - t0);
        Segment seg;
        seg.truncated = len < n;
        seg.states.assign(ep.states.begin() + t0, ep.states.begin() + t0 + len + 1);
        seg.actions.assign(ep.actions.begin() + t0, ep.actions.begin() + t0 + len);
        seg.rewards.assign(ep.rewards.begin() + t0, ep.rewards.begin() + t0 + len);
        out.push_back(std::move(seg));
    }
    return out;
}

std::vector<Segment> sample_segments(const TrajectoryDataset& ds, int n, int batch,
                                     std::uint64_t seed, bool allow_truncation) {
    Rng rng(seed);
    return sample_segments_rng(ds.episodes, n, batch, rng, allow_truncation);
}

}  // namespace cpql
