#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cpql/util.hpp"

namespace cpql {

/// Row-stochastic validation tolerance used at construction time.
/// Rows that fail are rejected, never renormalized.
inline constexpr double kStochasticTol = 1e-9;

/// Row-stochastic state -> action distribution table.
struct TabularPolicy {
    Eigen::MatrixXd probs;  // S x A

    int num_states() const { return static_cast<int>(probs.rows()); }
    int num_actions() const { return static_cast<int>(probs.cols()); }

    /// Throws std::invalid_argument on negative entries or rows off by
    /// more than kStochasticTol from summing to 1.
    void validate() const;

    static TabularPolicy uniform(int num_states, int num_actions);
    /// One action per state, all mass on actions[s].
    static TabularPolicy deterministic(const std::vector<int>& actions, int num_actions);

    json to_json() const;
    static TabularPolicy from_json(const json& j);
    std::string sha256() const { return sha256_hex(to_json().dump()); }
};

/// Dense action-value table.
struct QTable {
    Eigen::MatrixXd values;  // S x A

    int num_states() const { return static_cast<int>(values.rows()); }
    int num_actions() const { return static_cast<int>(values.cols()); }
    static QTable zeros(int num_states, int num_actions) {
        return QTable{Eigen::MatrixXd::Zero(num_states, num_actions)};
    }
};

/// Dense state-value table.
struct VTable {
    Eigen::VectorXd values;  // S
};

/// Discounted visitation distribution over states (and state-action pairs).
struct VisitDist {
    Eigen::VectorXd state_probs;          // S, sums to 1
    Eigen::MatrixXd state_action_probs;   // S x A, sums to 1
};

/// Complete known finite MDP: transitions, rewards, discount, start
/// distribution, and a declared reward bound.
struct FiniteMdp {
    int num_states = 0;
    int num_actions = 0;
    double gamma = 0.0;
    double r_max = 0.0;
    std::vector<Eigen::MatrixXd> P;  // per action: S x S, row s = P(.|s,a)
    Eigen::MatrixXd r;               // S x A
    Eigen::VectorXd d0;              // S

    /// Checks stochasticity of every transition row and of d0, the
    /// discount range, and |r| <= r_max. Throws std::invalid_argument.
    void validate() const;

    /// Serialization schema:
    /// {"S":int,"A":int,"gamma":f,"r_max":f,"d0":[...],"r":[[...]],"P":[[[...]]]}
    /// with P indexed [s][a][s'] and r indexed [s][a].
    json to_json() const;
    static FiniteMdp from_json(const json& j);  // validates on load
    std::string sha256() const { return sha256_hex(to_json().dump()); }
};

enum class TieBreak { LowestIndex, UniformOverTies };

/// State-to-state chain of a policy: P_pi(s,s') = sum_a pi(a|s) P(s'|s,a).
Eigen::MatrixXd policy_transition(const FiniteMdp& mdp, const TabularPolicy& pi);

/// Expected immediate reward per state under a policy.
Eigen::VectorXd policy_reward(const FiniteMdp& mdp, const TabularPolicy& pi);

/// Exact solution of Q = r + gamma P^pi Q by direct linear solve.
/// Post: residual <= 1e-9 (asserted internally).
QTable policy_evaluation_exact(const FiniteMdp& mdp, const TabularPolicy& pi);

/// V(s) = sum_a pi(a|s) Q(s,a).
VTable state_values(const QTable& q, const TabularPolicy& pi);

/// Iterates the optimality backup until the sup-norm residual is <= tol.
/// Throws std::runtime_error when max_iter is hit first (tol too tight
/// for gamma near 1).
std::pair<QTable, TabularPolicy> value_iteration(const FiniteMdp& mdp, double tol,
                                                 int max_iter = 1000000);

/// Deterministic policy on the per-row argmax set. Ties are resolved by
/// the rule; argmax membership uses exact comparison.
TabularPolicy greedy_policy(const QTable& q, TieBreak tie_break = TieBreak::LowestIndex);

/// Row-wise convex combination lambda*pi_beta + (1-lambda)*pi.
TabularPolicy mixture_policy(const TabularPolicy& pi_beta, const TabularPolicy& pi,
                             double lambda);

/// d(s) = (1-gamma) * [(I - gamma P_pi^T)^-1 d0](s); the state-action
/// marginal is d(s) * pi(a|s).
VisitDist visitation_distribution(const FiniteMdp& mdp, const TabularPolicy& pi);

/// J(pi) = E_{d0}[V^pi]. Also verifies the occupancy identity
/// J = E_{d^pi}[r]/(1-gamma) to 1e-8 and throws std::logic_error if it fails.
double expected_return(const FiniteMdp& mdp, const TabularPolicy& pi);

/// Per-state total variation distance (1/2) sum_a |pi1 - pi2|.
Eigen::VectorXd total_variation(const TabularPolicy& pi1, const TabularPolicy& pi2);

}  // namespace cpql
