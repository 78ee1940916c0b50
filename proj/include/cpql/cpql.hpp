#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cpql/operators.hpp"

namespace cpql {

enum class Improvement { Greedy, Softmax, PenalizedHillClimb };

struct CpqlConfig {
    double alpha = 1.0;     // conservatism weight, >= 0
    double lambda = 0.0;    // trace parameter, [0,1)
    int segment_len = 5;    // n, sampled partial-trajectory length
    int batch = 256;
    double lr = 0.1;        // tabular step size
    double tau = 5e-3;      // target soft-update rate
    int iters = 1000;
    Improvement improvement = Improvement::Softmax;
    double softmax_temperature = 0.01;
    bool twin_tables = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainRecord {
    int iter = 0;
    double td_loss = 0.0;
    double penalty = 0.0;
    double avg_q = 0.0;
    double j_eval = std::numeric_limits<double>::quiet_NaN();
};

struct TrainTrace {
    std::vector<TrainRecord> records;
    QTable q_final;
    std::optional<QTable> q_final_twin;
    TabularPolicy policy_final;

    /// CSV with header iter,td_loss,penalty,avg_q,j_eval.
    std::string to_csv() const;
};

/// Ratio penalty pi(a|s)/pi_beta_hat(a|s) - 1 at one pair (alpha applied by
/// the caller). Throws SupportViolationError when pi_beta_hat(a|s) = 0 and
/// pi(a|s) > 0; a pair outside both supports contributes 0.
double conservative_ratio_penalty(const TabularPolicy& pi, const TabularPolicy& pi_beta_hat,
                                  int s, int a);

/// Penalty table over all pairs (same conventions per pair).
Eigen::MatrixXd ratio_penalty_table(const TabularPolicy& pi, const TabularPolicy& pi_beta_hat);

/// Per-state expectation E_{a~pi}[pi/pi_beta_hat - 1]; zero-pi terms drop out.
Eigen::VectorXd expected_ratio_penalty(const TabularPolicy& pi,
                                       const TabularPolicy& pi_beta_hat);

/// Fixed point of the penalized multi-step recursion for a frozen policy:
/// Q = (I - g*l*P^{pi_beta})^-1 (r + g*(1-l) P^pi Q) - alpha * penalty.
/// Solved directly; the residual of one more penalized application is
/// checked to 1e-8.
QTable cpql_penalized_evaluation(const BackupModel& model, const TabularPolicy& pi_beta_hat,
                                 const TabularPolicy& pi, double lambda, double alpha);

struct ExactIterResult {
    QTable q;
    TabularPolicy policy;
    TrainTrace trace;
};

/// Alternates penalized multi-step backups with policy improvement.
/// For Improvement::PenalizedHillClimb the policy starts at pi_beta_hat and
/// each accepted step does not decrease the penalized objective
/// E_{d0}[V_hat^mix]; the improvement is an exact per-state quadratic
/// ascent step, so the sequence converges to the objective's maximizer.
/// The returned Q is re-solved for the final policy, so its penalized
/// fixed-point residual is at direct-solver precision.
ExactIterResult cpql_exact_iterate(const BackupModel& model, const TabularPolicy& pi_beta_hat,
                                   const CpqlConfig& cfg,
                                   const FiniteMdp* eval_mdp = nullptr);

/// One exact improvement step of the penalized objective: per state,
/// maximize sum_a p_a w_a - alpha * sum_a p_a^2 / pi_beta_hat(a|s) over the
/// simplex restricted to pi_beta_hat's support (all actions when alpha = 0).
TabularPolicy penalized_improvement_step(const BackupModel& model,
                                         const TabularPolicy& pi_beta_hat,
                                         const TabularPolicy& pi, double lambda,
                                         double alpha);

/// E_{d0}[V_hat^mix(pi)] on the model; the hill-climb's objective.
double penalized_objective(const BackupModel& model, const TabularPolicy& pi_beta_hat,
                           const TabularPolicy& pi, double lambda, double alpha);

/// Greedy or softmax improvement over a value table. On empirical models
/// candidate actions are restricted to observed pairs; states without any
/// observed action keep the behavior-estimate row.
TabularPolicy improve_policy(const BackupModel& model, const TabularPolicy& pi_beta_hat,
                             const QTable& q, Improvement mode, double temperature);

/// Backward recursion over one segment producing per-step targets
/// y_i, i = 0..n-1. Boundary value E_{a~pi} q(s_n, a); with two target
/// tables the recursion runs per table and targets combine by pointwise min.
std::vector<double> lambda_return_targets(const Segment& segment,
                                          std::span<const QTable> q_targets,
                                          const TabularPolicy& pi, double lambda,
                                          double gamma);

/// Stochastic tabular trainer: per step, sample segments, build multi-step
/// targets from the target tables, take one gradient step on the squared
/// TD error at (s_0,a_0) plus the log-sum-exp conservatism term at sampled
/// states, then soft-update the target tables and improve the policy.
TrainTrace cpql_sgd_train(const TrajectoryDataset& ds, const CpqlConfig& cfg,
                          const FiniteMdp* eval_mdp = nullptr);

/// Smallest conservatism weight that prevents overestimation under given
/// concentration constants:
///   [c_r + g*c_p*r_max/(1-g)] / [(1-g*l)(1-l)(1-g)]
///     * max_{observed (s,a)} N(s,a)^{-1/2}
///     * max_{s observed} (E_pi[ratio - 1])^{-1}.
/// Returns +infinity when pi matches the behavior estimate at some state.
double alpha_threshold(const EmpiricalModel& model, const TabularPolicy& pi, double lambda,
                       double c_r, double c_p, double gamma, double r_max);

/// Owns the stochastic trainer state (tables, target tables, policy, RNG)
/// so that a run can continue across phases. Single-threaded; one instance
/// per training run.
class SgdTrainer {
public:
    SgdTrainer(int num_states, int num_actions, double gamma, TabularPolicy pi_beta_hat,
               const CpqlConfig& cfg);

    Rng& rng() { return rng_; }
    const TabularPolicy& policy() const { return policy_; }
    const TabularPolicy& behavior_estimate() const { return pi_beta_hat_; }

    /// Pointwise minimum over the live tables.
    QTable combined() const;
    QTable table(int j) const { return QTable{q_.at(j)}; }
    int table_count() const { return static_cast<int>(q_.size()); }
    TabularPolicy exploration_greedy() const { return greedy_policy(combined()); }
    double average_q(const std::vector<std::pair<int, int>>& probe) const;

    /// One gradient step on a segment batch. `alpha` scales the
    /// log-sum-exp term (0 disables it); the trace parameter comes from
    /// the config. Fills td_loss/penalty (pre-update) and avg_q
    /// (post-update) of the returned record.
    TrainRecord step(const std::vector<Segment>& segments, double alpha);

private:
    void improve();

    int S_, A_;
    double gamma_;
    CpqlConfig cfg_;
    TabularPolicy pi_beta_hat_;
    TabularPolicy policy_;
    Rng rng_;
    std::vector<Eigen::MatrixXd> q_, target_;
};

}  // namespace cpql
