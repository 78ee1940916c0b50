#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "cpql/dataset.hpp"
#include "cpql/mdp.hpp"

namespace cpql {

/// Raised when a policy puts mass where the behavior estimate has none.
class SupportViolationError : public std::runtime_error {
public:
    explicit SupportViolationError(const std::string& what)
        : std::runtime_error("support violation: " + what) {}
};

/// Non-owning view over either a complete MDP or an empirical estimate.
/// Empirical backups are defined on observed pairs; unobserved pairs map
/// to zero and are expected to carry no policy mass.
class BackupModel {
public:
    BackupModel(const FiniteMdp& mdp)  // NOLINT: implicit by design
        : mdp_(&mdp) {}
    BackupModel(const EmpiricalModel& emp)  // NOLINT: implicit by design
        : emp_(&emp) {}

    int num_states() const { return mdp_ ? mdp_->num_states : emp_->num_states; }
    int num_actions() const { return mdp_ ? mdp_->num_actions : emp_->num_actions; }
    double gamma() const { return mdp_ ? mdp_->gamma : emp_->gamma; }
    double r_max() const { return mdp_ ? mdp_->r_max : emp_->r_max; }
    bool is_empirical() const { return emp_ != nullptr; }
    const EmpiricalModel* empirical() const { return emp_; }
    const FiniteMdp* mdp() const { return mdp_; }

    double reward(int s, int a) const {
        return mdp_ ? mdp_->r(s, a) : emp_->r_hat(s, a);
    }
    bool observed(int s, int a) const { return mdp_ ? true : emp_->pair_observed(s, a); }
    /// Transition row P(.|s,a); zero row for unobserved empirical pairs.
    Eigen::VectorXd transition_row(int s, int a) const {
        return mdp_ ? mdp_->P[a].row(s).transpose() : emp_->P_hat[a].row(s).transpose();
    }

    /// State-action chain B^pi[(s,a),(s',a')] = P(s'|s,a) pi(a'|s'),
    /// flattened with index s*A+a. Rows of unobserved pairs are zero.
    Eigen::MatrixXd sa_chain(const TabularPolicy& pi) const;
    /// Chain with explicit per-(s',a') continuation weights w(s',a').
    Eigen::MatrixXd sa_chain_weighted(const Eigen::MatrixXd& weights) const;
    /// Rewards flattened to s*A+a; zero at unobserved pairs.
    Eigen::VectorXd reward_vector() const;

private:
    const FiniteMdp* mdp_ = nullptr;
    const EmpiricalModel* emp_ = nullptr;
};

inline Eigen::VectorXd flatten(const Eigen::MatrixXd& sa) {
    Eigen::MatrixXd t = sa.transpose();  // row-major (s,a) order
    return Eigen::Map<Eigen::VectorXd>(t.data(), t.size());
}

inline Eigen::MatrixXd unflatten(const Eigen::VectorXd& v, int S, int A) {
    Eigen::MatrixXd t = Eigen::Map<const Eigen::MatrixXd>(v.data(), A, S);
    return t.transpose();
}

/// One-step expected backup r + gamma P^pi Q.
QTable bellman_backup(const BackupModel& model, const TabularPolicy& pi, const QTable& q);

/// Multi-step backup in closed form:
/// (I - gamma*lambda*P^{pi_beta})^-1 (r + gamma*(1-lambda)*P^pi Q).
/// Requires lambda in [0,1); lambda = 0 collapses to bellman_backup(pi).
QTable pql_backup_closed_form(const BackupModel& model, const TabularPolicy& pi_beta,
                              const TabularPolicy& pi, double lambda, const QTable& q);

struct SeriesResult {
    QTable q;
    /// Bound on the truncation error against the closed form:
    /// lambda^n_max * (||q||_inf + r_max/(1-gamma)) * 2.
    double tail_bound = 0.0;
};

/// Truncated geometric mixture (1-lambda) sum_{n<=n_max} lambda^{n-1} (T^{pi_beta})^{n-1} T^pi Q.
SeriesResult pql_backup_series(const BackupModel& model, const TabularPolicy& pi_beta,
                               const TabularPolicy& pi, double lambda, const QTable& q,
                               int n_max);

/// Uncorrected n-step backup (T^{pi_beta})^{n-1} T^pi Q.
QTable nstep_backup(const BackupModel& model, const TabularPolicy& pi_beta,
                    const TabularPolicy& pi, int n, const QTable& q);

/// Expected trace-corrected backup Q + (I - gamma P^c)^-1 (T^pi Q - Q) with
/// continuation weight w(s,a) = lambda * min(pi_beta(a|s), pi(a|s)).
/// Throws SupportViolationError when pi has mass outside pi_beta's support.
QTable retrace_backup(const BackupModel& model, const TabularPolicy& pi_beta,
                      const TabularPolicy& pi, double lambda, const QTable& q);

/// Same form with continuation weight w(s,a) = lambda * pi(a|s).
QTable treebackup_backup(const BackupModel& model, const TabularPolicy& pi_beta,
                         const TabularPolicy& pi, double lambda, const QTable& q);

/// lambda T^{pi_beta} Q + (1-lambda) T^pi Q; lambda in [0,1].
QTable mixture_backup(const BackupModel& model, const TabularPolicy& pi_beta,
                      const TabularPolicy& pi, double lambda, const QTable& q);

/// A backup operator with precomputed matrices so repeated application
/// inside the fixed-point solver is cheap.
class BackupOperator {
public:
    enum class Kind { Bellman, BellmanOptimal, Pql, NStep, Retrace, TreeBackup, Mixture };

    static BackupOperator bellman(const BackupModel& m, TabularPolicy pi);
    static BackupOperator bellman_optimal(const BackupModel& m);
    static BackupOperator pql(const BackupModel& m, TabularPolicy pi_beta, TabularPolicy pi,
                              double lambda);
    static BackupOperator nstep(const BackupModel& m, TabularPolicy pi_beta, TabularPolicy pi,
                                int n);
    static BackupOperator retrace(const BackupModel& m, TabularPolicy pi_beta,
                                  TabularPolicy pi, double lambda);
    static BackupOperator treebackup(const BackupModel& m, TabularPolicy pi_beta,
                                     TabularPolicy pi, double lambda);
    static BackupOperator mixture(const BackupModel& m, TabularPolicy pi_beta,
                                  TabularPolicy pi, double lambda);

    QTable apply(const QTable& q) const;
    Kind kind() const { return kind_; }
    /// Contraction modulus used by the stopping rule:
    /// gamma*(1-lambda)/(1-gamma*lambda) for the Pql kind, gamma otherwise.
    double modulus() const;
    /// Exact fixed point: direct solve for affine kinds, greedy policy
    /// evaluation for the optimality backup (polished from `hint`).
    QTable exact_fixed_point(const QTable& hint) const;

    int num_states() const { return S_; }
    int num_actions() const { return A_; }

private:
    BackupOperator(const BackupModel& m, Kind k);

    BackupModel model_;
    Kind kind_;
    int S_ = 0, A_ = 0;
    double gamma_ = 0.0;
    double lambda_ = 0.0;
    int n_ = 1;
    TabularPolicy pi_beta_, pi_;
    // Affine kinds: apply(q) = linear_ * vec(q) + offset_.
    bool affine_ = false;
    Eigen::MatrixXd linear_;
    Eigen::VectorXd offset_;
};

/// Per-iteration error trace of a fixed-point iteration. Errors are
/// measured against the exact fixed point recovered by one direct solve
/// after the iteration ends; q_final stays the raw final iterate.
struct FixedPointTrace {
    QTable q_final;
    std::vector<double> errors;  // ||Q_k - Q_fp||_inf, k = 0..iterations
    int iterations = 0;
    bool converged = false;
};

/// Iterates op from q0 until ||Q_{k+1} - Q_k||_inf <= tol*(1-m)/m (m the
/// modulus) or max_iter. Non-convergence is reported via the flag.
FixedPointTrace solve_fixed_point(const BackupOperator& op, const QTable& q0, double tol,
                                  int max_iter);

}  // namespace cpql
