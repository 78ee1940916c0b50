#include "cpql/operators.hpp"

#include <cmath>

namespace cpql {

namespace {

void check_shapes(const BackupModel& m, const QTable& q) {
    if (q.num_states() != m.num_states() || q.num_actions() != m.num_actions()) {
        throw std::invalid_argument("backup: Q shape mismatch");
    }
}

void check_support(const TabularPolicy& pi_beta, const TabularPolicy& pi) {
    for (int s = 0; s < pi.num_states(); ++s) {
        for (int a = 0; a < pi.num_actions(); ++a) {
            if (pi.probs(s, a) > 0.0 && pi_beta.probs(s, a) == 0.0) {
                throw SupportViolationError("pi(a|s) > 0 with pi_beta(a|s) = 0 at s=" +
                                            std::to_string(s) + " a=" + std::to_string(a));
            }
        }
    }
}

}  // namespace

Eigen::MatrixXd BackupModel::sa_chain(const TabularPolicy& pi) const {
    const int S = num_states(), A = num_actions();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(S * A, S * A);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            if (!observed(s, a)) continue;
            const Eigen::VectorXd row = transition_row(s, a);
            for (int s2 = 0; s2 < S; ++s2) {
                if (row[s2] == 0.0) continue;
                for (int a2 = 0; a2 < A; ++a2) {
                    B(s * A + a, s2 * A + a2) = row[s2] * pi.probs(s2, a2);
                }
            }
        }
    }
    return B;
}

Eigen::MatrixXd BackupModel::sa_chain_weighted(const Eigen::MatrixXd& weights) const {
    const int S = num_states(), A = num_actions();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(S * A, S * A);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            if (!observed(s, a)) continue;
            const Eigen::VectorXd row = transition_row(s, a);
            for (int s2 = 0; s2 < S; ++s2) {
                if (row[s2] == 0.0) continue;
                for (int a2 = 0; a2 < A; ++a2) {
                    B(s * A + a, s2 * A + a2) = row[s2] * weights(s2, a2);
                }
            }
        }
    }
    return B;
}

Eigen::VectorXd BackupModel::reward_vector() const {
    const int S = num_states(), A = num_actions();
    Eigen::VectorXd r(S * A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) r[s * A + a] = observed(s, a) ? reward(s, a) : 0.0;
    return r;
}

QTable bellman_backup(const BackupModel& model, const TabularPolicy& pi, const QTable& q) {
    check_shapes(model, q);
    const int S = model.num_states(), A = model.num_actions();
    const Eigen::VectorXd v = (pi.probs.array() * q.values.array()).rowwise().sum();
    QTable out = QTable::zeros(S, A);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            if (!model.observed(s, a)) continue;
            out.values(s, a) =
                model.reward(s, a) + model.gamma() * model.transition_row(s, a).dot(v);
        }
    }
    return out;
}

QTable pql_backup_closed_form(const BackupModel& model, const TabularPolicy& pi_beta,
                              const TabularPolicy& pi, double lambda, const QTable& q) {
    if (lambda < 0.0 || lambda >= 1.0) {
        throw std::invalid_argument("pql backup: lambda must lie in [0,1)");
    }
    check_shapes(model, q);
    const int SA = model.num_states() * model.num_actions();
    const QTable one_step = bellman_backup(model, pi, q);
    const Eigen::VectorXd rhs =
        model.reward_vector() +
        (flatten(one_step.values) - model.reward_vector()) * (1.0 - lambda);
    // rhs = r + gamma (1-lambda) P^pi q, assembled from the one-step backup.
    const Eigen::MatrixXd A =
        Eigen::MatrixXd::Identity(SA, SA) -
        model.gamma() * lambda * model.sa_chain(pi_beta);
    const Eigen::VectorXd x = A.partialPivLu().solve(rhs);
    return QTable{unflatten(x, model.num_states(), model.num_actions())};
}

SeriesResult pql_backup_series(const BackupModel& model, const TabularPolicy& pi_beta,
                               const TabularPolicy& pi, double lambda, const QTable& q,
                               int n_max) {
    if (n_max < 1) throw std::invalid_argument("pql series: n_max must be >= 1");
    if (lambda < 0.0 || lambda >= 1.0) {
        throw std::invalid_argument("pql series: lambda must lie in [0,1)");
    }
    check_shapes(model, q);
    QTable term = bellman_backup(model, pi, q);  // T^pi q, the n = 1 term
    Eigen::MatrixXd acc = (1.0 - lambda) * term.values;
    double coef = 1.0 - lambda;
    for (int n = 2; n <= n_max; ++n) {
        term = bellman_backup(model, pi_beta, term);
        coef *= lambda;
        acc += coef * term.values;
    }
    SeriesResult res;
    res.q = QTable{acc};
    const double q_norm = q.values.array().abs().maxCoeff();
    res.tail_bound = std::pow(lambda, n_max) *
                     (q_norm + model.r_max() / (1.0 - model.gamma())) * 2.0;
    return res;
}

QTable nstep_backup(const BackupModel& model, const TabularPolicy& pi_beta,
                    const TabularPolicy& pi, int n, const QTable& q) {
    if (n < 1) throw std::invalid_argument("nstep backup: n must be >= 1");
    QTable out = bellman_backup(model, pi, q);
    for (int k = 1; k < n; ++k) out = bellman_backup(model, pi_beta, out);
    return out;
}

namespace {

QTable trace_corrected_backup(const BackupModel& model, const TabularPolicy& pi,
                              const Eigen::MatrixXd& weights, const QTable& q) {
    const int SA = model.num_states() * model.num_actions();
    const QTable one_step = bellman_backup(model, pi, q);
    const Eigen::VectorXd delta = flatten(one_step.values) - flatten(q.values);
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(SA, SA) -
                              model.gamma() * model.sa_chain_weighted(weights);
    const Eigen::VectorXd corr = A.partialPivLu().solve(delta);
    return QTable{q.values + unflatten(corr, model.num_states(), model.num_actions())};
}

}  // namespace

QTable retrace_backup(const BackupModel& model, const TabularPolicy& pi_beta,
                      const TabularPolicy& pi, double lambda, const QTable& q) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw std::invalid_argument("retrace backup: lambda must lie in [0,1]");
    }
    check_shapes(model, q);
    check_support(pi_beta, pi);
    // pi_beta(a|s) * min(1, pi/pi_beta) = min(pi_beta, pi)
    const Eigen::MatrixXd w = lambda * pi_beta.probs.cwiseMin(pi.probs);
    return trace_corrected_backup(model, pi, w, q);
}

QTable treebackup_backup(const BackupModel& model, const TabularPolicy& pi_beta,
                         const TabularPolicy& pi, double lambda, const QTable& q) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw std::invalid_argument("tree-backup: lambda must lie in [0,1]");
    }
    (void)pi_beta;  // trace weight depends on the target policy only
    check_shapes(model, q);
    const Eigen::MatrixXd w = lambda * pi.probs;
    return trace_corrected_backup(model, pi, w, q);
}

QTable mixture_backup(const BackupModel& model, const TabularPolicy& pi_beta,
                      const TabularPolicy& pi, double lambda, const QTable& q) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw std::invalid_argument("mixture backup: lambda must lie in [0,1]");
    }
    const QTable tb = bellman_backup(model, pi_beta, q);
    const QTable tp = bellman_backup(model, pi, q);
    return QTable{lambda * tb.values + (1.0 - lambda) * tp.values};
}

BackupOperator::BackupOperator(const BackupModel& m, Kind k)
    : model_(m), kind_(k), S_(m.num_states()), A_(m.num_actions()), gamma_(m.gamma()) {}

BackupOperator BackupOperator::bellman(const BackupModel& m, TabularPolicy pi) {
    BackupOperator op(m, Kind::Bellman);
    op.pi_ = std::move(pi);
    op.affine_ = true;
    op.linear_ = m.gamma() * m.sa_chain(op.pi_);
    op.offset_ = m.reward_vector();
    return op;
}

BackupOperator BackupOperator::bellman_optimal(const BackupModel& m) {
    return BackupOperator(m, Kind::BellmanOptimal);
}

BackupOperator BackupOperator::pql(const BackupModel& m, TabularPolicy pi_beta,
                                   TabularPolicy pi, double lambda) {
    if (lambda < 0.0 || lambda >= 1.0) {
        throw std::invalid_argument("pql operator: lambda must lie in [0,1)");
    }
    BackupOperator op(m, Kind::Pql);
    op.pi_beta_ = std::move(pi_beta);
    op.pi_ = std::move(pi);
    op.lambda_ = lambda;
    const int SA = op.S_ * op.A_;
    const Eigen::MatrixXd resolvent =
        (Eigen::MatrixXd::Identity(SA, SA) - m.gamma() * lambda * m.sa_chain(op.pi_beta_))
            .partialPivLu()
            .inverse();
    op.affine_ = true;
    op.linear_ = resolvent * (m.gamma() * (1.0 - lambda) * m.sa_chain(op.pi_));
    op.offset_ = resolvent * m.reward_vector();
    return op;
}

BackupOperator BackupOperator::nstep(const BackupModel& m, TabularPolicy pi_beta,
                                     TabularPolicy pi, int n) {
    if (n < 1) throw std::invalid_argument("nstep operator: n must be >= 1");
    BackupOperator op(m, Kind::NStep);
    op.pi_beta_ = std::move(pi_beta);
    op.pi_ = std::move(pi);
    op.n_ = n;
    const Eigen::MatrixXd Bp = m.gamma() * m.sa_chain(op.pi_);
    const Eigen::MatrixXd Bb = m.gamma() * m.sa_chain(op.pi_beta_);
    const Eigen::VectorXd r = m.reward_vector();
    // (T^{pi_beta})^{n-1} T^pi composed into one affine map.
    Eigen::MatrixXd lin = Bp;
    Eigen::VectorXd off = r;
    for (int k = 1; k < n; ++k) {
        lin = Bb * lin;
        off = r + Bb * off;
    }
    op.affine_ = true;
    op.linear_ = std::move(lin);
    op.offset_ = std::move(off);
    return op;
}

namespace {

std::pair<Eigen::MatrixXd, Eigen::VectorXd> trace_affine(const BackupModel& m,
                                                         const TabularPolicy& pi,
                                                         const Eigen::MatrixXd& weights) {
    const int SA = m.num_states() * m.num_actions();
    const Eigen::MatrixXd resolvent =
        (Eigen::MatrixXd::Identity(SA, SA) - m.gamma() * m.sa_chain_weighted(weights))
            .partialPivLu()
            .inverse();
    const Eigen::MatrixXd Bp = m.gamma() * m.sa_chain(pi);
    // Q + R(T^pi Q - Q) = R r + (I + R(Bp - I)) Q
    Eigen::MatrixXd lin =
        Eigen::MatrixXd::Identity(SA, SA) +
        resolvent * (Bp - Eigen::MatrixXd::Identity(SA, SA));
    Eigen::VectorXd off = resolvent * m.reward_vector();
    return {std::move(lin), std::move(off)};
}

}  // namespace

BackupOperator BackupOperator::retrace(const BackupModel& m, TabularPolicy pi_beta,
                                       TabularPolicy pi, double lambda) {
    check_support(pi_beta, pi);
    BackupOperator op(m, Kind::Retrace);
    op.pi_beta_ = std::move(pi_beta);
    op.pi_ = std::move(pi);
    op.lambda_ = lambda;
    const Eigen::MatrixXd w = lambda * op.pi_beta_.probs.cwiseMin(op.pi_.probs);
    auto [lin, off] = trace_affine(m, op.pi_, w);
    op.affine_ = true;
    op.linear_ = std::move(lin);
    op.offset_ = std::move(off);
    return op;
}

BackupOperator BackupOperator::treebackup(const BackupModel& m, TabularPolicy pi_beta,
                                          TabularPolicy pi, double lambda) {
    BackupOperator op(m, Kind::TreeBackup);
    op.pi_beta_ = std::move(pi_beta);
    op.pi_ = std::move(pi);
    op.lambda_ = lambda;
    const Eigen::MatrixXd w = lambda * op.pi_.probs;
    auto [lin, off] = trace_affine(m, op.pi_, w);
    op.affine_ = true;
    op.linear_ = std::move(lin);
    op.offset_ = std::move(off);
    return op;
}

BackupOperator BackupOperator::mixture(const BackupModel& m, TabularPolicy pi_beta,
                                       TabularPolicy pi, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw std::invalid_argument("mixture operator: lambda must lie in [0,1]");
    }
    BackupOperator op(m, Kind::Mixture);
    op.pi_beta_ = std::move(pi_beta);
    op.pi_ = std::move(pi);
    op.lambda_ = lambda;
    op.affine_ = true;
    op.linear_ = m.gamma() * (lambda * m.sa_chain(op.pi_beta_) +
                              (1.0 - lambda) * m.sa_chain(op.pi_));
    op.offset_ = m.reward_vector();
    return op;
}

QTable BackupOperator::apply(const QTable& q) const {
    if (affine_) {
        const Eigen::VectorXd x = linear_ * flatten(q.values) + offset_;
        return QTable{unflatten(x, S_, A_)};
    }
    // Optimality backup: r + gamma P max_a' Q.
    const Eigen::VectorXd v = q.values.rowwise().maxCoeff();
    QTable out = QTable::zeros(S_, A_);
    for (int s = 0; s < S_; ++s) {
        for (int a = 0; a < A_; ++a) {
            if (!model_.observed(s, a)) continue;
            out.values(s, a) =
                model_.reward(s, a) + gamma_ * model_.transition_row(s, a).dot(v);
        }
    }
    return out;
}

double BackupOperator::modulus() const {
    if (kind_ == Kind::Pql) {
        return gamma_ * (1.0 - lambda_) / (1.0 - gamma_ * lambda_);
    }
    return gamma_;
}

QTable BackupOperator::exact_fixed_point(const QTable& hint) const {
    if (affine_) {
        const int SA = S_ * A_;
        const Eigen::VectorXd x =
            (Eigen::MatrixXd::Identity(SA, SA) - linear_).partialPivLu().solve(offset_);
        return QTable{unflatten(x, S_, A_)};
    }
    // Optimality backup: evaluate the greedy policy of the hint.
    if (!model_.mdp()) {
        throw std::invalid_argument("exact_fixed_point: optimality backup needs a full MDP");
    }
    return policy_evaluation_exact(*model_.mdp(), greedy_policy(hint));
}

FixedPointTrace solve_fixed_point(const BackupOperator& op, const QTable& q0, double tol,
                                  int max_iter) {
    if (tol <= 0.0) throw std::invalid_argument("solve_fixed_point: tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("solve_fixed_point: max_iter must be >= 1");
    const double m = op.modulus();
    const double stop = m > 0.0 ? tol * (1.0 - m) / m
                                : std::numeric_limits<double>::infinity();

    std::vector<QTable> iterates;
    iterates.push_back(q0);
    FixedPointTrace trace;
    trace.converged = false;
    QTable q = q0;
    for (int k = 0; k < max_iter; ++k) {
        QTable next = op.apply(q);
        const double diff = (next.values - q.values).array().abs().maxCoeff();
        q = std::move(next);
        iterates.push_back(q);
        if (diff <= stop) {
            trace.converged = true;
            break;
        }
    }
    trace.iterations = static_cast<int>(iterates.size()) - 1;
    trace.q_final = q;

    const QTable reference = op.exact_fixed_point(q);
    trace.errors.reserve(iterates.size());
    for (const auto& it : iterates) {
        trace.errors.push_back((it.values - reference.values).array().abs().maxCoeff());
    }
    if (trace.converged && trace.errors.back() > tol) {
        // The stopping rule guarantees this for a true contraction; failing
        // it signals a modulus mismatch upstream.
        trace.converged = trace.errors.back() <= tol * 10.0;
    }
    return trace;
}

}  // namespace cpql
