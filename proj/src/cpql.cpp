#include "cpql/cpql.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cpql {

void CpqlConfig::validate() const {
    if (alpha < 0.0) throw std::invalid_argument("config: alpha must be >= 0");
    if (lambda < 0.0 || lambda >= 1.0) {
        throw std::invalid_argument("config: lambda must lie in [0,1)");
    }
    if (segment_len < 1) throw std::invalid_argument("config: segment_len must be >= 1");
    if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
    if (lr < 0.0) throw std::invalid_argument("config: lr must be >= 0");
    if (tau <= 0.0 || tau > 1.0) throw std::invalid_argument("config: tau must lie in (0,1]");
    if (iters < 0) throw std::invalid_argument("config: iters must be >= 0");
    if (softmax_temperature <= 0.0) {
        throw std::invalid_argument("config: softmax temperature must be positive");
    }
}

std::string TrainTrace::to_csv() const {
    std::ostringstream out;
    out << "iter,td_loss,penalty,avg_q,j_eval\n";
    for (const auto& r : records) {
        out << r.iter << ',' << format_double(r.td_loss) << ',' << format_double(r.penalty)
            << ',' << format_double(r.avg_q) << ',' << format_double(r.j_eval) << '\n';
    }
    return out.str();
}

double conservative_ratio_penalty(const TabularPolicy& pi, const TabularPolicy& pi_beta_hat,
                                  int s, int a) {
    const double b = pi_beta_hat.probs(s, a);
    const double p = pi.probs(s, a);
    if (b <= 0.0) {
        if (p > 0.0) {
            throw SupportViolationError("penalty queried at s=" + std::to_string(s) +
                                        " a=" + std::to_string(a));
        }
        return 0.0;  // outside both supports
    }
    return p / b - 1.0;
}

Eigen::MatrixXd ratio_penalty_table(const TabularPolicy& pi,
                                    const TabularPolicy& pi_beta_hat) {
    const int S = pi.num_states(), A = pi.num_actions();
    Eigen::MatrixXd pen(S, A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) pen(s, a) = conservative_ratio_penalty(pi, pi_beta_hat, s, a);
    return pen;
}

namespace {

Eigen::MatrixXd masked_penalty(const BackupModel& model, const TabularPolicy& pi,
                               const TabularPolicy& pi_beta_hat) {
    Eigen::MatrixXd pen = ratio_penalty_table(pi, pi_beta_hat);
    if (model.is_empirical()) {
        for (int s = 0; s < model.num_states(); ++s)
            for (int a = 0; a < model.num_actions(); ++a)
                if (!model.observed(s, a)) pen(s, a) = 0.0;
    }
    return pen;
}

}  // namespace

Eigen::VectorXd expected_ratio_penalty(const TabularPolicy& pi,
                                       const TabularPolicy& pi_beta_hat) {
    const int S = pi.num_states(), A = pi.num_actions();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(S);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            const double p = pi.probs(s, a);
            if (p <= 0.0) continue;
            const double b = pi_beta_hat.probs(s, a);
            if (b <= 0.0) {
                throw SupportViolationError("expected penalty at s=" + std::to_string(s));
            }
            g[s] += p * (p / b - 1.0);
        }
    }
    return g;
}

QTable cpql_penalized_evaluation(const BackupModel& model, const TabularPolicy& pi_beta_hat,
                                 const TabularPolicy& pi, double lambda, double alpha) {
    if (lambda < 0.0 || lambda >= 1.0) {
        throw std::invalid_argument("penalized evaluation: lambda must lie in [0,1)");
    }
    if (alpha < 0.0) throw std::invalid_argument("penalized evaluation: alpha must be >= 0");
    const int S = model.num_states(), A = model.num_actions();
    const int SA = S * A;
    const Eigen::MatrixXd pen = masked_penalty(model, pi, pi_beta_hat);
    const Eigen::MatrixXd resolvent =
        (Eigen::MatrixXd::Identity(SA, SA) -
         model.gamma() * lambda * model.sa_chain(pi_beta_hat))
            .partialPivLu()
            .inverse();
    const Eigen::MatrixXd M =
        Eigen::MatrixXd::Identity(SA, SA) -
        model.gamma() * (1.0 - lambda) * (resolvent * model.sa_chain(pi));
    const Eigen::VectorXd b =
        resolvent * model.reward_vector() - alpha * flatten(pen);
    QTable q{unflatten(M.partialPivLu().solve(b), S, A)};

    const QTable again = pql_backup_closed_form(model, pi_beta_hat, pi, lambda, q);
    const double resid =
        ((again.values - alpha * pen) - q.values).array().abs().maxCoeff();
    if (resid > 1e-8) {
        throw std::logic_error("penalized evaluation residual " + format_double(resid));
    }
    return q;
}

namespace {

Eigen::VectorXd default_d0(const BackupModel& model) {
    if (model.mdp()) return model.mdp()->d0;
    // Empirical models carry no start distribution; weigh the states where
    // actions were recorded uniformly.
    const auto* emp = model.empirical();
    Eigen::VectorXd d = Eigen::VectorXd::Zero(model.num_states());
    int n = 0;
    for (int s = 0; s < model.num_states(); ++s) n += emp->state_has_action[s] ? 1 : 0;
    if (n == 0) throw std::invalid_argument("empirical model has no action states");
    for (int s = 0; s < model.num_states(); ++s) {
        if (emp->state_has_action[s]) d[s] = 1.0 / n;
    }
    return d;
}

// Penalized state values of the mixture policy: solves
// (I - g P_mix) V = r_mix - alpha (1-lambda) E_pi[ratio - 1].
Eigen::VectorXd penalized_state_values(const BackupModel& model,
                                       const TabularPolicy& pi_beta_hat,
                                       const TabularPolicy& pi, double lambda,
                                       double alpha) {
    const int S = model.num_states(), A = model.num_actions();
    const TabularPolicy mix = mixture_policy(pi_beta_hat, pi, lambda);
    Eigen::MatrixXd P_mix = Eigen::MatrixXd::Zero(S, S);
    Eigen::VectorXd r_mix = Eigen::VectorXd::Zero(S);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            const double w = mix.probs(s, a);
            if (w == 0.0) continue;
            P_mix.row(s) += w * model.transition_row(s, a).transpose();
            r_mix[s] += w * model.reward(s, a);
        }
    }
    const Eigen::VectorXd g = expected_ratio_penalty(pi, pi_beta_hat);
    const Eigen::VectorXd rhs = r_mix - alpha * (1.0 - lambda) * g;
    const Eigen::MatrixXd A_sys =
        Eigen::MatrixXd::Identity(S, S) - model.gamma() * P_mix;
    return A_sys.partialPivLu().solve(rhs);
}

// Exact maximizer of sum_a p_a w_a - alpha sum_a p_a^2 / b_a over the
// simplex restricted to {b_a > 0}: water-filling on the KKT conditions.
Eigen::VectorXd simplex_quadratic_argmax(const Eigen::VectorXd& w, const Eigen::VectorXd& b,
                                         double alpha,
                                         const std::vector<int>& support) {
    const int A = static_cast<int>(w.size());
    Eigen::VectorXd p = Eigen::VectorXd::Zero(A);
    if (support.empty()) throw std::invalid_argument("improvement: empty action support");
    if (alpha <= 0.0) {
        int best = support[0];
        for (int a : support) {
            if (w[a] > w[best]) best = a;
        }
        p[best] = 1.0;
        return p;
    }
    std::vector<int> order = support;
    std::sort(order.begin(), order.end(), [&](int x, int y) {
        if (w[x] != w[y]) return w[x] > w[y];
        return x < y;
    });
    double sum_bw = 0.0, sum_b = 0.0;
    double nu = 0.0;
    int k_used = 0;
    for (int k = 0; k < static_cast<int>(order.size()); ++k) {
        sum_bw += b[order[k]] * w[order[k]];
        sum_b += b[order[k]];
        const double nu_k = (sum_bw - 2.0 * alpha) / sum_b;
        const bool upper_ok = w[order[k]] > nu_k;
        const bool lower_ok =
            (k + 1 == static_cast<int>(order.size())) || nu_k >= w[order[k + 1]];
        if (upper_ok && lower_ok) {
            nu = nu_k;
            k_used = k + 1;
            break;
        }
        if (k + 1 == static_cast<int>(order.size())) {
            nu = nu_k;
            k_used = k + 1;
        }
    }
    double total = 0.0;
    for (int k = 0; k < k_used; ++k) {
        const int a = order[k];
        p[a] = std::max(0.0, b[a] * (w[a] - nu) / (2.0 * alpha));
        total += p[a];
    }
    p /= total;  // remove accumulated rounding; mass is 1 by construction
    return p;
}

std::vector<int> allowed_actions(const BackupModel& model, const TabularPolicy& pi_beta_hat,
                                 int s, bool need_behavior_support) {
    std::vector<int> out;
    for (int a = 0; a < model.num_actions(); ++a) {
        if (model.is_empirical() && !model.observed(s, a)) continue;
        if (need_behavior_support && pi_beta_hat.probs(s, a) <= 0.0) continue;
        out.push_back(a);
    }
    return out;
}

TabularPolicy improve_greedy(const BackupModel& model, const TabularPolicy& pi_beta_hat,
                             const QTable& q) {
    TabularPolicy pi;
    pi.probs = Eigen::MatrixXd::Zero(q.num_states(), q.num_actions());
    for (int s = 0; s < q.num_states(); ++s) {
        const auto allowed = allowed_actions(model, pi_beta_hat, s, false);
        if (allowed.empty()) {
            pi.probs.row(s) = pi_beta_hat.probs.row(s);
            continue;
        }
        int best = allowed[0];
        for (int a : allowed) {
            if (q.values(s, a) > q.values(s, best)) best = a;
        }
        pi.probs(s, best) = 1.0;
    }
    return pi;
}

TabularPolicy improve_softmax(const BackupModel& model, const TabularPolicy& pi_beta_hat,
                              const QTable& q, double temperature) {
    TabularPolicy pi;
    pi.probs = Eigen::MatrixXd::Zero(q.num_states(), q.num_actions());
    for (int s = 0; s < q.num_states(); ++s) {
        const auto allowed = allowed_actions(model, pi_beta_hat, s, false);
        if (allowed.empty()) {
            pi.probs.row(s) = pi_beta_hat.probs.row(s);
            continue;
        }
        double m = -std::numeric_limits<double>::infinity();
        for (int a : allowed) m = std::max(m, q.values(s, a));
        double z = 0.0;
        for (int a : allowed) {
            const double e = std::exp((q.values(s, a) - m) / temperature);
            pi.probs(s, a) = e;
            z += e;
        }
        pi.probs.row(s) /= z;
    }
    return pi;
}

}  // namespace

double penalized_objective(const BackupModel& model, const TabularPolicy& pi_beta_hat,
                           const TabularPolicy& pi, double lambda, double alpha) {
    const Eigen::VectorXd v =
        penalized_state_values(model, pi_beta_hat, pi, lambda, alpha);
    return default_d0(model).dot(v);
}

TabularPolicy improve_policy(const BackupModel& model, const TabularPolicy& pi_beta_hat,
                             const QTable& q, Improvement mode, double temperature) {
    switch (mode) {
        case Improvement::Greedy:
            return improve_greedy(model, pi_beta_hat, q);
        case Improvement::Softmax:
            return improve_softmax(model, pi_beta_hat, q, temperature);
        case Improvement::PenalizedHillClimb:
            break;
    }
    throw std::invalid_argument("improve_policy: mode must be greedy or softmax");
}

TabularPolicy penalized_improvement_step(const BackupModel& model,
                                         const TabularPolicy& pi_beta_hat,
                                         const TabularPolicy& pi, double lambda,
                                         double alpha) {
    const int S = model.num_states(), A = model.num_actions();
    const Eigen::VectorXd v =
        penalized_state_values(model, pi_beta_hat, pi, lambda, alpha);
    TabularPolicy next;
    next.probs = Eigen::MatrixXd::Zero(S, A);
    for (int s = 0; s < S; ++s) {
        const auto allowed = allowed_actions(model, pi_beta_hat, s, alpha > 0.0);
        if (allowed.empty()) {
            next.probs.row(s) = pi_beta_hat.probs.row(s);
            continue;
        }
        Eigen::VectorXd w(A);
        for (int a = 0; a < A; ++a) {
            w[a] = model.reward(s, a) + model.gamma() * model.transition_row(s, a).dot(v);
        }
        next.probs.row(s) = simplex_quadratic_argmax(
            w, pi_beta_hat.probs.row(s).transpose(), alpha, allowed);
    }
    return next;
}

ExactIterResult cpql_exact_iterate(const BackupModel& model, const TabularPolicy& pi_beta_hat,
                                   const CpqlConfig& cfg, const FiniteMdp* eval_mdp) {
    cfg.validate();
    const int S = model.num_states(), A = model.num_actions();

    ExactIterResult res;
    res.policy = pi_beta_hat;
    res.trace.records.reserve(cfg.iters);

    auto record = [&](int it, double td, const TabularPolicy& pol, const QTable& q) {
        TrainRecord rec;
        rec.iter = it;
        rec.td_loss = td;
        const Eigen::VectorXd g = expected_ratio_penalty(pol, pi_beta_hat);
        rec.penalty = cfg.alpha * g.mean();
        double sum = 0.0;
        int cnt = 0;
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a)
                if (model.observed(s, a)) {
                    sum += q.values(s, a);
                    ++cnt;
                }
        rec.avg_q = cnt > 0 ? sum / cnt : 0.0;
        if (eval_mdp) {
            rec.j_eval =
                expected_return(*eval_mdp, mixture_policy(pi_beta_hat, pol, cfg.lambda));
        }
        res.trace.records.push_back(rec);
    };

    if (cfg.improvement == Improvement::PenalizedHillClimb) {
        double obj = penalized_objective(model, pi_beta_hat, res.policy, cfg.lambda, cfg.alpha);
        QTable q = cpql_penalized_evaluation(model, pi_beta_hat, res.policy, cfg.lambda,
                                             cfg.alpha);
        record(0, 0.0, res.policy, q);
        for (int it = 1; it <= cfg.iters; ++it) {
            const TabularPolicy candidate = penalized_improvement_step(
                model, pi_beta_hat, res.policy, cfg.lambda, cfg.alpha);
            const double cand_obj =
                penalized_objective(model, pi_beta_hat, candidate, cfg.lambda, cfg.alpha);
            if (!(cand_obj >= obj - 1e-12 * (1.0 + std::abs(obj)))) break;
            const double gain = cand_obj - obj;
            res.policy = candidate;
            obj = std::max(obj, cand_obj);
            QTable next = cpql_penalized_evaluation(model, pi_beta_hat, res.policy,
                                                    cfg.lambda, cfg.alpha);
            const double td = (next.values - q.values).array().abs().maxCoeff();
            q = std::move(next);
            record(it, td, res.policy, q);
            if (gain <= 1e-12 * (1.0 + std::abs(obj))) break;
        }
        res.q = std::move(q);
    } else {
        QTable q = QTable::zeros(S, A);
        for (int it = 0; it < cfg.iters; ++it) {
            const Eigen::MatrixXd pen = masked_penalty(model, res.policy, pi_beta_hat);
            QTable next{
                pql_backup_closed_form(model, pi_beta_hat, res.policy, cfg.lambda, q).values -
                cfg.alpha * pen};
            const double td = (next.values - q.values).array().abs().maxCoeff();
            q = std::move(next);
            res.policy = cfg.improvement == Improvement::Greedy
                             ? improve_greedy(model, pi_beta_hat, q)
                             : improve_softmax(model, pi_beta_hat, q,
                                               cfg.softmax_temperature);
            record(it, td, res.policy, q);
        }
        res.q = cpql_penalized_evaluation(model, pi_beta_hat, res.policy, cfg.lambda,
                                          cfg.alpha);
    }
    res.trace.q_final = res.q;
    res.trace.policy_final = res.policy;
    return res;
}

std::vector<double> lambda_return_targets(const Segment& segment,
                                          std::span<const QTable> q_targets,
                                          const TabularPolicy& pi, double lambda,
                                          double gamma) {
    const int n = segment.length();
    if (n < 1) throw std::invalid_argument("lambda_return_targets: empty segment");
    if (q_targets.empty() || q_targets.size() > 2) {
        throw std::invalid_argument("lambda_return_targets: expected 1 or 2 target tables");
    }
    auto bootstrap = [&](const QTable& q, int state) {
        return pi.probs.row(state).dot(q.values.row(state));
    };
    std::vector<std::vector<double>> per_table(q_targets.size());
    for (std::size_t j = 0; j < q_targets.size(); ++j) {
        const QTable& q = q_targets[j];
        std::vector<double> y(n);
        double next = bootstrap(q, segment.states[n]);  // boundary value
        for (int i = n - 1; i >= 0; --i) {
            const double b = bootstrap(q, segment.states[i + 1]);
            y[i] = segment.rewards[i] + gamma * b + gamma * lambda * (next - b);
            next = y[i];
        }
        per_table[j] = std::move(y);
    }
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) {
        out[i] = per_table[0][i];
        for (std::size_t j = 1; j < per_table.size(); ++j) {
            out[i] = std::min(out[i], per_table[j][i]);
        }
    }
    return out;
}

double alpha_threshold(const EmpiricalModel& model, const TabularPolicy& pi, double lambda,
                       double c_r, double c_p, double gamma, double r_max) {
    if (c_r < 0.0 || c_p < 0.0) {
        throw std::invalid_argument("alpha_threshold: constants must be >= 0");
    }
    const TabularPolicy pi_beta = model.behavior_policy();
    double max_inv_sqrt_n = 0.0;
    for (int s = 0; s < model.num_states; ++s) {
        for (int a = 0; a < model.num_actions; ++a) {
            if (model.counts(s, a) > 0) {
                max_inv_sqrt_n =
                    std::max(max_inv_sqrt_n, 1.0 / std::sqrt(double(model.counts(s, a))));
            }
        }
    }
    double max_inv_pen = 0.0;
    for (int s = 0; s < model.num_states; ++s) {
        if (!model.state_has_action[s]) continue;
        double g = 0.0;
        for (int a = 0; a < model.num_actions; ++a) {
            const double p = pi.probs(s, a);
            if (p <= 0.0) continue;
            const double b = pi_beta.probs(s, a);
            if (b <= 0.0) throw SupportViolationError("alpha_threshold at s=" + std::to_string(s));
            g += p * (p / b - 1.0);
        }
        if (g <= 1e-15) return std::numeric_limits<double>::infinity();
        max_inv_pen = std::max(max_inv_pen, 1.0 / g);
    }
    const double num = c_r + gamma * c_p * r_max / (1.0 - gamma);
    const double den = (1.0 - gamma * lambda) * (1.0 - lambda) * (1.0 - gamma);
    return num / den * max_inv_sqrt_n * max_inv_pen;
}

// ---------------------------------------------------------------------------
// Stochastic tabular trainer
// ---------------------------------------------------------------------------

SgdTrainer::SgdTrainer(int num_states, int num_actions, double gamma,
                       TabularPolicy pi_beta_hat, const CpqlConfig& cfg)
    : S_(num_states), A_(num_actions), gamma_(gamma), cfg_(cfg),
      pi_beta_hat_(std::move(pi_beta_hat)), rng_(cfg.seed) {
    cfg_.validate();
    if (cfg_.improvement == Improvement::PenalizedHillClimb) {
        throw std::invalid_argument("sgd trainer: improvement must be greedy or softmax");
    }
    const int tables = cfg_.twin_tables ? 2 : 1;
    for (int j = 0; j < tables; ++j) {
        Eigen::MatrixXd init = Eigen::MatrixXd::Zero(S_, A_);
        if (cfg_.twin_tables) {
            Rng nr(derive_seed(cfg_.seed, 100 + j));
            for (int s = 0; s < S_; ++s)
                for (int a = 0; a < A_; ++a) init(s, a) = nr.uniform(-1e-3, 1e-3);
        }
        q_.push_back(init);
        target_.push_back(init);
    }
    improve();
}

QTable SgdTrainer::combined() const {
    Eigen::MatrixXd v = q_[0];
    for (std::size_t j = 1; j < q_.size(); ++j) v = v.cwiseMin(q_[j]);
    return QTable{v};
}

double SgdTrainer::average_q(const std::vector<std::pair<int, int>>& probe) const {
    if (probe.empty()) return 0.0;
    const QTable c = combined();
    double sum = 0.0;
    for (auto [s, a] : probe) sum += c.values(s, a);
    return sum / static_cast<double>(probe.size());
}

TrainRecord SgdTrainer::step(const std::vector<Segment>& segments, double alpha) {
    TrainRecord rec;
    const int B = static_cast<int>(segments.size());
    if (B == 0) return rec;

    std::vector<QTable> targets;
    targets.reserve(target_.size());
    for (const auto& t : target_) targets.push_back(QTable{t});

    std::vector<double> ys(B);
    for (int b = 0; b < B; ++b) {
        ys[b] = lambda_return_targets(
            segments[b], std::span<const QTable>(targets.data(), targets.size()), policy_,
            cfg_.lambda, gamma_)[0];
    }

    // Metrics before the update, on the first table.
    double td_loss = 0.0, pen_val = 0.0;
    for (int b = 0; b < B; ++b) {
        const int s0 = segments[b].states[0], a0 = segments[b].actions[0];
        const double e = q_[0](s0, a0) - ys[b];
        td_loss += 0.5 * e * e;
        if (alpha != 0.0) {
            const auto row = q_[0].row(s0);
            const double m = row.maxCoeff();
            const double lse = m + std::log((row.array() - m).exp().sum());
            pen_val += alpha * (lse - pi_beta_hat_.probs.row(s0).dot(row));
        }
    }
    rec.td_loss = td_loss / B;
    rec.penalty = pen_val / B;

    for (std::size_t j = 0; j < q_.size(); ++j) {
        Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(S_, A_);
        for (int b = 0; b < B; ++b) {
            const int s0 = segments[b].states[0], a0 = segments[b].actions[0];
            grad(s0, a0) += (q_[j](s0, a0) - ys[b]) / B;
            if (alpha != 0.0) {
                const auto row = q_[j].row(s0);
                const double m = row.maxCoeff();
                Eigen::ArrayXd soft = (row.transpose().array() - m).exp();
                soft /= soft.sum();
                grad.row(s0) +=
                    (alpha / B) *
                    (soft.matrix() - pi_beta_hat_.probs.row(s0).transpose()).transpose();
            }
        }
        q_[j] -= cfg_.lr * grad;
        target_[j] = cfg_.tau * q_[j] + (1.0 - cfg_.tau) * target_[j];
    }
    improve();

    double avg = 0.0;
    const QTable c = combined();
    for (int b = 0; b < B; ++b) {
        avg += c.values(segments[b].states[0], segments[b].actions[0]);
    }
    rec.avg_q = avg / B;
    return rec;
}

void SgdTrainer::improve() {
    const QTable c = combined();
    if (cfg_.improvement == Improvement::Greedy) {
        policy_ = greedy_policy(c, TieBreak::LowestIndex);
    } else {
        TabularPolicy pi;
        pi.probs = Eigen::MatrixXd::Zero(S_, A_);
        for (int s = 0; s < S_; ++s) {
            const double m = c.values.row(s).maxCoeff();
            Eigen::ArrayXd e =
                ((c.values.row(s).transpose().array() - m) / cfg_.softmax_temperature).exp();
            pi.probs.row(s) = (e / e.sum()).matrix().transpose();
        }
        policy_ = pi;
    }
}

TrainTrace cpql_sgd_train(const TrajectoryDataset& ds, const CpqlConfig& cfg,
                          const FiniteMdp* eval_mdp) {
    if (ds.empty()) throw std::invalid_argument("cpql_sgd_train: empty dataset");
    cfg.validate();
    const EmpiricalModel emp = eval_mdp
                                   ? build_empirical_model(ds, eval_mdp->num_states,
                                                           eval_mdp->num_actions)
                                   : build_empirical_model(ds);
    const int S = emp.num_states, A = emp.num_actions;
    SgdTrainer trainer(S, A, ds.meta.gamma, emp.behavior_policy(), cfg);

    TrainTrace trace;
    trace.records.reserve(cfg.iters);
    for (int it = 0; it < cfg.iters; ++it) {
        const auto segments =
            sample_segments_rng(ds.episodes, cfg.segment_len, cfg.batch, trainer.rng());
        TrainRecord rec = trainer.step(segments, cfg.alpha);
        rec.iter = it;
        if (eval_mdp) rec.j_eval = expected_return(*eval_mdp, trainer.policy());
        trace.records.push_back(rec);
    }
    trace.q_final = trainer.table(0);
    if (trainer.table_count() > 1) trace.q_final_twin = trainer.table(1);
    trace.policy_final = trainer.policy();
    return trace;
}

}  // namespace cpql
