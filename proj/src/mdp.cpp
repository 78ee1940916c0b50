#include "cpql/mdp.hpp"

#include <cmath>
#include <stdexcept>

namespace cpql {

namespace {

void check_stochastic_row(const Eigen::VectorXd& row, const std::string& what) {
    if ((row.array() < 0.0).any()) {
        throw std::invalid_argument(what + ": negative entry");
    }
    if (std::abs(row.sum() - 1.0) > kStochasticTol) {
        throw std::invalid_argument(what + ": row sums to " + format_double(row.sum()) +
                                    ", expected 1 within 1e-9");
    }
}

}  // namespace

void TabularPolicy::validate() const {
    for (int s = 0; s < num_states(); ++s) {
        check_stochastic_row(probs.row(s).transpose(), "policy row " + std::to_string(s));
    }
}

TabularPolicy TabularPolicy::uniform(int num_states, int num_actions) {
    TabularPolicy pi;
    pi.probs = Eigen::MatrixXd::Constant(num_states, num_actions, 1.0 / num_actions);
    return pi;
}

TabularPolicy TabularPolicy::deterministic(const std::vector<int>& actions, int num_actions) {
    TabularPolicy pi;
    pi.probs = Eigen::MatrixXd::Zero(static_cast<int>(actions.size()), num_actions);
    for (int s = 0; s < static_cast<int>(actions.size()); ++s) {
        if (actions[s] < 0 || actions[s] >= num_actions) {
            throw std::invalid_argument("deterministic policy: action index out of range");
        }
        pi.probs(s, actions[s]) = 1.0;
    }
    return pi;
}

json TabularPolicy::to_json() const {
    json rows = json::array();
    for (int s = 0; s < num_states(); ++s) {
        json row = json::array();
        for (int a = 0; a < num_actions(); ++a) row.push_back(probs(s, a));
        rows.push_back(std::move(row));
    }
    return json{{"probs", std::move(rows)}};
}

TabularPolicy TabularPolicy::from_json(const json& j) {
    const auto& rows = j.at("probs");
    const int S = static_cast<int>(rows.size());
    const int A = S > 0 ? static_cast<int>(rows[0].size()) : 0;
    TabularPolicy pi;
    pi.probs = Eigen::MatrixXd::Zero(S, A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) pi.probs(s, a) = rows[s][a].get<double>();
    pi.validate();
    return pi;
}

void FiniteMdp::validate() const {
    if (num_states <= 0 || num_actions <= 0) {
        throw std::invalid_argument("mdp: state and action counts must be positive");
    }
    if (gamma < 0.0 || gamma >= 1.0) {
        throw std::invalid_argument("mdp: gamma must lie in [0,1)");
    }
    if (static_cast<int>(P.size()) != num_actions) {
        throw std::invalid_argument("mdp: P must hold one S x S matrix per action");
    }
    for (int a = 0; a < num_actions; ++a) {
        if (P[a].rows() != num_states || P[a].cols() != num_states) {
            throw std::invalid_argument("mdp: transition matrix shape mismatch");
        }
        for (int s = 0; s < num_states; ++s) {
            check_stochastic_row(P[a].row(s).transpose(),
                                 "P(.|" + std::to_string(s) + "," + std::to_string(a) + ")");
        }
    }
    if (r.rows() != num_states || r.cols() != num_actions) {
        throw std::invalid_argument("mdp: reward shape mismatch");
    }
    if (r_max < 0.0 || r.array().abs().maxCoeff() > r_max + 1e-12) {
        throw std::invalid_argument("mdp: |r| exceeds declared r_max");
    }
    if (d0.size() != num_states) throw std::invalid_argument("mdp: d0 shape mismatch");
    check_stochastic_row(d0, "d0");
}

json FiniteMdp::to_json() const {
    json jd0 = json::array();
    for (int s = 0; s < num_states; ++s) jd0.push_back(d0[s]);
    json jr = json::array();
    for (int s = 0; s < num_states; ++s) {
        json row = json::array();
        for (int a = 0; a < num_actions; ++a) row.push_back(r(s, a));
        jr.push_back(std::move(row));
    }
    json jP = json::array();
    for (int s = 0; s < num_states; ++s) {
        json per_action = json::array();
        for (int a = 0; a < num_actions; ++a) {
            json row = json::array();
            for (int s2 = 0; s2 < num_states; ++s2) row.push_back(P[a](s, s2));
            per_action.push_back(std::move(row));
        }
        jP.push_back(std::move(per_action));
    }
    return json{{"S", num_states}, {"A", num_actions}, {"gamma", gamma},
                {"r_max", r_max},  {"d0", std::move(jd0)}, {"r", std::move(jr)},
                {"P", std::move(jP)}};
}

FiniteMdp FiniteMdp::from_json(const json& j) {
    FiniteMdp m;
    m.num_states = j.at("S").get<int>();
    m.num_actions = j.at("A").get<int>();
    m.gamma = j.at("gamma").get<double>();
    m.r_max = j.at("r_max").get<double>();
    if (m.num_states <= 0 || m.num_actions <= 0) {
        throw std::invalid_argument("mdp json: S and A must be positive");
    }
    m.d0 = Eigen::VectorXd::Zero(m.num_states);
    const auto& jd0 = j.at("d0");
    if (static_cast<int>(jd0.size()) != m.num_states) {
        throw std::invalid_argument("mdp json: d0 length mismatch");
    }
    for (int s = 0; s < m.num_states; ++s) m.d0[s] = jd0[s].get<double>();
    m.r = Eigen::MatrixXd::Zero(m.num_states, m.num_actions);
    const auto& jr = j.at("r");
    for (int s = 0; s < m.num_states; ++s)
        for (int a = 0; a < m.num_actions; ++a) m.r(s, a) = jr.at(s).at(a).get<double>();
    m.P.assign(m.num_actions, Eigen::MatrixXd::Zero(m.num_states, m.num_states));
    const auto& jP = j.at("P");
    for (int s = 0; s < m.num_states; ++s)
        for (int a = 0; a < m.num_actions; ++a)
            for (int s2 = 0; s2 < m.num_states; ++s2)
                m.P[a](s, s2) = jP.at(s).at(a).at(s2).get<double>();
    m.validate();
    return m;
}

Eigen::MatrixXd policy_transition(const FiniteMdp& mdp, const TabularPolicy& pi) {
    Eigen::MatrixXd P_pi = Eigen::MatrixXd::Zero(mdp.num_states, mdp.num_states);
    for (int a = 0; a < mdp.num_actions; ++a) {
        P_pi += pi.probs.col(a).asDiagonal() * mdp.P[a];
    }
    return P_pi;
}

Eigen::VectorXd policy_reward(const FiniteMdp& mdp, const TabularPolicy& pi) {
    return (pi.probs.array() * mdp.r.array()).rowwise().sum();
}

QTable policy_evaluation_exact(const FiniteMdp& mdp, const TabularPolicy& pi) {
    const Eigen::MatrixXd P_pi = policy_transition(mdp, pi);
    const Eigen::VectorXd r_pi = policy_reward(mdp, pi);
    const Eigen::MatrixXd A =
        Eigen::MatrixXd::Identity(mdp.num_states, mdp.num_states) - mdp.gamma * P_pi;
    const Eigen::VectorXd v = A.partialPivLu().solve(r_pi);

    QTable q = QTable::zeros(mdp.num_states, mdp.num_actions);
    for (int a = 0; a < mdp.num_actions; ++a) {
        q.values.col(a) = mdp.r.col(a) + mdp.gamma * (mdp.P[a] * v);
    }

    // Fixed-point residual must be at solver precision.
    Eigen::MatrixXd backup = Eigen::MatrixXd::Zero(mdp.num_states, mdp.num_actions);
    const Eigen::VectorXd v_q = (pi.probs.array() * q.values.array()).rowwise().sum();
    for (int a = 0; a < mdp.num_actions; ++a) {
        backup.col(a) = mdp.r.col(a) + mdp.gamma * (mdp.P[a] * v_q);
    }
    const double resid = (backup - q.values).array().abs().maxCoeff();
    if (resid > 1e-9) {
        throw std::logic_error("policy evaluation residual " + format_double(resid));
    }
    const double bound = mdp.r_max / (1.0 - mdp.gamma) + 1e-6;
    if (q.values.array().abs().maxCoeff() > bound) {
        throw std::logic_error("policy evaluation exceeded value bound");
    }
    return q;
}

VTable state_values(const QTable& q, const TabularPolicy& pi) {
    return VTable{(pi.probs.array() * q.values.array()).rowwise().sum()};
}

std::pair<QTable, TabularPolicy> value_iteration(const FiniteMdp& mdp, double tol,
                                                 int max_iter) {
    if (tol <= 0.0) throw std::invalid_argument("value_iteration: tol must be positive");
    QTable q = QTable::zeros(mdp.num_states, mdp.num_actions);
    Eigen::MatrixXd next(mdp.num_states, mdp.num_actions);
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd v = q.values.rowwise().maxCoeff();
        for (int a = 0; a < mdp.num_actions; ++a) {
            next.col(a) = mdp.r.col(a) + mdp.gamma * (mdp.P[a] * v);
        }
        const double resid = (next - q.values).array().abs().maxCoeff();
        q.values.swap(next);
        if (resid <= tol) {
            return {q, greedy_policy(q, TieBreak::LowestIndex)};
        }
    }
    throw std::runtime_error("value_iteration: iteration cap reached before tol");
}

TabularPolicy greedy_policy(const QTable& q, TieBreak tie_break) {
    if (!q.values.allFinite()) throw std::invalid_argument("greedy_policy: non-finite Q");
    TabularPolicy pi;
    pi.probs = Eigen::MatrixXd::Zero(q.num_states(), q.num_actions());
    for (int s = 0; s < q.num_states(); ++s) {
        const double best = q.values.row(s).maxCoeff();
        if (tie_break == TieBreak::LowestIndex) {
            for (int a = 0; a < q.num_actions(); ++a) {
                if (q.values(s, a) == best) {
                    pi.probs(s, a) = 1.0;
                    break;
                }
            }
        } else {
            int ties = 0;
            for (int a = 0; a < q.num_actions(); ++a) ties += (q.values(s, a) == best);
            for (int a = 0; a < q.num_actions(); ++a) {
                if (q.values(s, a) == best) pi.probs(s, a) = 1.0 / ties;
            }
        }
    }
    return pi;
}

TabularPolicy mixture_policy(const TabularPolicy& pi_beta, const TabularPolicy& pi,
                             double lambda) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw std::invalid_argument("mixture_policy: lambda must lie in [0,1]");
    }
    if (pi_beta.probs.rows() != pi.probs.rows() || pi_beta.probs.cols() != pi.probs.cols()) {
        throw std::invalid_argument("mixture_policy: shape mismatch");
    }
    TabularPolicy mix;
    mix.probs = lambda * pi_beta.probs + (1.0 - lambda) * pi.probs;
    return mix;
}

VisitDist visitation_distribution(const FiniteMdp& mdp, const TabularPolicy& pi) {
    const Eigen::MatrixXd P_pi = policy_transition(mdp, pi);
    const Eigen::MatrixXd A =
        Eigen::MatrixXd::Identity(mdp.num_states, mdp.num_states) -
        mdp.gamma * P_pi.transpose();
    VisitDist d;
    d.state_probs = (1.0 - mdp.gamma) * A.partialPivLu().solve(mdp.d0);
    if (std::abs(d.state_probs.sum() - 1.0) > 1e-8) {
        throw std::logic_error("visitation distribution does not sum to 1");
    }
    d.state_action_probs = d.state_probs.asDiagonal() * pi.probs;
    return d;
}

double expected_return(const FiniteMdp& mdp, const TabularPolicy& pi) {
    const QTable q = policy_evaluation_exact(mdp, pi);
    const VTable v = state_values(q, pi);
    const double j_d0 = mdp.d0.dot(v.values);

    const VisitDist d = visitation_distribution(mdp, pi);
    const double j_occ = (d.state_action_probs.array() * mdp.r.array()).sum() /
                         (1.0 - mdp.gamma);
    if (std::abs(j_d0 - j_occ) > 1e-8) {
        throw std::logic_error("expected_return identity violated: " +
                               format_double(j_d0 - j_occ));
    }
    return j_d0;
}

Eigen::VectorXd total_variation(const TabularPolicy& pi1, const TabularPolicy& pi2) {
    if (pi1.probs.rows() != pi2.probs.rows() || pi1.probs.cols() != pi2.probs.cols()) {
        throw std::invalid_argument("total_variation: shape mismatch");
    }
    return 0.5 * (pi1.probs - pi2.probs).array().abs().rowwise().sum();
}

}  // namespace cpql
