#include "cpql/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cpql {

namespace {

const char* kind_name(EnvSpec::Kind k) {
    switch (k) {
        case EnvSpec::Kind::Chain: return "chain";
        case EnvSpec::Kind::Gridworld: return "gridworld";
        case EnvSpec::Kind::Random: return "random";
        case EnvSpec::Kind::TwoStateToggle: return "two_state_toggle";
    }
    return "?";
}

EnvSpec::Kind kind_from_name(const std::string& name) {
    if (name == "chain") return EnvSpec::Kind::Chain;
    if (name == "gridworld") return EnvSpec::Kind::Gridworld;
    if (name == "random") return EnvSpec::Kind::Random;
    if (name == "two_state_toggle") return EnvSpec::Kind::TwoStateToggle;
    throw std::invalid_argument("env kind: unknown '" + name + "'");
}

}  // namespace

json EnvSpec::to_json() const {
    json j{{"kind", kind_name(kind)}, {"seed", seed}, {"gamma", gamma}};
    switch (kind) {
        case Kind::Chain:
            j["len"] = len;
            j["slip"] = slip;
            break;
        case Kind::Gridworld:
            j["width"] = width;
            j["height"] = height;
            j["goal"] = goal;
            j["slip"] = slip;
            j["step_cost"] = step_cost;
            break;
        case Kind::Random:
            j["S"] = num_states;
            j["A"] = num_actions;
            j["branching"] = branching;
            j["reward_sparsity"] = reward_sparsity;
            break;
        case Kind::TwoStateToggle:
            break;
    }
    return j;
}

EnvSpec EnvSpec::from_json(const json& j) {
    EnvSpec s;
    s.kind = kind_from_name(j.at("kind").get<std::string>());
    s.seed = j.value("seed", std::uint64_t{0});
    s.gamma = j.value("gamma", 0.99);
    s.len = j.value("len", 8);
    s.slip = j.value("slip", 0.0);
    s.width = j.value("width", 4);
    s.height = j.value("height", 4);
    s.goal = j.value("goal", s.width * s.height - 1);
    s.step_cost = j.value("step_cost", 0.0);
    s.num_states = j.value("S", 8);
    s.num_actions = j.value("A", 3);
    s.branching = j.value("branching", 3);
    s.reward_sparsity = j.value("reward_sparsity", 0.5);
    return s;
}

FiniteMdp two_state_toggle() {
    FiniteMdp m;
    m.num_states = 2;
    m.num_actions = 2;  // 0 = stay, 1 = toggle
    m.gamma = 0.5;
    m.r_max = 1.0;
    m.P.assign(2, Eigen::MatrixXd::Zero(2, 2));
    m.P[0](0, 0) = 1.0;
    m.P[0](1, 1) = 1.0;
    m.P[1](0, 1) = 1.0;
    m.P[1](1, 0) = 1.0;
    m.r = Eigen::MatrixXd::Zero(2, 2);
    m.r(1, 0) = 1.0;
    m.d0 = Eigen::VectorXd::Zero(2);
    m.d0[0] = 1.0;
    m.validate();
    return m;
}

namespace {

FiniteMdp make_chain(const EnvSpec& spec) {
    if (spec.len < 2) throw std::invalid_argument("chain: len must be >= 2");
    if (spec.slip < 0.0 || spec.slip >= 1.0) {
        throw std::invalid_argument("chain: slip must lie in [0,1)");
    }
    const int L = spec.len;
    FiniteMdp m;
    m.num_states = L;
    m.num_actions = 2;  // 0 = left, 1 = right
    m.gamma = spec.gamma;
    m.r_max = 1.0;
    m.P.assign(2, Eigen::MatrixXd::Zero(L, L));
    m.r = Eigen::MatrixXd::Zero(L, 2);
    auto dest = [&](int s, int a) {
        const int d = a == 1 ? s + 1 : s - 1;
        return std::clamp(d, 0, L - 1);
    };
    for (int s = 0; s < L; ++s) {
        for (int a = 0; a < 2; ++a) {
            // Slip flips the move to the opposite direction.
            m.P[a](s, dest(s, a)) += 1.0 - spec.slip;
            m.P[a](s, dest(s, 1 - a)) += spec.slip;
        }
    }
    m.r(L - 1, 1) = 1.0;  // right-end self-loop
    m.d0 = Eigen::VectorXd::Zero(L);
    m.d0[0] = 1.0;
    m.validate();
    return m;
}

FiniteMdp make_gridworld(const EnvSpec& spec) {
    if (spec.width < 1 || spec.height < 1) {
        throw std::invalid_argument("gridworld: dimensions must be positive");
    }
    const int S = spec.width * spec.height;
    if (spec.goal < 0 || spec.goal >= S) {
        throw std::invalid_argument("gridworld: goal out of range");
    }
    if (spec.slip < 0.0 || spec.slip >= 1.0) {
        throw std::invalid_argument("gridworld: slip must lie in [0,1)");
    }
    FiniteMdp m;
    m.num_states = S;
    m.num_actions = 4;  // up, down, left, right
    m.gamma = spec.gamma;
    m.r_max = std::max(1.0, std::abs(spec.step_cost));
    m.P.assign(4, Eigen::MatrixXd::Zero(S, S));
    m.r = Eigen::MatrixXd::Zero(S, 4);
    const int dx[4] = {0, 0, -1, 1};
    const int dy[4] = {-1, 1, 0, 0};
    auto move = [&](int s, int dir) {
        const int x = s % spec.width, y = s / spec.width;
        const int nx = std::clamp(x + dx[dir], 0, spec.width - 1);
        const int ny = std::clamp(y + dy[dir], 0, spec.height - 1);
        return ny * spec.width + nx;
    };
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < 4; ++a) {
            if (s == spec.goal) {
                m.P[a](s, s) = 1.0;  // absorbing
                m.r(s, a) = 1.0;
                continue;
            }
            m.P[a](s, move(s, a)) += 1.0 - spec.slip;
            for (int d = 0; d < 4; ++d) m.P[a](s, move(s, d)) += spec.slip / 4.0;
            m.r(s, a) = spec.step_cost;
        }
    }
    m.d0 = Eigen::VectorXd::Zero(S);
    m.d0[0] = 1.0;
    m.validate();
    return m;
}

FiniteMdp make_random(const EnvSpec& spec) {
    if (spec.num_states < 2 || spec.num_actions < 1) {
        throw std::invalid_argument("random env: need S >= 2, A >= 1");
    }
    if (spec.branching < 1 || spec.branching > spec.num_states) {
        throw std::invalid_argument("random env: branching out of range");
    }
    if (spec.reward_sparsity < 0.0 || spec.reward_sparsity > 1.0) {
        throw std::invalid_argument("random env: reward_sparsity must lie in [0,1]");
    }
    const int S = spec.num_states, A = spec.num_actions;
    FiniteMdp m;
    m.num_states = S;
    m.num_actions = A;
    m.gamma = spec.gamma;
    m.r_max = 1.0;
    m.P.assign(A, Eigen::MatrixXd::Zero(S, S));
    m.r = Eigen::MatrixXd::Zero(S, A);
    Rng rng(spec.seed);
    std::vector<int> order(S);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            std::iota(order.begin(), order.end(), 0);
            // Partial Fisher-Yates for `branching` distinct successors.
            for (int k = 0; k < spec.branching; ++k) {
                std::swap(order[k], order[k + rng.uniform_int(S - k)]);
            }
            double total = 0.0;
            std::vector<double> w(spec.branching);
            for (int k = 0; k < spec.branching; ++k) {
                w[k] = -std::log(1.0 - rng.uniform());
                total += w[k];
            }
            for (int k = 0; k < spec.branching; ++k) {
                m.P[a](s, order[k]) = w[k] / total;
            }
            const double u = rng.uniform();
            if (u < spec.reward_sparsity) m.r(s, a) = rng.uniform();
        }
    }
    m.d0 = Eigen::VectorXd::Constant(S, 1.0 / S);
    m.validate();
    return m;
}

}  // namespace

FiniteMdp make_env(const EnvSpec& spec) {
    switch (spec.kind) {
        case EnvSpec::Kind::Chain: return make_chain(spec);
        case EnvSpec::Kind::Gridworld: return make_gridworld(spec);
        case EnvSpec::Kind::Random: return make_random(spec);
        case EnvSpec::Kind::TwoStateToggle: return two_state_toggle();
    }
    throw std::invalid_argument("make_env: unknown kind");
}

namespace {

TabularPolicy softmax_of(const QTable& q, double temperature) {
    TabularPolicy pi;
    pi.probs = Eigen::MatrixXd::Zero(q.num_states(), q.num_actions());
    for (int s = 0; s < q.num_states(); ++s) {
        const double m = q.values.row(s).maxCoeff();
        Eigen::ArrayXd e = ((q.values.row(s).transpose().array() - m) / temperature).exp();
        pi.probs.row(s) = (e / e.sum()).matrix().transpose();
    }
    return pi;
}

}  // namespace

TrajectoryDataset dataset_recipe(const FiniteMdp& mdp, DatasetQuality quality, int size,
                                 std::uint64_t seed, int horizon,
                                 std::array<int, 3> mixed_ratio, RecipeReport* report) {
    if (size < 1) throw std::invalid_argument("dataset_recipe: size must be >= 1");
    RecipeReport local;
    RecipeReport& rep = report ? *report : local;

    const TabularPolicy uniform = TabularPolicy::uniform(mdp.num_states, mdp.num_actions);
    auto expert_policy = [&]() {
        return value_iteration(mdp, 1e-12).second;
    };
    auto medium_policy = [&]() {
        const QTable q_star = value_iteration(mdp, 1e-12).first;
        const double j_expert = expected_return(mdp, greedy_policy(q_star));
        const double j_uniform = expected_return(mdp, uniform);
        const double gap = j_expert - j_uniform;
        const double mid = 0.5 * (j_expert + j_uniform);
        if (std::abs(gap) < 1e-12) {
            rep.medium_bisection_ok = false;
            rep.medium_temperature = 1.0;
            rep.medium_return = j_uniform;
            return softmax_of(q_star, 1.0);
        }
        // Return is monotone-ish in log-temperature: cold = expert, hot = uniform.
        double lo = std::log(1e-4), hi = std::log(1e4);
        auto ret_at = [&](double log_t) {
            return expected_return(mdp, softmax_of(q_star, std::exp(log_t)));
        };
        if (!(ret_at(lo) >= mid && ret_at(hi) <= mid)) {
            rep.medium_bisection_ok = false;
            rep.medium_temperature = 1.0;
            rep.medium_return = ret_at(0.0);
            return softmax_of(q_star, 1.0);
        }
        for (int it = 0; it < 80; ++it) {
            const double m = 0.5 * (lo + hi);
            if (ret_at(m) >= mid) {
                lo = m;
            } else {
                hi = m;
            }
        }
        const double temp = std::exp(0.5 * (lo + hi));
        rep.medium_temperature = temp;
        rep.medium_return = expected_return(mdp, softmax_of(q_star, temp));
        rep.medium_bisection_ok = std::abs(rep.medium_return - mid) <= 0.10 * std::abs(gap);
        return softmax_of(q_star, temp);
    };

    switch (quality) {
        case DatasetQuality::Random:
            return collect_trajectories(mdp, uniform, size, horizon, seed);
        case DatasetQuality::Expert:
            return collect_trajectories(mdp, expert_policy(), size, horizon, seed);
        case DatasetQuality::Medium:
            return collect_trajectories(mdp, medium_policy(), size, horizon, seed);
        case DatasetQuality::Mixed: {
            const int total = mixed_ratio[0] + mixed_ratio[1] + mixed_ratio[2];
            if (total <= 0) throw std::invalid_argument("dataset_recipe: bad mixed ratio");
            const int n_random = size * mixed_ratio[0] / total;
            const int n_medium = size * mixed_ratio[1] / total;
            const int n_expert = size - n_random - n_medium;
            TrajectoryDataset ds =
                collect_trajectories(mdp, uniform, n_random, horizon, derive_seed(seed, 0));
            TrajectoryDataset mid = collect_trajectories(mdp, medium_policy(), n_medium,
                                                         horizon, derive_seed(seed, 1));
            TrajectoryDataset exp = collect_trajectories(mdp, expert_policy(), n_expert,
                                                         horizon, derive_seed(seed, 2));
            for (auto& e : mid.episodes) ds.episodes.push_back(std::move(e));
            for (auto& e : exp.episodes) ds.episodes.push_back(std::move(e));
            ds.meta.policy_sha256 = "mixed";
            ds.meta.seed = seed;
            return ds;
        }
    }
    throw std::invalid_argument("dataset_recipe: unknown quality");
}

void ScoreRef::validate() const {
    if (!(ref_max > ref_min)) {
        throw std::invalid_argument("score ref: ref_max must exceed ref_min");
    }
}

double normalized_score(double raw_return, const ScoreRef& ref) {
    ref.validate();
    return 100.0 * (raw_return - ref.ref_min) / (ref.ref_max - ref.ref_min);
}

}  // namespace cpql
