#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cpql/cpql.hpp"
#include "cpql/envs.hpp"
#include "cpql/theory.hpp"

using namespace cpql;

namespace {

FiniteMdp random_mdp(std::uint64_t seed, int S, int A, double gamma) {
    EnvSpec spec;
    spec.kind = EnvSpec::Kind::Random;
    spec.seed = seed;
    spec.num_states = S;
    spec.num_actions = A;
    spec.branching = std::min(3, S);
    spec.reward_sparsity = 0.7;
    spec.gamma = gamma;
    return make_env(spec);
}

}  // namespace

TEST_CASE("ratio penalty values") {
    const TabularPolicy uniform4 = TabularPolicy::uniform(1, 4);
    const TabularPolicy det = TabularPolicy::deterministic({2}, 4);
    SUBCASE("matching policies give zero everywhere") {
        Rng rng(1);
        const TabularPolicy p = random_policy(rng, 3, 3);
        CHECK(ratio_penalty_table(p, p).cwiseAbs().maxCoeff() <= 1e-15);
    }
    SUBCASE("deterministic over uniform") {
        CHECK(conservative_ratio_penalty(det, uniform4, 0, 2) == doctest::Approx(3.0));
        CHECK(conservative_ratio_penalty(det, uniform4, 0, 0) == doctest::Approx(-1.0));
    }
    SUBCASE("support violation is explicit") {
        TabularPolicy narrow;
        narrow.probs = Eigen::MatrixXd::Zero(1, 4);
        narrow.probs(0, 0) = 1.0;
        CHECK_THROWS_AS(conservative_ratio_penalty(det, narrow, 0, 2),
                        SupportViolationError);
    }
    SUBCASE("expectation under the acting policy is non-negative") {
        Rng rng(2);
        for (int t = 0; t < 200; ++t) {
            const TabularPolicy p1 = random_policy(rng, 4, 3);
            const TabularPolicy p2 = random_policy(rng, 4, 3);
            CHECK(expected_ratio_penalty(p1, p2).minCoeff() >= -1e-12);
        }
    }
}

TEST_CASE("penalized evaluation") {
    const FiniteMdp m = random_mdp(3, 6, 3, 0.9);
    Rng rng(3);
    const TabularPolicy beta = random_policy(rng, 6, 3);
    const TabularPolicy pi = random_policy(rng, 6, 3);
    SUBCASE("alpha zero reduces to the mixture policy value") {
        const QTable q = cpql_penalized_evaluation(m, beta, pi, 0.5, 0.0);
        const QTable direct = policy_evaluation_exact(m, mixture_policy(beta, pi, 0.5));
        CHECK((q.values - direct.values).array().abs().maxCoeff() <= 1e-9);
    }
    SUBCASE("closed-form value gap for deterministic over uniform") {
        const FiniteMdp m4 = random_mdp(5, 5, 4, 0.8);
        const TabularPolicy uniform = TabularPolicy::uniform(5, 4);
        const TabularPolicy det = value_iteration(m4, 1e-12).second;
        const double lambda = 0.3, alpha = 2.0;
        const QTable q_hat = cpql_penalized_evaluation(m4, uniform, det, lambda, alpha);
        const TabularPolicy mix = mixture_policy(uniform, det, lambda);
        const VTable v_hat = state_values(q_hat, mix);
        const VTable v = state_values(policy_evaluation_exact(m4, mix), mix);
        const double gap = alpha * (1.0 - lambda) * 3.0 / (1.0 - 0.8);
        CHECK(((v.values - v_hat.values).array() - gap).abs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("exact iteration with alpha zero is plain multi-step control") {
    const FiniteMdp m = random_mdp(7, 5, 3, 0.9);
    Rng rng(4);
    const TabularPolicy beta = random_policy(rng, 5, 3);
    CpqlConfig cfg;
    cfg.alpha = 0.0;
    cfg.lambda = 0.6;
    cfg.iters = 400;
    cfg.improvement = Improvement::Greedy;
    const ExactIterResult res = cpql_exact_iterate(m, beta, cfg);

    // Reference: interleaved greedy improvement on the raw operator.
    QTable q = QTable::zeros(5, 3);
    TabularPolicy pol = beta;
    for (int it = 0; it < cfg.iters; ++it) {
        q = pql_backup_closed_form(m, beta, pol, cfg.lambda, q);
        pol = greedy_policy(q, TieBreak::LowestIndex);
    }
    CHECK((res.policy.probs - pol.probs).cwiseAbs().maxCoeff() == 0.0);
    const QTable polished = cpql_penalized_evaluation(m, beta, pol, cfg.lambda, 0.0);
    CHECK((res.q.values - polished.values).array().abs().maxCoeff() <= 1e-10);
}

TEST_CASE("hill climb never decreases the penalized objective") {
    const FiniteMdp m = random_mdp(9, 6, 3, 0.95);
    Rng rng(5);
    const TabularPolicy beta = random_policy(rng, 6, 3);
    CpqlConfig cfg;
    cfg.alpha = 0.5;
    cfg.lambda = 0.4;
    cfg.iters = 200;
    cfg.improvement = Improvement::PenalizedHillClimb;

    TabularPolicy pol = beta;
    double obj = penalized_objective(m, beta, pol, cfg.lambda, cfg.alpha);
    const double start = obj;
    for (int it = 0; it < 40; ++it) {
        pol = penalized_improvement_step(m, beta, pol, cfg.lambda, cfg.alpha);
        const double next = penalized_objective(m, beta, pol, cfg.lambda, cfg.alpha);
        CHECK(next >= obj - 1e-10);
        obj = next;
    }
    CHECK(obj >= start - 1e-10);

    const ExactIterResult res = cpql_exact_iterate(m, beta, cfg);
    const double final_obj =
        penalized_objective(m, beta, res.policy, cfg.lambda, cfg.alpha);
    CHECK(final_obj >= start - 1e-10);
    CHECK(final_obj >= obj - 1e-8);  // the driver converges at least as far
}

TEST_CASE("multi-step return targets") {
    const FiniteMdp m = two_state_toggle();
    Rng rng(6);
    QTable q = QTable::zeros(2, 2);
    for (int s = 0; s < 2; ++s)
        for (int a = 0; a < 2; ++a) q.values(s, a) = rng.uniform(-1.0, 1.0);
    const TabularPolicy pi = random_policy(rng, 2, 2);
    const std::vector<QTable> targets = {q};

    Segment seg;
    seg.states = {0, 1, 0, 1, 1, 0};
    seg.actions = {1, 1, 1, 0, 1};
    seg.rewards = {0.0, 1.0, 0.0, 1.0, 0.0};

    auto bootstrap = [&](int s) { return pi.probs.row(s).dot(q.values.row(s)); };

    SUBCASE("single transition base case") {
        Segment one;
        one.states = {0, 1};
        one.actions = {1};
        one.rewards = {0.25};
        const auto y = lambda_return_targets(one, targets, pi, 0.9, m.gamma);
        REQUIRE(y.size() == 1);
        CHECK(y[0] == doctest::Approx(0.25 + 0.5 * bootstrap(1)).epsilon(1e-14));
    }
    SUBCASE("lambda zero gives one-step targets at every index") {
        const auto y = lambda_return_targets(seg, targets, pi, 0.0, m.gamma);
        for (int i = 0; i < seg.length(); ++i) {
            CHECK(y[i] == seg.rewards[i] + m.gamma * bootstrap(seg.states[i + 1]));
        }
    }
    SUBCASE("matches the weighted n-step expansion at lambda 0.9") {
        const double lambda = 0.9, gamma = m.gamma;
        const auto y = lambda_return_targets(seg, targets, pi, lambda, gamma);
        // (1-l) sum_{j<n} l^{j-1} G_j + l^{n-1} G_n with j-step returns G_j.
        const int n = seg.length();
        auto g = [&](int j) {
            double acc = 0.0, disc = 1.0;
            for (int i = 0; i < j; ++i) {
                acc += disc * seg.rewards[i];
                disc *= gamma;
            }
            return acc + disc * bootstrap(seg.states[j]);
        };
        double expansion = 0.0, w = 1.0 - lambda;
        for (int j = 1; j < n; ++j) {
            expansion += w * g(j);
            w *= lambda;
        }
        expansion += std::pow(lambda, n - 1) * g(n);
        CHECK(std::abs(y[0] - expansion) <= 1e-12);
    }
    SUBCASE("twin tables combine by pointwise minimum") {
        QTable q2 = q;
        q2.values.array() += 0.5;
        QTable q3 = q;
        q3.values.array() -= 0.25;
        const std::vector<QTable> twins = {q2, q3};
        const auto y_min = lambda_return_targets(seg, twins, pi, 0.5, m.gamma);
        const auto y_lo = lambda_return_targets(seg, {&q3, 1}, pi, 0.5, m.gamma);
        for (int i = 0; i < seg.length(); ++i) {
            CHECK(y_min[i] == doctest::Approx(y_lo[i]).epsilon(1e-14));
        }
    }
}

TEST_CASE("stochastic trainer reduces to plain expectation Q-learning") {
    const FiniteMdp m = two_state_toggle();
    const TabularPolicy u = TabularPolicy::uniform(2, 2);
    const TrajectoryDataset ds = collect_trajectories(m, u, 60, 10, 21);
    CpqlConfig cfg;
    cfg.alpha = 0.0;
    cfg.lambda = 0.0;
    cfg.segment_len = 1;
    cfg.batch = 16;
    cfg.lr = 0.2;
    cfg.tau = 0.01;
    cfg.iters = 50;
    cfg.improvement = Improvement::Greedy;
    cfg.seed = 9;
    const TrainTrace trace = cpql_sgd_train(ds, cfg, &m);

    // Independent reference loop with the same draw sequence.
    Rng rng(cfg.seed);
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(2, 2);
    Eigen::MatrixXd tgt = Eigen::MatrixXd::Zero(2, 2);
    TabularPolicy pol = greedy_policy(QTable{q});
    for (int it = 0; it < cfg.iters; ++it) {
        const auto segs = sample_segments_rng(ds.episodes, 1, cfg.batch, rng);
        Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(2, 2);
        for (const auto& seg : segs) {
            const int s0 = seg.states[0], a0 = seg.actions[0], s1 = seg.states[1];
            const double boot = pol.probs.row(s1).dot(tgt.row(s1));
            const double y = seg.rewards[0] + m.gamma * boot + m.gamma * 0.0 * 0.0;
            grad(s0, a0) += (q(s0, a0) - y) / cfg.batch;
        }
        q -= cfg.lr * grad;
        tgt = cfg.tau * q + (1.0 - cfg.tau) * tgt;
        pol = greedy_policy(QTable{q});
    }
    CHECK((trace.q_final.values - q).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero learning rate leaves the tables untouched") {
    const FiniteMdp m = two_state_toggle();
    const TrajectoryDataset ds =
        collect_trajectories(m, TabularPolicy::uniform(2, 2), 30, 8, 2);
    CpqlConfig cfg;
    cfg.alpha = 1.0;
    cfg.lambda = 0.5;
    cfg.lr = 0.0;
    cfg.iters = 25;
    cfg.batch = 8;
    cfg.seed = 3;
    const TrainTrace trace = cpql_sgd_train(ds, cfg);
    CHECK(trace.q_final.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training traces are bit-reproducible") {
    const FiniteMdp m = random_mdp(12, 4, 2, 0.9);
    const TrajectoryDataset ds =
        collect_trajectories(m, TabularPolicy::uniform(4, 2), 80, 12, 5);
    CpqlConfig cfg;
    cfg.alpha = 1.0;
    cfg.lambda = 0.7;
    cfg.segment_len = 5;
    cfg.batch = 32;
    cfg.iters = 60;
    cfg.seed = 17;
    cfg.twin_tables = true;
    const TrainTrace a = cpql_sgd_train(ds, cfg, &m);
    const TrainTrace b = cpql_sgd_train(ds, cfg, &m);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].td_loss == b.records[i].td_loss);
        CHECK(a.records[i].penalty == b.records[i].penalty);
        CHECK(a.records[i].avg_q == b.records[i].avg_q);
        CHECK(a.records[i].j_eval == b.records[i].j_eval);
    }
    CHECK((a.q_final.values - b.q_final.values).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(a.q_final_twin.has_value());
    CHECK((a.q_final_twin->values - b.q_final_twin->values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("larger trace parameter damps the conservatism push-down") {
    EnvSpec spec;
    spec.kind = EnvSpec::Kind::Chain;
    spec.len = 8;
    spec.slip = 0.1;
    spec.gamma = 0.95;
    spec.seed = 1;
    const FiniteMdp m = make_env(spec);
    const TrajectoryDataset ds =
        dataset_recipe(m, DatasetQuality::Medium, 200, 31, 30);
    auto final_avg_q = [&](double lambda) {
        CpqlConfig cfg;
        cfg.alpha = 1.0;
        cfg.lambda = lambda;
        cfg.segment_len = 5;
        cfg.batch = 64;
        cfg.lr = 0.25;
        cfg.iters = 800;
        cfg.seed = 11;
        const TrainTrace t = cpql_sgd_train(ds, cfg, &m);
        for (const auto& r : t.records) {
            REQUIRE(std::isfinite(r.avg_q));
            REQUIRE(std::isfinite(r.td_loss));
        }
        return t.records.back().avg_q;
    };
    CHECK(final_avg_q(0.0) <= final_avg_q(0.7));
}

TEST_CASE("conservatism threshold formula") {
    const FiniteMdp m = two_state_toggle();
    const TabularPolicy u = TabularPolicy::uniform(2, 2);
    const TrajectoryDataset ds = collect_trajectories(m, u, 400, 20, 13);
    EmpiricalModel emp = build_empirical_model(ds, 2, 2);
    const TabularPolicy det = TabularPolicy::deterministic({1, 0}, 2);

    SUBCASE("zero constants give a zero threshold") {
        CHECK(alpha_threshold(emp, det, 0.5, 0.0, 0.0, 0.5, 1.0) == 0.0);
    }
    SUBCASE("matching policies have no finite threshold") {
        const double t = alpha_threshold(emp, emp.behavior_policy(), 0.5, 1.0, 1.0,
                                         0.5, 1.0);
        CHECK(std::isinf(t));
    }
    SUBCASE("worked example with pinned counts") {
        emp.counts.setConstant(100);
        emp.pi_beta_hat.setConstant(0.5);
        for (int s = 0; s < 2; ++s) emp.state_has_action[s] = 1;
        const double t = alpha_threshold(emp, det, 0.5, 1.0, 0.0, 0.5, 1.0);
        CHECK(t == doctest::Approx(8.0 / 15.0).epsilon(1e-12));
    }
}
