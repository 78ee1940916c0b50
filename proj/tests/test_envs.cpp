#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "cpql/dataset.hpp"
#include "cpql/envs.hpp"

using namespace cpql;

TEST_CASE("toggle fixture spec") {
    const FiniteMdp m = two_state_toggle();
    CHECK(m.num_states == 2);
    CHECK(m.num_actions == 2);
    CHECK(m.gamma == 0.5);
    CHECK(m.r(1, 0) == 1.0);
    CHECK(m.r.sum() == 1.0);
    CHECK(m.d0[0] == 1.0);
    EnvSpec spec;
    spec.kind = EnvSpec::Kind::TwoStateToggle;
    CHECK(make_env(spec).to_json().dump() == m.to_json().dump());
}

TEST_CASE("two-state chain is the toggle fixture up to action naming") {
    EnvSpec spec;
    spec.kind = EnvSpec::Kind::Chain;
    spec.len = 2;
    spec.slip = 0.0;
    spec.gamma = 0.5;
    const FiniteMdp chain = make_env(spec);
    const FiniteMdp toggle = two_state_toggle();
    REQUIRE(chain.num_states == 2);
    REQUIRE(chain.num_actions == 2);
    // Search for a per-state action bijection mapping one onto the other.
    bool found = false;
    for (int p0 = 0; p0 < 2 && !found; ++p0) {
        for (int p1 = 0; p1 < 2 && !found; ++p1) {
            const int perm[2][2] = {{p0, 1 - p0}, {p1, 1 - p1}};
            bool match = chain.gamma == toggle.gamma && chain.d0 == toggle.d0;
            for (int s = 0; s < 2 && match; ++s) {
                for (int a = 0; a < 2 && match; ++a) {
                    match = chain.r(s, perm[s][a]) == toggle.r(s, a) &&
                            (chain.P[perm[s][a]].row(s) - toggle.P[a].row(s)).norm() == 0.0;
                }
            }
            found = match;
        }
    }
    CHECK(found);
}

TEST_CASE("generators are deterministic in the seed") {
    EnvSpec spec;
    spec.kind = EnvSpec::Kind::Random;
    spec.num_states = 8;
    spec.num_actions = 3;
    spec.seed = 7;
    CHECK(make_env(spec).to_json().dump() == make_env(spec).to_json().dump());
    spec.seed = 8;
    const FiniteMdp other = make_env(spec);
    spec.seed = 7;
    CHECK(make_env(spec).to_json().dump() != other.to_json().dump());
}

TEST_CASE("generated environments satisfy the construction invariants") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        EnvSpec r;
        r.kind = EnvSpec::Kind::Random;
        r.seed = seed;
        r.num_states = 4 + static_cast<int>(seed % 6);
        r.num_actions = 2 + static_cast<int>(seed % 3);
        r.branching = 2;
        CHECK_NOTHROW(make_env(r).validate());

        EnvSpec g;
        g.kind = EnvSpec::Kind::Gridworld;
        g.width = 3;
        g.height = 3;
        g.goal = 8;
        g.slip = 0.2;
        g.step_cost = -0.05;
        g.seed = seed;
        CHECK_NOTHROW(make_env(g).validate());

        EnvSpec c;
        c.kind = EnvSpec::Kind::Chain;
        c.len = 5;
        c.slip = 0.15;
        c.seed = seed;
        CHECK_NOTHROW(make_env(c).validate());
    }
}

TEST_CASE("invalid generator parameters are rejected") {
    EnvSpec c;
    c.kind = EnvSpec::Kind::Chain;
    c.len = 1;
    CHECK_THROWS_AS(make_env(c), std::invalid_argument);
    EnvSpec g;
    g.kind = EnvSpec::Kind::Gridworld;
    g.goal = 99;
    CHECK_THROWS_AS(make_env(g), std::invalid_argument);
    EnvSpec r;
    r.kind = EnvSpec::Kind::Random;
    r.num_states = 4;
    r.branching = 9;
    CHECK_THROWS_AS(make_env(r), std::invalid_argument);
}

TEST_CASE("expert recipe on the toggle fixture toggles then stays") {
    const FiniteMdp m = two_state_toggle();
    const TrajectoryDataset ds = dataset_recipe(m, DatasetQuality::Expert, 5, 3, 6);
    for (const auto& ep : ds.episodes) {
        CHECK(ep.actions[0] == 1);  // toggle out of s0
        for (int t = 1; t < ep.length(); ++t) CHECK(ep.actions[t] == 0);
    }
}

TEST_CASE("random recipe produces a near-uniform behavior estimate") {
    EnvSpec spec;
    spec.kind = EnvSpec::Kind::Chain;
    spec.len = 4;
    spec.slip = 0.0;
    spec.gamma = 0.9;
    const FiniteMdp m = make_env(spec);
    const TrajectoryDataset ds = dataset_recipe(m, DatasetQuality::Random, 2000, 17, 20);
    const EmpiricalModel emp = build_empirical_model(ds, 4, 2);
    CHECK(std::abs(emp.pi_beta_hat(0, 0) - 0.5) <= 0.05);
}

TEST_CASE("medium recipe lands near the midpoint return") {
    EnvSpec spec;
    spec.kind = EnvSpec::Kind::Chain;
    spec.len = 6;
    spec.slip = 0.05;
    spec.gamma = 0.95;
    spec.seed = 5;
    const FiniteMdp m = make_env(spec);
    RecipeReport rep;
    const TrajectoryDataset ds =
        dataset_recipe(m, DatasetQuality::Medium, 50, 23, 30, {5, 3, 2}, &rep);
    CHECK(rep.medium_bisection_ok);
    const double j_expert = expected_return(m, value_iteration(m, 1e-12).second);
    const double j_uniform = expected_return(m, TabularPolicy::uniform(6, 2));
    const double mid = 0.5 * (j_expert + j_uniform);
    CHECK(std::abs(rep.medium_return - mid) <= 0.10 * (j_expert - j_uniform));
    CHECK_FALSE(ds.empty());
}

TEST_CASE("mixed recipe splits episode counts by the exact ratios") {
    const FiniteMdp m = two_state_toggle();
    const TrajectoryDataset ds =
        dataset_recipe(m, DatasetQuality::Mixed, 100, 29, 10, {5, 3, 2});
    CHECK(ds.episodes.size() == 100);
}

TEST_CASE("quality ordering of recipe returns") {
    EnvSpec spec;
    spec.kind = EnvSpec::Kind::Chain;
    spec.len = 6;
    spec.slip = 0.05;
    spec.gamma = 0.95;
    const FiniteMdp m = make_env(spec);
    const double j_expert = expected_return(m, value_iteration(m, 1e-12).second);
    const double j_uniform = expected_return(m, TabularPolicy::uniform(6, 2));
    RecipeReport rep;
    dataset_recipe(m, DatasetQuality::Medium, 1, 3, 10, {5, 3, 2}, &rep);
    CHECK(j_expert >= rep.medium_return - 1e-9);
    CHECK(rep.medium_return >= j_uniform - 1e-9);
}

TEST_CASE("normalized score") {
    const ScoreRef hopper{-20.27, 3234.3};
    CHECK(normalized_score(3234.3, hopper) == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(normalized_score(-20.27, hopper) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(normalized_score(1600.0, hopper) == doctest::Approx(49.79).epsilon(1e-3));

    SUBCASE("affine in the raw return") {
        Rng rng(31);
        for (int t = 0; t < 100; ++t) {
            const double x = rng.uniform(-50.0, 4000.0);
            const double y = rng.uniform(-50.0, 4000.0);
            const double w = rng.uniform();
            const double lhs = normalized_score(w * x + (1.0 - w) * y, hopper);
            const double rhs = w * normalized_score(x, hopper) +
                               (1.0 - w) * normalized_score(y, hopper);
            CHECK(std::abs(lhs - rhs) <= 1e-10);
        }
    }
    SUBCASE("degenerate references are rejected") {
        CHECK_THROWS_AS(normalized_score(1.0, ScoreRef{2.0, 2.0}), std::invalid_argument);
    }
}
