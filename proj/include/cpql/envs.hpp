#pragma once

#include <array>
#include <optional>
#include <string>

#include "cpql/dataset.hpp"
#include "cpql/mdp.hpp"

namespace cpql {

/// Seeded benchmark generator parameters.
struct EnvSpec {
    enum class Kind { Chain, Gridworld, Random, TwoStateToggle };
    Kind kind = Kind::Chain;
    std::uint64_t seed = 0;
    double gamma = 0.99;  // TwoStateToggle pins 0.5

    // chain
    int len = 8;
    double slip = 0.0;
    // gridworld
    int width = 4, height = 4, goal = 15;
    double step_cost = 0.0;
    // random
    int num_states = 8, num_actions = 3, branching = 3;
    double reward_sparsity = 0.5;

    json to_json() const;
    static EnvSpec from_json(const json& j);
};

/// Two states {s0,s1}, actions {stay,toggle}; toggle switches the state,
/// r(s1,stay)=1 and 0 elsewhere, gamma=0.5, start at s0. Every value is
/// hand-computable; used as the canonical fixture across modules.
FiniteMdp two_state_toggle();

/// Builds the environment; deterministic given the spec's seed.
/// chain: states 0..len-1, actions {left,right} with slip, reward 1 on the
///   right-end self-loop. gridworld: 4 moves with slip, absorbing goal with
///   reward 1, step_cost elsewhere. random: `branching` successors per pair
///   with normalized exponential weights, rewards nonzero with probability
///   reward_sparsity.
FiniteMdp make_env(const EnvSpec& spec);

enum class DatasetQuality { Random, Medium, Expert, Mixed };

struct RecipeReport {
    bool medium_bisection_ok = true;
    double medium_temperature = 1.0;
    double medium_return = 0.0;
};

/// Behavior-policy recipes: random = uniform, expert = greedy optimal,
/// medium = softmax over Q* with the temperature bisected until the return
/// lands within 10% of the random/expert midpoint (falls back to
/// temperature 1 and flags the report when bisection cannot bracket),
/// mixed = concatenation by mixed_ratio of (random, medium, expert)
/// episodes. `size` counts episodes.
TrajectoryDataset dataset_recipe(const FiniteMdp& mdp, DatasetQuality quality, int size,
                                 std::uint64_t seed, int horizon = 50,
                                 std::array<int, 3> mixed_ratio = {5, 3, 2},
                                 RecipeReport* report = nullptr);

/// Reference returns for score normalization.
struct ScoreRef {
    double ref_min = 0.0;
    double ref_max = 1.0;

    void validate() const;
};

/// 100 * (raw - ref_min) / (ref_max - ref_min).
double normalized_score(double raw_return, const ScoreRef& ref);

}  // namespace cpql
