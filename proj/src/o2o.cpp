#include "cpql/o2o.hpp"

#include <cmath>
#include <sstream>

namespace cpql {

void O2oConfig::validate() const {
    offline.validate();
    if (online_steps < 0) throw std::invalid_argument("o2o: online_steps must be >= 0");
    if (epsilon < 0.0 || epsilon > 1.0) throw std::invalid_argument("o2o: epsilon in [0,1]");
    if (exploration_temperature <= 0.0) {
        throw std::invalid_argument("o2o: exploration temperature must be positive");
    }
    if (replay_capacity < 1) throw std::invalid_argument("o2o: replay capacity must be >= 1");
    if (online_segment_len < 1) throw std::invalid_argument("o2o: segment length must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("o2o: eval_every must be >= 1");
    if (online_horizon < 0) throw std::invalid_argument("o2o: negative online horizon");
}

std::string O2oTrace::to_csv() const {
    std::ostringstream out;
    out << "phase,step,avg_q,j_eval\n";
    for (const auto& r : records) {
        out << (r.phase == Phase::Offline ? "offline" : "online") << ',' << r.step << ','
            << format_double(r.avg_q) << ',' << format_double(r.j_eval) << '\n';
    }
    return out.str();
}

namespace {

struct TaggedEpisode {
    Episode episode;
    EpisodeSource source = EpisodeSource::Online;
};

std::vector<std::pair<int, int>> draw_probe(const TrajectoryDataset& ds, int size,
                                            Rng& rng) {
    std::vector<std::pair<int, int>> probe;
    const auto segs = sample_segments_rng(ds.episodes, 1, size, rng);
    probe.reserve(segs.size());
    for (const auto& s : segs) probe.emplace_back(s.states[0], s.actions[0]);
    return probe;
}

int explore_action(const O2oConfig& cfg, const QTable& q, int state, Rng& rng) {
    if (cfg.exploration == Exploration::EpsilonGreedy) {
        if (rng.uniform() < cfg.epsilon) return rng.uniform_int(q.num_actions());
        int best = 0;
        for (int a = 1; a < q.num_actions(); ++a) {
            if (q.values(state, a) > q.values(state, best)) best = a;
        }
        return best;
    }
    const double m = q.values.row(state).maxCoeff();
    Eigen::VectorXd p =
        ((q.values.row(state).transpose().array() - m) / cfg.exploration_temperature)
            .exp()
            .matrix();
    p /= p.sum();
    return rng.categorical(p);
}

}  // namespace

O2oTrace run_offline_to_online(const FiniteMdp& mdp, const TrajectoryDataset& ds,
                               const O2oConfig& cfg) {
    cfg.validate();
    if (ds.empty()) throw std::invalid_argument("o2o: empty dataset");
    const int S = mdp.num_states, A = mdp.num_actions;
    const int horizon = cfg.online_horizon > 0 ? cfg.online_horizon : ds.meta.horizon;

    Rng run_rng(derive_seed(cfg.seed, 7));
    const auto probe = draw_probe(ds, std::min<std::int64_t>(cfg.offline.batch,
                                                             ds.total_steps()),
                                  run_rng);

    const EmpiricalModel emp = build_empirical_model(ds, S, A);
    SgdTrainer trainer(S, A, ds.meta.gamma, emp.behavior_policy(), cfg.offline);

    O2oTrace trace;
    trace.records.reserve(cfg.offline.iters + cfg.online_steps + 1);

    // Phase 1: conservative training on the static dataset.
    for (int it = 0; it < cfg.offline.iters; ++it) {
        const auto segments = sample_segments_rng(ds.episodes, cfg.offline.segment_len,
                                                  cfg.offline.batch, trainer.rng());
        trainer.step(segments, cfg.offline.alpha);
        O2oRecord rec;
        rec.phase = Phase::Offline;
        rec.step = it;
        rec.avg_q = trainer.average_q(probe);
        if (it % cfg.eval_every == 0 || it + 1 == cfg.offline.iters) {
            rec.j_eval = expected_return(mdp, trainer.policy());
        }
        trace.records.push_back(rec);
    }

    // Boundary record: same tables, before any online update.
    trace.transition_index = static_cast<int>(trace.records.size());
    {
        O2oRecord rec;
        rec.phase = Phase::Online;
        rec.step = 0;
        rec.avg_q = trainer.average_q(probe);
        rec.j_eval = expected_return(mdp, trainer.exploration_greedy());
        trace.records.push_back(rec);
    }

    // Phase 2: act, replay, update without the conservatism term.
    std::deque<TaggedEpisode> replay;
    if (cfg.retain_offline_data) {
        for (const auto& ep : ds.episodes) {
            replay.push_back(TaggedEpisode{ep, EpisodeSource::Offline});
            if (static_cast<int>(replay.size()) > cfg.replay_capacity) replay.pop_front();
        }
    }
    int episodes_completed = 0;
    Episode current;
    int state = run_rng.categorical(mdp.d0);
    current.states.push_back(state);
    std::vector<Episode> replay_episodes;

    for (int step = 1; step <= cfg.online_steps; ++step) {
        const int a = explore_action(cfg, trainer.combined(), state, run_rng);
        current.actions.push_back(a);
        current.rewards.push_back(mdp.r(state, a));
        state = run_rng.categorical(mdp.P[a].row(state).transpose());
        current.states.push_back(state);
        if (current.length() >= horizon) {
            replay.push_back(TaggedEpisode{std::move(current), EpisodeSource::Online});
            if (static_cast<int>(replay.size()) > cfg.replay_capacity) replay.pop_front();
            current = Episode{};
            state = run_rng.categorical(mdp.d0);
            current.states.push_back(state);
            ++episodes_completed;
        }

        if (!replay.empty()) {
            replay_episodes.clear();
            replay_episodes.reserve(replay.size());
            for (const auto& t : replay) replay_episodes.push_back(t.episode);
            const auto segments =
                sample_segments_rng(replay_episodes, cfg.online_segment_len,
                                    cfg.offline.batch, trainer.rng());
            trainer.step(segments, /*alpha=*/0.0);
        }

        O2oRecord rec;
        rec.phase = Phase::Online;
        rec.step = step;
        rec.avg_q = trainer.average_q(probe);
        rec.episodes_completed = episodes_completed;
        if (step % cfg.eval_every == 0 || step == cfg.online_steps) {
            rec.j_eval = expected_return(mdp, trainer.exploration_greedy());
        }
        trace.records.push_back(rec);
    }

    trace.q_final = trainer.combined();
    trace.policy_final = trainer.policy();
    trace.replay_provenance.reserve(replay.size());
    for (const auto& t : replay) trace.replay_provenance.push_back(t.source);
    return trace;
}

std::pair<O2oTrace, O2oTrace> compare_transition_baselines(const FiniteMdp& mdp,
                                                           const TrajectoryDataset& ds,
                                                           const O2oConfig& cfg,
                                                           TransitionBaseline baseline) {
    O2oConfig main_cfg = cfg;
    main_cfg.seed = derive_seed(cfg.seed, 0);
    main_cfg.offline.seed = derive_seed(cfg.seed, 100);

    O2oConfig base_cfg = cfg;
    base_cfg.seed = derive_seed(cfg.seed, 1);
    base_cfg.offline.seed = derive_seed(cfg.seed, 101);
    if (baseline == TransitionBaseline::CqlToQlearning) {
        base_cfg.offline.lambda = 0.0;
        base_cfg.offline.segment_len = 1;
        base_cfg.online_segment_len = 1;
    }

    return {run_offline_to_online(mdp, ds, main_cfg),
            run_offline_to_online(mdp, ds, base_cfg)};
}

}  // namespace cpql
