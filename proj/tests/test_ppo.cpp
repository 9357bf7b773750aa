#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fdev/ppo.hpp"

using namespace fdev;

namespace {

ArchConfig tiny_arch(int hw_side = 6) {
    ArchConfig a;
    a.nc = 3;
    a.nx = hw_side;
    a.ny = hw_side;
    a.trunk_channels = 6;
    a.n_res_blocks = 1;
    a.head_channels = 6;
    a.head_reduced = 2;
    a.embed = 8;
    return a;
}

ScenarioRanges desk_ranges() {
    ScenarioRanges r;
    r.nx = 8;
    r.ny = 8;
    r.nz = 1;
    r.dz_sgs = {150, 15, 4, 8};
    r.project_years = {4, 5};
    r.drill_days = {240};
    r.max_wells = 6;
    return r;
}

// A transition whose stored snapshot matches the given network exactly, so
// the probability ratio is one and the KL term vanishes.
Transition on_policy_transition(const NetworkParams& net, uint64_t seed, const Action& action,
                                double reward) {
    const ArchConfig& a = net.arch;
    Transition t;
    Rng rng(seed);
    t.obs.resize(static_cast<size_t>(a.nc) * a.hw());
    for (double& v : t.obs) v = rng.uniform(-0.5, 0.5);
    t.mask.assign(a.hw(), 1);
    t.action = action;
    PolicyValueOutput out = forward(net, t.obs.data(), 1, t.mask.data());
    t.logp_old = action_log_prob(out, 0, action);
    t.value_old = out.value[0];
    t.reward = reward;
    t.done = true;
    t.drill_logp_old = {out.drill_logp[0], out.drill_logp[1]};
    t.loc_logp_old = out.loc_logp;
    return t;
}

}  // namespace

TEST_CASE("GAE hand-worked examples") {
    std::vector<double> adv, tgt;

    SUBCASE("two steps, gamma = lambda = 1") {
        compute_gae({1.0, 1.0}, {0.5, 0.5}, {0, 1}, 1.0, 1.0, adv, tgt);
        CHECK(adv[0] == doctest::Approx(1.5).epsilon(1e-15));
        CHECK(adv[1] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(tgt[0] == doctest::Approx(2.0).epsilon(1e-15));
        CHECK(tgt[1] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("lambda = 0 reduces to one-step TD errors") {
        compute_gae({1.0, 2.0, 3.0}, {0.3, 0.6, 0.9}, {0, 0, 1}, 0.9, 0.0, adv, tgt);
        CHECK(adv[0] == doctest::Approx(1.0 + 0.9 * 0.6 - 0.3).epsilon(1e-15));
        CHECK(adv[1] == doctest::Approx(2.0 + 0.9 * 0.9 - 0.6).epsilon(1e-15));
        CHECK(adv[2] == doctest::Approx(3.0 - 0.9).epsilon(1e-15));
    }
    SUBCASE("done flag resets the recursion between episodes") {
        // Two one-step episodes concatenated: each stands alone.
        compute_gae({1.0, 2.0}, {0.4, 0.7}, {1, 1}, 0.99, 0.95, adv, tgt);
        CHECK(adv[0] == doctest::Approx(1.0 - 0.4).epsilon(1e-15));
        CHECK(adv[1] == doctest::Approx(2.0 - 0.7).epsilon(1e-15));
    }
    SUBCASE("zero rewards and values give zero advantages") {
        compute_gae({0, 0, 0}, {0, 0, 0}, {0, 0, 1}, 1.0, 0.95, adv, tgt);
        for (double v : adv) CHECK(v == 0.0);
        for (double v : tgt) CHECK(v == 0.0);
    }
}

TEST_CASE("advantage normalization has zero mean and unit variance") {
    Rng rng(3);
    std::vector<double> adv(257);
    for (double& v : adv) v = rng.uniform(-5.0, 20.0);
    normalize_advantages(adv);
    double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / adv.size();
    double var = 0.0;
    for (double v : adv) var += (v - mean) * (v - mean);
    var /= adv.size();
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("learning-rate schedule endpoints and midpoint") {
    PpoConfig cfg;
    cfg.lr_init = 1e-3;
    cfg.lr_final = 5e-6;
    cfg.lr_decay_horizon = 2e5;
    CHECK(lr_at(cfg, 0) == 1e-3);
    CHECK(lr_at(cfg, 1e5) == doctest::Approx((1e-3 + 5e-6) / 2).epsilon(1e-12));
    CHECK(lr_at(cfg, 2e5) == doctest::Approx(5e-6).epsilon(1e-12));
    CHECK(lr_at(cfg, 1e9) == doctest::Approx(5e-6).epsilon(1e-12));
}

TEST_CASE("Adam identities") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        std::vector<double> p = {1.0, -2.0, 3.0};
        AdamState st(3);
        adam_update(p, {0, 0, 0}, st, 1e-2);
        CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
    }
    SUBCASE("first step moves approximately lr against the gradient sign") {
        std::vector<double> p = {0.0, 0.0};
        AdamState st(2);
        adam_update(p, {0.5, -2.0}, st, 1e-3);
        CHECK(p[0] == doctest::Approx(-1e-3).epsilon(1e-6));
        CHECK(p[1] == doctest::Approx(1e-3).epsilon(1e-6));
    }
    SUBCASE("updates are deterministic") {
        std::vector<double> p1 = {0.3, 0.7}, p2 = {0.3, 0.7};
        AdamState s1(2), s2(2);
        for (int k = 0; k < 5; ++k) {
            adam_update(p1, {0.1 * k, -0.2}, s1, 1e-3);
            adam_update(p2, {0.1 * k, -0.2}, s2, 1e-3);
        }
        CHECK(p1 == p2);
    }
}

TEST_CASE("loss components at ratio one match hand arithmetic") {
    ArchConfig a = tiny_arch();
    Rng rng(7);
    NetworkParams net = init_params(a, rng);
    // Heads are zero-initialized, so the policy is uniform over valid actions.
    std::vector<Transition> ts;
    ts.push_back(on_policy_transition(net, 11, Action{0, 0}, 0.4));
    std::vector<double> adv = {2.0};
    std::vector<double> tgt = {ts[0].value_old + 0.3};
    PpoConfig cfg;
    std::vector<double> grads(net.data.size(), 0.0);
    LossComponents lc = ppo_loss(net, ts, adv, tgt, {0}, cfg, grads);

    CHECK(lc.pi == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(lc.kl == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lc.vf == doctest::Approx(0.3 * 0.3).epsilon(1e-9));
    // Uniform joint policy over skip + 36 drill cells:
    // H = ln 2 + 0.5 * ln(36).
    const double h = std::log(2.0) + 0.5 * std::log(36.0);
    CHECK(lc.entropy == doctest::Approx(h).epsilon(1e-12));
    CHECK(lc.total ==
          doctest::Approx(-lc.pi + cfg.c_kl * lc.kl + cfg.c_vf * lc.vf - cfg.c_ent * lc.entropy)
              .epsilon(1e-12));
}

TEST_CASE("strictly clipped ratios contribute a constant with zero gradient") {
    ArchConfig a = tiny_arch();
    Rng rng(9);
    NetworkParams net = init_params(a, rng);
    PpoConfig cfg;
    cfg.c_kl = cfg.c_vf = cfg.c_ent = 0.0;

    SUBCASE("positive advantage, ratio above 1 + eps") {
        Transition t = on_policy_transition(net, 21, Action{0, 0}, 0.0);
        t.logp_old = t.logp_old - 0.5;  // ratio = e^0.5 > 1.2
        std::vector<double> grads(net.data.size(), 0.0);
        LossComponents lc = ppo_loss(net, {t}, {1.0}, {t.value_old}, {0}, cfg, grads);
        CHECK(lc.pi == doctest::Approx(1.2).epsilon(1e-12));
        CHECK(lc.total == doctest::Approx(-1.2).epsilon(1e-12));
        for (double g : grads) CHECK(g == 0.0);
    }
    SUBCASE("negative advantage, ratio below 1 - eps") {
        Transition t = on_policy_transition(net, 22, Action{0, 0}, 0.0);
        t.logp_old = t.logp_old + 0.5;  // ratio = e^-0.5 < 0.8
        std::vector<double> grads(net.data.size(), 0.0);
        LossComponents lc = ppo_loss(net, {t}, {-1.0}, {t.value_old}, {0}, cfg, grads);
        CHECK(lc.pi == doctest::Approx(-0.8).epsilon(1e-12));
        for (double g : grads) CHECK(g == 0.0);
    }
}

TEST_CASE("loss gradient matches central finite differences") {
    ArchConfig a = tiny_arch();
    Rng rng(31);
    NetworkParams net = init_params(a, rng);
    for (const LayerRef* l : {&net.pdrill, &net.ploc})
        for (size_t k = 0; k < l->w_size; ++k) net.data[l->w + k] = 0.05 * rng.normal();

    // Slightly perturbed snapshot network provides the "old" distributions,
    // keeping ratios near one and away from the clip boundaries.
    NetworkParams old_net = net;
    for (double& v : old_net.data) v += 1e-3 * rng.normal();

    std::vector<Transition> ts;
    std::vector<double> adv, tgt;
    Rng arng(33);
    for (int s = 0; s < 4; ++s) {
        Action act = (s % 2 == 0) ? Action{0, 0} : Action{1, arng.uniform_int(a.hw())};
        Transition t = on_policy_transition(net, 100 + s, act, 0.0);
        PolicyValueOutput oo = forward(old_net, t.obs.data(), 1, t.mask.data());
        t.logp_old = action_log_prob(oo, 0, act);
        t.value_old = oo.value[0];
        t.drill_logp_old = {oo.drill_logp[0], oo.drill_logp[1]};
        t.loc_logp_old = oo.loc_logp;
        ts.push_back(std::move(t));
        adv.push_back(arng.uniform(-1.0, 1.0));
        tgt.push_back(ts.back().value_old + arng.uniform(-0.05, 0.05));
    }
    std::vector<int> idx = {0, 1, 2, 3};

    for (bool dir : {true, false}) {
        PpoConfig cfg;
        cfg.clip_eps = 0.5;     // wide clips: FD never straddles a kink
        cfg.value_clip = 0.5;
        cfg.kl_new_to_old = dir;
        std::vector<double> grads(net.data.size(), 0.0);
        ppo_loss(net, ts, adv, tgt, idx, cfg, grads);

        Rng prng(35);
        double max_rel = 0.0;
        const double h = 1e-5;
        for (int k = 0; k < 40; ++k) {
            const size_t i = prng.uniform_int(static_cast<int>(net.data.size()));
            NetworkParams p = net;
            std::vector<double> dummy(net.data.size(), 0.0);
            p.data[i] += h;
            const double lp = ppo_loss(p, ts, adv, tgt, idx, cfg, dummy).total;
            p.data[i] = net.data[i] - h;
            const double lm = ppo_loss(p, ts, adv, tgt, idx, cfg, dummy).total;
            const double fd = (lp - lm) / (2 * h);
            const double scale = std::max({std::abs(fd), std::abs(grads[i]), 1e-6});
            max_rel = std::max(max_rel, std::abs(fd - grads[i]) / scale);
        }
        CHECK(max_rel <= 1e-4);
    }
}

TEST_CASE("rollouts are deterministic and respect action masks") {
    ScenarioRanges ranges = desk_ranges();
    ArchConfig a;
    a.nc = observation_channels(ranges.nz);
    a.nx = ranges.nx;
    a.ny = ranges.ny;
    a.trunk_channels = 4;
    a.n_res_blocks = 1;
    a.head_channels = 4;
    a.head_reduced = 2;
    a.embed = 8;
    Rng rng(41);
    NetworkParams net = init_params(a, rng);

    RolloutConfig rollout;
    rollout.ranges = ranges;
    rollout.report_dt = 60.0;
    PpoConfig ppo;

    TrajectoryBatch b1 = collect_rollouts(net, rollout, ppo, 123, 0, 3, 1);
    TrajectoryBatch b2 = collect_rollouts(net, rollout, ppo, 123, 0, 3, 2);

    REQUIRE(b1.transitions.size() == b2.transitions.size());
    CHECK(b1.episode_npv == b2.episode_npv);
    for (size_t k = 0; k < b1.transitions.size(); ++k) {
        const Transition& t = b1.transitions[k];
        const Transition& u = b2.transitions[k];
        CHECK(t.action.w == u.action.w);
        CHECK(t.action.u == u.action.u);
        CHECK(t.obs == u.obs);
        CHECK(t.reward == u.reward);
        if (t.action.w) CHECK(t.mask[t.action.u] == 1);
        CHECK(std::isfinite(t.reward));
        CHECK(std::isfinite(t.logp_old));
        CHECK(t.loc_logp_old.size() == static_cast<size_t>(a.hw()));
    }
    const int total = std::accumulate(b1.episode_lengths.begin(), b1.episode_lengths.end(), 0);
    CHECK(total == static_cast<int>(b1.transitions.size()));
    // Exactly one done flag per episode, at its final transition.
    int dones = 0;
    for (const Transition& t : b1.transitions) dones += t.done ? 1 : 0;
    CHECK(dones == static_cast<int>(b1.episode_lengths.size()));

    // A different (seed, iter) stream gives different trajectories.
    TrajectoryBatch b3 = collect_rollouts(net, rollout, ppo, 123, 1, 3, 1);
    CHECK(b3.episode_npv != b1.episode_npv);
}

TEST_CASE("training smoke run produces metrics and a loadable checkpoint") {
    const std::string out = "/tmp/fdev_test_train";
    std::filesystem::remove_all(out);
    std::filesystem::create_directories(out);

    TrainConfig cfg;
    cfg.rollout.ranges = desk_ranges();
    cfg.rollout.report_dt = 60.0;
    cfg.arch.nc = observation_channels(1);
    cfg.arch.nx = 8;
    cfg.arch.ny = 8;
    cfg.arch.trunk_channels = 4;
    cfg.arch.n_res_blocks = 1;
    cfg.arch.head_channels = 4;
    cfg.arch.head_reduced = 2;
    cfg.arch.embed = 8;
    cfg.ppo.minibatch = 32;
    cfg.ppo.epochs = 2;
    cfg.iterations = 2;
    cfg.episodes_per_iter = 3;
    cfg.seed = 7;
    cfg.out_dir = out;

    TrainResult res = train(cfg);
    CHECK(res.ok);
    CHECK(res.iterations_run == 2);
    CHECK(res.total_samples > 0);

    std::ifstream metrics(res.metrics_path);
    REQUIRE(metrics.good());
    std::string line;
    std::getline(metrics, line);
    CHECK(line ==
          "iter,samples,avg_npv,min_npv,loss_total,loss_vf,loss_pi,entropy,kl,lr,episodes_failed");
    int rows = 0;
    while (std::getline(metrics, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);

    NetworkParams loaded = load_checkpoint(res.final_checkpoint);
    CHECK(loaded.data.size() > 0);
    CHECK(loaded.arch.nx == 8);

    std::filesystem::remove_all(out);
}
