#include "fdev/ppo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace fdev {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

uint64_t episode_seed(uint64_t seed, int iter, int episode) {
    return hash_combine(hash_combine(seed, static_cast<uint64_t>(iter)),
                        static_cast<uint64_t>(episode));
}

struct EpisodeData {
    std::vector<Transition> transitions;
    double npv = 0.0;
    bool failed = false;
};

}  // namespace

Action sample_action(const PolicyValueOutput& out, int row, const uint8_t* mask, Rng& rng) {
    const int hw = out.hw;
    Action act;
    const double p_skip = std::exp(out.drill_logp[2 * row]);
    act.w = rng.uniform() < p_skip ? 0 : 1;
    if (act.w == 1) {
        const double u = rng.uniform();
        double cum = 0.0;
        int last_valid = -1;
        act.u = -1;
        for (int c = 0; c < hw; ++c) {
            if (!mask[c]) continue;
            last_valid = c;
            cum += std::exp(out.loc_logp[static_cast<size_t>(row) * hw + c]);
            if (u < cum) {
                act.u = c;
                break;
            }
        }
        if (act.u < 0) act.u = last_valid;  // cumulative rounding
    }
    return act;
}

void PpoConfig::validate() const {
    if (clip_eps <= 0.0 || value_clip <= 0.0) throw std::invalid_argument("ppo: clips must be > 0");
    if (c_kl < 0.0 || c_vf < 0.0 || c_ent < 0.0)
        throw std::invalid_argument("ppo: loss weights must be >= 0");
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("ppo: lambda outside [0,1]");
    if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("ppo: gamma outside [0,1]");
    if (minibatch < 1 || epochs < 1) throw std::invalid_argument("ppo: minibatch/epochs must be >= 1");
    if (lr_init <= 0.0 || lr_final <= 0.0 || lr_decay_horizon <= 0.0)
        throw std::invalid_argument("ppo: learning-rate schedule must be positive");
}

TrajectoryBatch collect_rollouts(const NetworkParams& net, const RolloutConfig& rollout,
                                 const PpoConfig& ppo, uint64_t seed, int iter,
                                 int n_episodes, int workers) {
    if (n_episodes < 1) throw std::invalid_argument("collect_rollouts: n_episodes must be >= 1");
    const ArchConfig& a = net.arch;

    std::vector<EpisodeData> episodes(n_episodes);
    std::atomic<int> next{0};

    auto run_episode = [&](int ep) {
        Rng rng(episode_seed(seed, iter, ep));
        Scenario sc = sample_scenario(rollout.ranges, rng);
        Environment env(sc, rollout.solver, rollout.report_dt, rollout.norm);
        Observation obs = env.reset();
        if (obs.nc != a.nc || obs.nx != a.nx || obs.ny != a.ny)
            throw std::invalid_argument("collect_rollouts: observation shape does not match network");

        EpisodeData& ed = episodes[ep];
        bool done = false;
        while (!done) {
            const std::vector<uint8_t>& mask = env.action_mask();
            PolicyValueOutput out = forward(net, obs.data.data(), 1, mask.data());

            Action act = sample_action(out, 0, mask.data(), rng);

            Transition tr;
            tr.obs = obs.data;
            tr.mask = mask;
            tr.action = act;
            tr.logp_old = action_log_prob(out, 0, act);
            tr.value_old = out.value[0];
            tr.drill_logp_old = {out.drill_logp[0], out.drill_logp[1]};
            tr.loc_logp_old.assign(out.loc_logp.begin(), out.loc_logp.end());

            StageResult res = env.step(act);
            tr.reward = res.reward * ppo.reward_scale;
            tr.done = res.done;
            done = res.done;
            ed.transitions.push_back(std::move(tr));
            if (res.info.sim_failed) {
                ed.failed = true;
                break;
            }
            obs = std::move(res.obs);
        }
        ed.npv = env.total_reward();
    };

    workers = std::max(1, std::min(workers, n_episodes));
    if (workers == 1) {
        for (int ep = 0; ep < n_episodes; ++ep) run_episode(ep);
    } else {
        std::vector<std::thread> pool;
        std::atomic<bool> bad{false};
        for (int t = 0; t < workers; ++t)
            pool.emplace_back([&] {
                for (;;) {
                    const int ep = next.fetch_add(1);
                    if (ep >= n_episodes || bad.load()) return;
                    try {
                        run_episode(ep);
                    } catch (...) {
                        bad.store(true);
                        throw;
                    }
                }
            });
        for (auto& th : pool) th.join();
    }

    TrajectoryBatch batch;
    for (EpisodeData& ed : episodes) {
        if (ed.failed) {
            ++batch.episodes_failed;
            continue;
        }
        batch.episode_lengths.push_back(static_cast<int>(ed.transitions.size()));
        batch.episode_npv.push_back(ed.npv);
        for (Transition& tr : ed.transitions) batch.transitions.push_back(std::move(tr));
    }
    return batch;
}

void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                 const std::vector<uint8_t>& dones, double gamma, double lambda,
                 std::vector<double>& advantages, std::vector<double>& value_targets) {
    const size_t n = rewards.size();
    if (values.size() != n || dones.size() != n)
        throw std::invalid_argument("compute_gae: array lengths differ");
    advantages.assign(n, 0.0);
    value_targets.assign(n, 0.0);
    double running = 0.0;
    for (size_t t = n; t-- > 0;) {
        const double v_next = (dones[t] || t + 1 == n) ? 0.0 : values[t + 1];
        if (dones[t]) running = 0.0;
        const double delta = rewards[t] + gamma * v_next - values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
        value_targets[t] = running + values[t];
    }
}

void normalize_advantages(std::vector<double>& advantages) {
    if (advantages.empty()) return;
    const double n = static_cast<double>(advantages.size());
    double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
    double var = 0.0;
    for (double a : advantages) var += (a - mean) * (a - mean);
    const double std = std::sqrt(var / n);
    for (double& a : advantages) a = (a - mean) / (std + 1e-8);
}

LossComponents ppo_loss(const NetworkParams& net, const std::vector<Transition>& transitions,
                        const std::vector<double>& advantages,
                        const std::vector<double>& value_targets, const std::vector<int>& idx,
                        const PpoConfig& cfg, std::vector<double>& grads, int n_threads) {
    if (idx.empty()) throw std::invalid_argument("ppo_loss: empty minibatch");
    const ArchConfig& a = net.arch;
    const int hw = a.hw();
    const int n = static_cast<int>(idx.size());
    const double wgt = 1.0 / n;

    std::vector<double> obs(static_cast<size_t>(n) * a.nc * hw);
    std::vector<uint8_t> masks(static_cast<size_t>(n) * hw);
    for (int s = 0; s < n; ++s) {
        const Transition& tr = transitions[idx[s]];
        std::copy(tr.obs.begin(), tr.obs.end(), obs.begin() + static_cast<size_t>(s) * a.nc * hw);
        std::copy(tr.mask.begin(), tr.mask.end(), masks.begin() + static_cast<size_t>(s) * hw);
    }

    ForwardCache cache;
    PolicyValueOutput out = forward(net, obs.data(), n, masks.data(), &cache, n_threads);

    std::vector<double> d_drill(static_cast<size_t>(n) * 2, 0.0);
    std::vector<double> d_loc(static_cast<size_t>(n) * hw, 0.0);
    std::vector<double> d_val(n, 0.0);

    LossComponents comp;
    for (int s = 0; s < n; ++s) {
        const Transition& tr = transitions[idx[s]];
        const double* dl = out.drill_logp.data() + static_cast<size_t>(s) * 2;
        const double* ll = out.loc_logp.data() + static_cast<size_t>(s) * hw;
        double* gd = d_drill.data() + static_cast<size_t>(s) * 2;
        double* gl = d_loc.data() + static_cast<size_t>(s) * hw;

        // Clipped surrogate.
        const double adv = advantages[idx[s]];
        const double logp_new = action_log_prob(out, s, tr.action);
        const double rho = std::exp(logp_new - tr.logp_old);
        const double unclipped = rho * adv;
        const double clipped = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
        comp.pi += std::min(unclipped, clipped);
        // Zero gradient when the clipped branch is strictly active.
        const double dpi_dlogp = unclipped <= clipped ? rho * adv : 0.0;
        const double up = -wgt * dpi_dlogp;  // loss carries -L_pi
        gd[tr.action.w] += up;
        if (tr.action.w == 1) gl[tr.action.u] += up;

        // Closed-form KL over both heads on the shared valid support.
        double kl = 0.0;
        auto kl_head = [&](const double* lp_new, const double* lp_old, double* g, int m) {
            for (int i = 0; i < m; ++i) {
                if (!std::isfinite(lp_new[i]) || !std::isfinite(lp_old[i])) continue;
                if (cfg.kl_new_to_old) {
                    const double p = std::exp(lp_new[i]);
                    kl += p * (lp_new[i] - lp_old[i]);
                    g[i] += wgt * cfg.c_kl * p * (lp_new[i] - lp_old[i] + 1.0);
                } else {
                    const double po = std::exp(lp_old[i]);
                    kl += po * (lp_old[i] - lp_new[i]);
                    g[i] += wgt * cfg.c_kl * (-po);
                }
            }
        };
        kl_head(dl, tr.drill_logp_old.data(), gd, 2);
        kl_head(ll, tr.loc_logp_old.data(), gl, hw);
        comp.kl += kl;

        // Joint entropy H(drill) + p(drill) * H(location).
        double h_drill = 0.0, h_loc = 0.0;
        for (int i = 0; i < 2; ++i)
            if (std::isfinite(dl[i])) h_drill -= std::exp(dl[i]) * dl[i];
        for (int u = 0; u < hw; ++u)
            if (std::isfinite(ll[u])) h_loc -= std::exp(ll[u]) * ll[u];
        const double p_drill = std::exp(dl[1]);
        comp.entropy += h_drill + p_drill * h_loc;
        const double ce = -wgt * cfg.c_ent;  // loss carries -c_ent * H
        for (int i = 0; i < 2; ++i)
            if (std::isfinite(dl[i]))
                gd[i] += ce * (-std::exp(dl[i]) * (dl[i] + 1.0) + (i == 1 ? std::exp(dl[1]) * h_loc : 0.0));
        if (p_drill > 0.0)
            for (int u = 0; u < hw; ++u)
                if (std::isfinite(ll[u])) gl[u] += ce * (p_drill * (-std::exp(ll[u]) * (ll[u] + 1.0)));

        // Clipped value loss.
        const double v = out.value[s], t = value_targets[idx[s]], vo = tr.value_old;
        const double vc = vo + std::clamp(v - vo, -cfg.value_clip, cfg.value_clip);
        const double e1 = (v - t) * (v - t), e2 = (vc - t) * (vc - t);
        comp.vf += std::max(e1, e2);
        double dvf;
        if (e1 >= e2)
            dvf = 2.0 * (v - t);
        else
            dvf = std::abs(v - vo) < cfg.value_clip ? 2.0 * (vc - t) : 0.0;
        d_val[s] = wgt * cfg.c_vf * dvf;
    }

    comp.pi *= wgt;
    comp.kl *= wgt;
    comp.entropy *= wgt;
    comp.vf *= wgt;
    comp.total = -comp.pi + cfg.c_kl * comp.kl + cfg.c_vf * comp.vf - cfg.c_ent * comp.entropy;

    backward(net, cache, out, masks.data(), d_drill.data(), d_loc.data(), d_val.data(), grads,
             n_threads);
    return comp;
}

void adam_update(std::vector<double>& params, const std::vector<double>& grads,
                 AdamState& state, double lr) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam_update: size mismatch");
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        params[i] -= lr * (state.m[i] / bc1) / (std::sqrt(state.v[i] / bc2) + state.eps);
    }
}

double lr_at(const PpoConfig& cfg, double samples) {
    const double f = std::min(1.0, std::max(0.0, samples / cfg.lr_decay_horizon));
    return cfg.lr_init + (cfg.lr_final - cfg.lr_init) * f;
}

TrainResult train(const TrainConfig& cfg) {
    cfg.ppo.validate();
    cfg.rollout.ranges.validate();
    if (cfg.iterations < 1 || cfg.episodes_per_iter < 1)
        throw std::invalid_argument("train: iterations and episodes_per_iter must be >= 1");

    Rng init_rng(hash_combine(cfg.seed, 0x6e657477ULL));  // network init stream
    NetworkParams net = cfg.init_checkpoint.empty() ? init_params(cfg.arch, init_rng)
                                                    : load_checkpoint(cfg.init_checkpoint);

    TrainResult result;
    result.metrics_path = cfg.out_dir + "/metrics.csv";
    result.final_checkpoint = cfg.out_dir + "/checkpoint_final.bin";
    result.best_checkpoint = cfg.out_dir + "/checkpoint_best.bin";

    std::ofstream metrics(result.metrics_path);
    if (!metrics) throw std::runtime_error("train: cannot open " + result.metrics_path);
    metrics << "iter,samples,avg_npv,min_npv,loss_total,loss_vf,loss_pi,entropy,kl,lr,"
               "episodes_failed\n";

    AdamState adam(net.data.size());
    std::vector<double> grads(net.data.size(), 0.0);
    std::deque<double> npv_window;
    double best_rolling = -std::numeric_limits<double>::infinity();
    long samples = 0;
    int bad_streak = 0;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        TrajectoryBatch batch = collect_rollouts(net, cfg.rollout, cfg.ppo, cfg.seed, iter,
                                                 cfg.episodes_per_iter, cfg.workers);
        const int n = static_cast<int>(batch.transitions.size());

        double avg_npv = 0.0, min_npv = 0.0;
        if (!batch.episode_npv.empty()) {
            avg_npv = std::accumulate(batch.episode_npv.begin(), batch.episode_npv.end(), 0.0) /
                      static_cast<double>(batch.episode_npv.size());
            min_npv = *std::min_element(batch.episode_npv.begin(), batch.episode_npv.end());
        }

        const double lr = lr_at(cfg.ppo, static_cast<double>(samples));
        LossComponents avg_comp;
        int updates = 0;
        bool iter_bad = false;

        if (n > 0) {
            std::vector<double> rewards(n), values(n);
            std::vector<uint8_t> dones(n);
            for (int i = 0; i < n; ++i) {
                rewards[i] = batch.transitions[i].reward;
                values[i] = batch.transitions[i].value_old;
                dones[i] = batch.transitions[i].done ? 1 : 0;
            }
            std::vector<double> advantages, targets;
            compute_gae(rewards, values, dones, cfg.ppo.gamma, cfg.ppo.lambda, advantages,
                        targets);
            if (cfg.ppo.normalize_advantages) normalize_advantages(advantages);

            std::vector<int> order(n);
            std::iota(order.begin(), order.end(), 0);
            for (int epoch = 0; epoch < cfg.ppo.epochs && !iter_bad; ++epoch) {
                Rng shuffle_rng(hash_combine(episode_seed(cfg.seed, iter, epoch), 0x73687566ULL));
                for (int i = n - 1; i > 0; --i)
                    std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);
                for (int lo = 0; lo < n && !iter_bad; lo += cfg.ppo.minibatch) {
                    const int hi = std::min(n, lo + cfg.ppo.minibatch);
                    std::vector<int> idx(order.begin() + lo, order.begin() + hi);
                    std::fill(grads.begin(), grads.end(), 0.0);
                    LossComponents comp = ppo_loss(net, batch.transitions, advantages, targets,
                                                   idx, cfg.ppo, grads, cfg.workers);
                    if (!std::isfinite(comp.total)) {
                        std::fprintf(stderr,
                                     "train: non-finite loss at iter %d epoch %d "
                                     "(pi=%g vf=%g kl=%g ent=%g); iteration aborted\n",
                                     iter, epoch, comp.pi, comp.vf, comp.kl, comp.entropy);
                        iter_bad = true;
                        break;
                    }
                    adam_update(net.data, grads, adam, lr);
                    avg_comp.total += comp.total;
                    avg_comp.pi += comp.pi;
                    avg_comp.vf += comp.vf;
                    avg_comp.kl += comp.kl;
                    avg_comp.entropy += comp.entropy;
                    ++updates;
                }
            }
        }
        if (updates > 0) {
            avg_comp.total /= updates;
            avg_comp.pi /= updates;
            avg_comp.vf /= updates;
            avg_comp.kl /= updates;
            avg_comp.entropy /= updates;
        }

        samples += n;
        char row[512];
        std::snprintf(row, sizeof(row),
                      "%d,%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", iter,
                      samples, avg_npv, min_npv, avg_comp.total, avg_comp.vf, avg_comp.pi,
                      avg_comp.entropy, avg_comp.kl, lr, batch.episodes_failed);
        metrics << row;
        metrics.flush();
        result.iterations_run = iter + 1;

        bad_streak = iter_bad ? bad_streak + 1 : 0;
        if (bad_streak > 3) {
            result.ok = false;
            result.total_samples = samples;
            return result;
        }

        if (!batch.episode_npv.empty()) {
            npv_window.push_back(avg_npv);
            while (static_cast<int>(npv_window.size()) > cfg.npv_window) npv_window.pop_front();
            const double rolling =
                std::accumulate(npv_window.begin(), npv_window.end(), 0.0) /
                static_cast<double>(npv_window.size());
            if (rolling > best_rolling) {
                best_rolling = rolling;
                save_checkpoint(result.best_checkpoint, net,
                                {{"iter", std::to_string(iter)},
                                 {"rolling_avg_npv", std::to_string(rolling)}});
            }
        }
        if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(cfg.out_dir + "/checkpoint_latest.bin", net,
                            {{"iter", std::to_string(iter)}});
    }

    save_checkpoint(result.final_checkpoint, net,
                    {{"iter", std::to_string(cfg.iterations - 1)}});
    result.ok = true;
    result.total_samples = samples;
    result.best_rolling_npv = best_rolling;
    return result;
}

}  // namespace fdev
