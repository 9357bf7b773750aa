#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fdev/environment.hpp"
#include "fdev/nnet.hpp"

namespace fdev {

struct Transition {
    std::vector<double> obs;    // nc*hw, network layout
    std::vector<uint8_t> mask;  // hw
    Action action;
    double logp_old = 0.0;
    double value_old = 0.0;
    double reward = 0.0;  // trainer-scaled units
    bool done = false;
    // Full old head distributions, for closed-form KL against the snapshot.
    std::array<double, 2> drill_logp_old{};
    std::vector<double> loc_logp_old;  // hw
};

struct TrajectoryBatch {
    std::vector<Transition> transitions;
    std::vector<int> episode_lengths;  // completed episodes, in episode order
    std::vector<double> episode_npv;   // raw $, aligned with episode_lengths
    int episodes_failed = 0;
};

struct PpoConfig {
    double gamma = 1.0;
    double lambda = 0.95;
    double clip_eps = 0.2;    // ratio clip ε
    double value_clip = 0.2;  // value clip η
    double c_kl = 0.2;
    double c_vf = 0.1;
    double c_ent = 0.001;
    double lr_init = 1e-3;
    double lr_final = 5e-6;
    double lr_decay_horizon = 2e5;  // samples
    int minibatch = 256;
    int epochs = 5;
    double reward_scale = 1e-9;  // $ -> training units
    bool normalize_advantages = true;
    bool kl_new_to_old = true;  // KL(new||old); false flips the direction

    void validate() const;
};

struct RolloutConfig {
    ScenarioRanges ranges;
    SolverConfig solver;
    ObsNorm norm;
    double report_dt = 30.0;
};

// Inverse-CDF sample from the joint (drill, location) policy for one batch
// row; masked cells have probability exactly zero.
Action sample_action(const PolicyValueOutput& out, int row, const uint8_t* mask, Rng& rng);

// Runs n_episodes full episodes sampling from the policy snapshot. Episode
// RNG streams are keyed on (seed, iter, episode index), so results do not
// depend on how episodes are scheduled across workers. Hard simulator
// failures drop the episode and increment episodes_failed.
TrajectoryBatch collect_rollouts(const NetworkParams& net, const RolloutConfig& rollout,
                                 const PpoConfig& ppo, uint64_t seed, int iter,
                                 int n_episodes, int workers);

// A_t = sum_{l>=t} (gamma*lambda)^{l-t} delta_l with terminal bootstrap 0;
// value_targets = advantages + values. No normalization here.
void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                 const std::vector<uint8_t>& dones, double gamma, double lambda,
                 std::vector<double>& advantages, std::vector<double>& value_targets);

// In-place mean-0 / std-1 scaling (eps = 1e-8).
void normalize_advantages(std::vector<double>& advantages);

struct LossComponents {
    double total = 0.0;
    double pi = 0.0;       // clipped surrogate objective (higher is better)
    double vf = 0.0;       // clipped value loss
    double kl = 0.0;       // closed-form KL over both heads
    double entropy = 0.0;  // joint policy entropy
};

// Minibatch loss L = -L_pi + c_kl*KL + c_vf*L_vf - c_ent*H and its exact
// gradient, accumulated (+=) into grads (mean over idx).
LossComponents ppo_loss(const NetworkParams& net, const std::vector<Transition>& transitions,
                        const std::vector<double>& advantages,
                        const std::vector<double>& value_targets, const std::vector<int>& idx,
                        const PpoConfig& cfg, std::vector<double>& grads, int n_threads = 1);

struct AdamState {
    std::vector<double> m, v;
    long step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamState(size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

void adam_update(std::vector<double>& params, const std::vector<double>& grads,
                 AdamState& state, double lr);

// Linear decay from lr_init to lr_final over lr_decay_horizon samples,
// constant afterwards.
double lr_at(const PpoConfig& cfg, double samples);

struct TrainConfig {
    RolloutConfig rollout;
    ArchConfig arch;
    PpoConfig ppo;
    int iterations = 100;
    int episodes_per_iter = 32;
    uint64_t seed = 0;
    int workers = 1;
    int checkpoint_every = 20;
    int npv_window = 10;  // rolling average window for the best checkpoint
    std::string out_dir = ".";
    // Optional warm start; empty = fresh init.
    std::string init_checkpoint;
};

struct TrainResult {
    bool ok = false;
    int iterations_run = 0;
    long total_samples = 0;
    double best_rolling_npv = 0.0;
    std::string metrics_path, final_checkpoint, best_checkpoint;
};

// Full training loop: rollouts -> GAE -> shuffled minibatch epochs -> Adam,
// with an append-only metrics CSV and periodic/best checkpoints. Stops with
// ok = false after more than 3 consecutive non-finite-loss iterations.
TrainResult train(const TrainConfig& cfg);

}  // namespace fdev
