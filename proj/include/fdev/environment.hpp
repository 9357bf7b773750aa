#pragma once

#include <cstdint>
#include <vector>

#include "fdev/scenario.hpp"

namespace fdev {

// Scaled N_c x nx x ny input tensor: 17 channels in 2D, 10*nz + 8 in 3D.
struct Observation {
    int nc = 0, nx = 0, ny = 0;
    std::vector<double> data;  // [c][j][i], row-major per channel

    double& chan(int c, int i, int j) { return data[(static_cast<size_t>(c) * ny + j) * nx + i]; }
    double chan(int c, int i, int j) const { return data[(static_cast<size_t>(c) * ny + j) * nx + i]; }
};

struct Action {
    int w = 0;  // 0 = skip, 1 = drill
    int u = 0;  // flat areal cell index, meaningful only when w = 1
};

struct StageInfo {
    int stage = 0;
    int wells_drilled = 0;
    bool sim_failed = false;
    double stage_oil = 0.0, stage_water = 0.0;  // produced surface volumes, bbl
};

struct StageResult {
    Observation obs;
    double reward = 0.0;  // stage NPV, $
    bool done = false;
    StageInfo info;
};

// Reference scales that map the scalar observation channels to O(1) values;
// config-overridable.
struct ObsNorm {
    double well_cost_volume_ref = 1e7;  // bbl, for well-cost-to-net-oil-price ratio
    double q_l_ref = 2.5e4;             // bbl/day
    double drill_days_ref = 240.0;      // days
};

// Per-cell action mask: 0 for inactive cells, drilled cells, and cells
// within Chebyshev distance <= min_spacing of a drilled well.
std::vector<uint8_t> build_action_mask(const std::vector<Well>& wells, const GridModel& grid,
                                       int min_spacing);

// One-pass NPV over a full rates history plus discounted drill costs;
// the telescoping audit counterpart of the per-stage rewards.
double npv_of_rates(const WellRates& rates, const std::vector<Well>& wells,
                    const EconomicModel& econ);

int observation_channels(int nz);

class Environment {
public:
    explicit Environment(Scenario scenario, SolverConfig solver = SolverConfig{},
                         double report_dt = 30.0, ObsNorm norm = ObsNorm{});

    Observation reset();
    StageResult step(const Action& action);

    const std::vector<uint8_t>& action_mask() const { return mask_; }
    int n_stages() const { return scenario_.n_stages; }
    int stage() const { return stage_; }
    bool done() const { return done_; }
    const Scenario& scenario() const { return scenario_; }
    const std::vector<Well>& wells() const { return wells_; }
    const ReservoirState& state() const { return state_; }
    const SimCase& sim_case() const { return case_; }
    // Full-episode report history with absolute times, for NPV audits.
    const WellRates& episode_rates() const { return episode_rates_; }
    double total_reward() const { return total_reward_; }

    Observation assemble_observation() const;

private:
    void rebuild_mask();

    Scenario scenario_;
    SolverConfig solver_;
    double report_dt_;
    ObsNorm norm_;
    SimCase case_;
    ReservoirState state_;
    std::vector<Well> wells_;
    std::vector<uint8_t> mask_;
    WellRates episode_rates_;
    int stage_ = 0;
    bool done_ = true;
    double total_reward_ = 0.0;

    // Static scaling references, computed at reset.
    double p_lo_ = 0.0, p_hi_ = 1.0;
    double trans_ref_x_ = 1.0, trans_ref_y_ = 1.0, trans_ref_z_ = 1.0, wi_ref_ = 1.0;
    double oilacc_hi_ = 1.0, mob_w_hi_ = 1.0, mob_o_hi_ = 1.0, drawdown_hi_ = 1.0;
    std::vector<double> trans_x_, trans_y_, trans_z_;  // per-cell +face transmissibility
};

}  // namespace fdev
