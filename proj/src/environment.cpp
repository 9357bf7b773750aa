#include "fdev/environment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fdev {

int observation_channels(int nz) { return nz == 1 ? 17 : 10 * nz + 8; }

std::vector<uint8_t> build_action_mask(const std::vector<Well>& wells, const GridModel& grid,
                                       int min_spacing) {
    std::vector<uint8_t> mask(static_cast<size_t>(grid.nx) * grid.ny, 0);
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i)
            mask[grid.areal(i, j)] = grid.is_active(grid.cell(i, j, 0)) ? 1 : 0;
    for (const Well& w : wells)
        for (int j = std::max(0, w.j - min_spacing); j <= std::min(grid.ny - 1, w.j + min_spacing); ++j)
            for (int i = std::max(0, w.i - min_spacing); i <= std::min(grid.nx - 1, w.i + min_spacing); ++i)
                mask[grid.areal(i, j)] = 0;
    return mask;
}

double npv_of_rates(const WellRates& rates, const std::vector<Well>& wells,
                    const EconomicModel& econ) {
    double npv = 0.0;
    for (const RatesRecord& rec : rates) {
        const double disc = econ.discount(rec.t);
        for (const WellStepRates& w : rec.wells)
            npv += disc * ((econ.oil_price - econ.opex) * w.q_o - econ.water_cost * w.q_w) * rec.dt;
    }
    for (const Well& w : wells)
        npv -= econ.well_cost * econ.discount(w.drill_stage * econ.drill_days);
    return npv;
}

Environment::Environment(Scenario scenario, SolverConfig solver, double report_dt, ObsNorm norm)
    : scenario_(std::move(scenario)), solver_(solver), report_dt_(report_dt), norm_(norm) {}

namespace {

double median_positive(std::vector<double> v) {
    v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !(x > 0.0); }), v.end());
    if (v.empty()) return 1.0;
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace

Observation Environment::reset() {
    case_ = build_sim_case(scenario_);
    state_ = case_.init;
    wells_.clear();
    episode_rates_.clear();
    stage_ = 0;
    done_ = false;
    total_reward_ = 0.0;

    const GridModel& g = scenario_.grid;
    const int n = g.num_cells();
    trans_x_.assign(n, 0.0);
    trans_y_.assign(n, 0.0);
    trans_z_.assign(n, 0.0);
    for (const Connection& c : case_.conns) {
        if (c.dir == 'x') trans_x_[c.a] = c.gamma;
        else if (c.dir == 'y') trans_y_[c.a] = c.gamma;
        else trans_z_[c.a] = c.gamma;
    }
    trans_ref_x_ = median_positive(trans_x_);
    trans_ref_y_ = median_positive(trans_y_);
    trans_ref_z_ = median_positive(trans_z_);
    wi_ref_ = median_positive(case_.wi_map);

    double p_min = 1e300, p_max = -1e300;
    double acc_hi = 0.0;
    for (int c = 0; c < n; ++c) {
        if (!g.is_active(c)) continue;
        p_min = std::min(p_min, state_.p[c]);
        p_max = std::max(p_max, state_.p[c]);
        const PhaseProperties pr = phase_properties(state_.p[c], state_.sw[c], scenario_.fluid);
        acc_hi = std::max(acc_hi, g.pore_volume_bbl(c) * (1.0 - state_.sw[c]) / pr.B_o);
    }
    p_lo_ = 0.5 * p_min;
    p_hi_ = std::max(p_max, p_lo_ + 1.0);
    oilacc_hi_ = std::max(acc_hi, 1e-12);
    mob_w_hi_ = scenario_.fluid.k_rwe / scenario_.fluid.mu_w_ref;
    mob_o_hi_ = scenario_.fluid.k_roe / scenario_.fluid.mu_o_ref;
    drawdown_hi_ = std::max(p_max - scenario_.bhp, 1.0);

    rebuild_mask();
    return assemble_observation();
}

void Environment::rebuild_mask() {
    mask_ = build_action_mask(wells_, scenario_.grid, scenario_.constraints.min_spacing);
}

Observation Environment::assemble_observation() const {
    const GridModel& g = scenario_.grid;
    const bool is3d = g.nz > 1;
    Observation obs;
    obs.nx = g.nx;
    obs.ny = g.ny;
    obs.nc = observation_channels(g.nz);
    obs.data.assign(static_cast<size_t>(obs.nc) * g.nx * g.ny, 0.0);

    const double t = state_.t;
    const EconomicModel& econ = scenario_.econ;
    auto nonlin = [](double x, double ref) { return x / (x + ref); };

    int ch = 0;
    // Spatial channels, per layer in 3D.
    for (int l = 0; l < g.nz; ++l) {
        const int per_layer = is3d ? 10 : 9;
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const int c = g.cell(i, j, l);
                if (!g.is_active(c)) continue;
                const PhaseProperties pr = phase_properties(state_.p[c], state_.sw[c], scenario_.fluid);
                int k = ch;
                obs.chan(k++, i, j) = (state_.p[c] - p_lo_) / (p_hi_ - p_lo_);
                obs.chan(k++, i, j) = state_.sw[c];
                obs.chan(k++, i, j) = nonlin(trans_x_[c], trans_ref_x_);
                obs.chan(k++, i, j) = nonlin(trans_y_[c], trans_ref_y_);
                if (is3d) obs.chan(k++, i, j) = nonlin(trans_z_[c], trans_ref_z_);
                obs.chan(k++, i, j) =
                    g.pore_volume_bbl(c) * (1.0 - state_.sw[c]) / pr.B_o / oilacc_hi_;
                obs.chan(k++, i, j) = pr.krw / pr.mu_w / mob_w_hi_;
                obs.chan(k++, i, j) = pr.kro / pr.mu_o / mob_o_hi_;
                obs.chan(k++, i, j) = nonlin(case_.wi_map[c], wi_ref_);
                obs.chan(k++, i, j) = std::max(state_.p[c] - scenario_.bhp, 0.0) / drawdown_hi_;
            }
        ch += per_layer;
    }
    // Well location mask.
    const int mask_ch = ch++;
    for (const Well& w : wells_) obs.chan(mask_ch, w.i, w.j) = 1.0;
    // Scalar channels, broadcast to constant maps.
    const double net_oil = econ.oil_price - econ.opex;
    const double scalars[7] = {
        econ.well_cost / (net_oil * norm_.well_cost_volume_ref),
        econ.water_cost / std::max(net_oil, 1e-12),
        econ.discount(t),
        (econ.project_days - t) / econ.project_days,
        scenario_.constraints.q_l_max / norm_.q_l_ref,
        econ.drill_days / norm_.drill_days_ref,
        scenario_.constraints.wc_limit,
    };
    for (double s : scalars) {
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) obs.chan(ch, i, j) = s;
        ++ch;
    }

    // Mask channel stays 0/1; everything else is clamped to the contract
    // band. Non-finite values indicate a bug upstream.
    for (int c = 0; c < obs.nc; ++c)
        for (size_t k = static_cast<size_t>(c) * g.nx * g.ny,
                    end = k + static_cast<size_t>(g.nx) * g.ny;
             k < end; ++k) {
            if (!std::isfinite(obs.data[k]))
                throw std::runtime_error("assemble_observation: non-finite channel value");
            if (c != mask_ch) obs.data[k] = std::clamp(obs.data[k], -0.1, 1.1);
        }
    return obs;
}

StageResult Environment::step(const Action& action) {
    if (done_) throw std::logic_error("Environment::step: episode is done");
    if (action.w != 0 && action.w != 1)
        throw std::invalid_argument("Environment::step: invalid drill flag");
    if (action.w == 1) {
        if (action.u < 0 || action.u >= scenario_.grid.nx * scenario_.grid.ny ||
            !mask_[action.u])
            throw std::invalid_argument("Environment::step: action violates the mask");
    }

    StageResult res;
    res.info.stage = stage_;
    const EconomicModel& econ = scenario_.econ;
    const double t_start = state_.t;
    double reward = 0.0;

    if (action.w == 1) {
        Well w;
        w.i = action.u % scenario_.grid.nx;
        w.j = action.u / scenario_.grid.nx;
        w.r_w = 0.3;
        w.skin = scenario_.skin;
        w.bhp = scenario_.bhp;
        w.control_bhp = scenario_.bhp;
        w.drill_stage = stage_;
        wells_.push_back(w);
        reward -= econ.well_cost * econ.discount(t_start);
    }

    const bool final_stage = stage_ + 1 >= scenario_.n_stages;
    const double t_target =
        final_stage ? econ.project_days
                    : std::min((stage_ + 1) * econ.drill_days, econ.project_days);

    WellRates rates;
    bool failed = false;
    if (t_target > state_.t + 1e-9) {
        std::ostringstream ctx;
        ctx << "scenario seed " << scenario_.seed << ", stage " << stage_;
        try {
            rates = simulate_interval(state_, t_target, report_dt_, scenario_.grid,
                                      scenario_.fluid, case_.conns, wells_,
                                      scenario_.constraints.q_l_max,
                                      scenario_.constraints.wc_limit, solver_, ctx.str(),
                                      &rates);
        } catch (const SimulationFailure&) {
            failed = true;  // partial rates already captured
        }
    }
    for (const RatesRecord& rec : rates) {
        const double disc = econ.discount(rec.t);
        for (const WellStepRates& wr : rec.wells) {
            reward += disc * ((econ.oil_price - econ.opex) * wr.q_o -
                              econ.water_cost * wr.q_w) * rec.dt;
            res.info.stage_oil += wr.q_o * rec.dt;
            res.info.stage_water += wr.q_w * rec.dt;
        }
        episode_rates_.push_back(rec);
    }

    ++stage_;
    done_ = failed || stage_ >= scenario_.n_stages;
    total_reward_ += reward;
    rebuild_mask();

    res.reward = reward;
    res.done = done_;
    res.info.wells_drilled = static_cast<int>(wells_.size());
    res.info.sim_failed = failed;
    res.obs = assemble_observation();
    return res;
}

}  // namespace fdev
