#pragma once

#include <string>
#include <vector>

#include "fdev/geostat.hpp"
#include "fdev/rng.hpp"
#include "fdev/simulator.hpp"

namespace fdev {

struct UniformRange {
    double lo = 0.0, hi = 0.0;
    double sample(Rng& rng) const { return rng.uniform(lo, hi); }
    bool contains(double v) const { return v >= lo && v <= hi; }
};

// SGS-style field parameters: mean, std, minor/major correlation ranges (cells).
struct SgsParams {
    double mean = 0.0, std = 0.0;
    double range_minor = 1.0, range_major = 1.0;
};

// Per-row sampling distributions for scenario construction, defaulting to
// the published parameter table. All keys are config-overridable.
struct ScenarioRanges {
    int nx = 50, ny = 50, nz = 1;
    int min_spacing = 2;  // Chebyshev, cells
    int max_wells = 20;

    UniformRange dx{500, 700}, dy{500, 700};
    SgsParams dz_sgs{1000, 100, 30, 60};
    UniformRange azimuth{0, 90};
    std::vector<VariogramStructure> structures{VariogramStructure::gaussian,
                                               VariogramStructure::exponential};
    UniformRange phi_mean{0.15, 0.25}, phi_std{0.01, 0.07};
    double phi_range_minor = 2, phi_range_major = 8;
    double perm_log_mean = 5.2983173665480363;  // ln(200 md) median
    double perm_log_std = 0.8;
    double cloud_noise = 0.2;
    UniformRange kvkh_log{0.001, 0.1};  // log-uniform (3D)
    UniformRange d_datum{5000, 36000};
    SgsParams depth_sgs{1000, 1000, 30, 60};
    UniformRange p_grad{0.7, 1.0};
    double sw_frac_mean = 0.3, sw_frac_std = 0.12;  // of the mobile span
    UniformRange B_o_ref{1.0, 1.5}, B_w_ref{1.0, 1.5};
    UniformRange c_o{1e-6, 4e-6}, c_w{2e-6, 5e-6};
    UniformRange gamma_o{0.8, 1.0}, rho_w{62, 68};
    UniformRange mu_o{2, 15}, mu_w{0.5, 1.0};
    UniformRange S_or{0.05, 0.2}, S_wc{0.05, 0.2};
    UniformRange k_roe{0.75, 0.95}, k_rwe{0.75, 0.95};
    UniformRange n_o{2, 4}, n_w{2, 4};
    UniformRange bhp_fraction{0.3, 0.7};
    UniformRange skin{0, 2};
    UniformRange oil_price{40, 60};
    UniformRange water_cost_frac{0.0, 0.02};
    UniformRange opex{8, 15};
    UniformRange well_cost{1e8, 5e8};
    UniformRange discount_rate{0.09, 0.11};
    std::vector<double> drill_days{90, 120, 180, 240};
    UniformRange project_years{15, 20};
    UniformRange wc_limit{0.60, 0.98};
    UniformRange q_l_max{1e4, 2.5e4};

    void validate() const;
};

struct EconomicModel {
    double oil_price = 50.0;     // $/bbl
    double opex = 10.0;          // $/bbl
    double water_cost = 0.5;     // $/bbl produced water
    double well_cost = 2e8;      // $ per well
    double discount_rate = 0.1;  // fraction per year
    double project_days = 365.0 * 18;
    double drill_days = 120.0;

    double discount(double t_days) const;
    void validate() const;
};

struct Constraints {
    double q_l_max = 1e30;
    double wc_limit = 1.0;
    int min_spacing = 2;
    int max_wells = 20;
};

struct Scenario {
    GridModel grid;
    FluidModel fluid;
    EconomicModel econ;
    Constraints constraints;
    double bhp_fraction = 0.5;
    double bhp = 0.0;   // p^w = bhp_fraction * pressure at datum
    double skin = 0.0;
    double p_grad = 0.85;
    double d_datum = 10000.0;
    Field2D sw_init;    // areal, applied to every layer
    uint64_t seed = 0;
    int n_stages = 1;   // min(max_wells, floor(project_days / drill_days))
};

// Static per-episode inputs, computed once and reused across stages.
struct SimCase {
    ConnectionList conns;
    // Peaceman WI for a candidate well at each cell (scenario skin/r_w),
    // positive exactly on active cells.
    std::vector<double> wi_map;
    ReservoirState init;
};

Scenario sample_scenario(const ScenarioRanges& ranges, Rng& rng);

SimCase build_sim_case(const Scenario& sc);

// Self-describing key-value text serialization; byte-exact round trip.
std::string scenario_to_text(const Scenario& sc);
Scenario scenario_from_text(const std::string& text);

}  // namespace fdev
