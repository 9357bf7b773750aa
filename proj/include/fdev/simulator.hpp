#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fdev/field.hpp"

namespace fdev {

// Field units throughout: ft, md, cp, psi, days, STB. Darcy constant
// 0.001127 gives bbl/day from md*ft^2/ft * psi / cp; 5.615 ft^3/bbl.
constexpr double kDarcyConst = 0.001127;
constexpr double kCubicFtPerBbl = 5.615;
constexpr double kWaterDensityStd = 62.43;  // lb/ft^3, fresh water

struct GridModel {
    int nx = 0, ny = 0, nz = 1;
    double dx = 0.0, dy = 0.0;
    std::vector<double> dz;        // per-cell thickness, ft
    std::vector<double> depth;     // per-cell depth from datum, ft
    std::vector<uint8_t> active;   // per-cell 0/1
    std::vector<double> perm_h;    // per-cell horizontal permeability, md
    double kvkh = 1.0;             // vertical/horizontal permeability ratio
    std::vector<double> porosity;  // per-cell

    int num_cells() const { return nx * ny * nz; }
    int cell(int i, int j, int l) const { return (l * ny + j) * nx + i; }
    int areal(int i, int j) const { return j * nx + i; }
    bool is_active(int c) const { return active[c] != 0; }
    int num_active() const;
    double cell_volume(int c) const { return dx * dy * dz[c]; }  // ft^3
    // Pore volume in surface-referenced barrels before FVF correction.
    double pore_volume_bbl(int c) const { return cell_volume(c) * porosity[c] / kCubicFtPerBbl; }
    void validate() const;
};

struct FluidModel {
    double B_o_ref = 1.2, B_w_ref = 1.0;   // reservoir/surface volume ratio at p_ref
    double c_o = 2e-6, c_w = 3e-6;         // 1/psi
    double mu_o_ref = 5.0, mu_w_ref = 0.7; // cp
    double gamma_o = 0.9;                  // oil specific gravity
    double rho_w = 64.0;                   // lb/ft^3 at surface
    double S_or = 0.15, S_wc = 0.15;
    double k_roe = 0.85, k_rwe = 0.85;
    double n_o = 2.5, n_w = 2.5;
    double p_ref = 5000.0;                 // psi

    void validate() const;
};

enum class WellStatus { open_bhp, open_rate, shut };

struct Well {
    int i = 0, j = 0;          // areal indices; fully penetrates all nz layers
    double r_w = 0.3;          // ft
    double skin = 0.0;
    double bhp = 0.0;          // sampled operating BHP p^w, psi
    int drill_stage = 0;
    WellStatus status = WellStatus::open_bhp;
    double control_bhp = 0.0;  // effective BHP for the current report step
};

struct ReservoirState {
    std::vector<double> p;   // psi
    std::vector<double> sw;
    double t = 0.0;          // days
};

struct Connection {
    int a = 0, b = 0;     // cell indices, a < b
    double gamma = 0.0;   // rock transmissibility, md*ft (Darcy constant folded in)
    char dir = 'x';       // 'x' | 'y' | 'z'
};
using ConnectionList = std::vector<Connection>;

struct WellStepRates {
    double q_o = 0.0, q_w = 0.0;  // STB/d, averaged over the report step
    double bhp = 0.0;             // effective BHP in effect, psi
    double watercut = 0.0;
    WellStatus status = WellStatus::open_bhp;
};

struct RatesRecord {
    double t = 0.0;   // end of report step, days
    double dt = 0.0;  // report step length, days
    std::vector<WellStepRates> wells;
};
using WellRates = std::vector<RatesRecord>;

struct SolverConfig {
    double newton_tol = 1e-6;   // inf-norm of residual scaled by pore volume
    int max_newton = 12;
    double dt_init = 1.0;       // days
    double dt_max = 30.0;
    double dt_min = 0.01;
    int grow_iters = 4;         // grow dt x2 when Newton used <= this many iterations
    double dt_grow = 2.0;
    double dt_cut = 0.5;
    double max_dsw = 0.2;       // Newton update damping on saturation
    double rate_bisect_tol = 1e-3;  // relative to q_l_max
};

struct PhaseProperties {
    double krw = 0.0, kro = 0.0;
    double B_o = 1.0, B_w = 1.0;
    double mu_o = 1.0, mu_w = 1.0;
    double rho_o = 0.0, rho_w = 0.0;  // reservoir-condition densities, lb/ft^3
};

class SimulationFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// p(cell) = p_grad * (d_datum + depth(cell)); t = 0.
ReservoirState initialize_state(const GridModel& grid, const FluidModel& fluid,
                                double p_grad, double d_datum, const Field2D& sw_init);

// Two-point-flux rock transmissibilities over active-active interfaces.
ConnectionList compute_transmissibilities(const GridModel& grid);

// Peaceman well index for one layer, md*ft with the Darcy constant folded in.
double peaceman_well_index(const GridModel& grid, const Well& well, int layer);

PhaseProperties phase_properties(double p, double sw, const FluidModel& fluid);

struct StepResult {
    bool converged = false;
    int newton_iters = 0;
    // Surface rates per well at the converged state (summed over layers).
    std::vector<std::array<double, 2>> well_rates;  // [well] -> {q_o, q_w} STB/d
};

// One fully-implicit Newton solve over dt. On convergence the state is
// advanced in place; otherwise the state is left untouched and
// converged = false signals a timestep cut to the caller.
// Wells with status open_rate carry their BHP as an extra Newton unknown
// constrained by total liquid rate == q_l_max; if the solved BHP falls
// below the well's BHP floor the well is switched to open_bhp (its
// control_bhp is updated in place either way).
StepResult advance_timestep(ReservoirState& state, double dt, const GridModel& grid,
                            const FluidModel& fluid, const ConnectionList& conns,
                            std::vector<Well>& wells, double q_l_max,
                            const SolverConfig& cfg = SolverConfig{});

inline StepResult advance_timestep(ReservoirState& state, double dt, const GridModel& grid,
                                   const FluidModel& fluid, const ConnectionList& conns,
                                   std::vector<Well>& wells,
                                   const SolverConfig& cfg = SolverConfig{}) {
    return advance_timestep(state, dt, grid, fluid, conns, wells,
                            std::numeric_limits<double>::infinity(), cfg);
}

// Surface phase rates of one well assembled from a state exactly as the
// residual does, per layer: WI * kr/(mu*B) * (p_cell - bhp).
std::vector<std::array<double, 2>> well_layer_rates(const ReservoirState& state,
                                                    const GridModel& grid,
                                                    const FluidModel& fluid,
                                                    const Well& well);

// Residual of the fully-implicit system at state s_new given the previous
// state, two entries per active cell (oil, water) in surface bbl/day.
// Exposed so tests can difference it against the analytic Jacobian.
std::vector<double> assemble_residual(const ReservoirState& s_new, const ReservoirState& s_old,
                                      double dt, const GridModel& grid, const FluidModel& fluid,
                                      const ConnectionList& conns, const std::vector<Well>& wells);

// Dense analytic Jacobian in the same unknown ordering (p, sw per active cell).
std::vector<double> assemble_jacobian_dense(const ReservoirState& s_new,
                                            const ReservoirState& s_old, double dt,
                                            const GridModel& grid, const FluidModel& fluid,
                                            const ConnectionList& conns,
                                            const std::vector<Well>& wells);

// Adaptive stepping to t_end with report checkpoints every report_dt.
// Applies the per-report-step control logic: BHP control, switch to
// liquid-rate control when the well exceeds q_l_max, permanent shut-in
// when the produced watercut exceeds wc_limit.
// On hard solver failure throws SimulationFailure with the given context;
// if partial_out is non-null it receives the report steps completed before
// the failure.
WellRates simulate_interval(ReservoirState& state, double t_end, double report_dt,
                            const GridModel& grid, const FluidModel& fluid,
                            const ConnectionList& conns, std::vector<Well>& wells,
                            double q_l_max, double wc_limit,
                            const SolverConfig& cfg = SolverConfig{},
                            const std::string& context = {},
                            WellRates* partial_out = nullptr);

}  // namespace fdev
