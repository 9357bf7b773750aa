#include "fdev/simulator.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace fdev {

int GridModel::num_active() const {
    int n = 0;
    for (uint8_t a : active) n += a != 0;
    return n;
}

void GridModel::validate() const {
    if (nx <= 0 || ny <= 0 || nz <= 0) throw std::invalid_argument("GridModel: bad dimensions");
    size_t n = static_cast<size_t>(num_cells());
    if (dz.size() != n || depth.size() != n || active.size() != n || perm_h.size() != n ||
        porosity.size() != n)
        throw std::invalid_argument("GridModel: array size mismatch");
    if (!(kvkh > 0.0 && kvkh <= 1.0)) throw std::invalid_argument("GridModel: kvkh out of (0,1]");
    for (size_t c = 0; c < n; ++c) {
        if (!active[c]) continue;
        if (!(dz[c] > 0.0) || !(perm_h[c] > 0.0) || !(porosity[c] > 0.0 && porosity[c] < 1.0))
            throw std::invalid_argument("GridModel: invalid active-cell property");
    }
}

void FluidModel::validate() const {
    if (!(S_or + S_wc < 1.0)) throw std::invalid_argument("FluidModel: S_or + S_wc must be < 1");
    if (!(c_o > 0.0 && c_w > 0.0)) throw std::invalid_argument("FluidModel: compressibilities must be > 0");
    if (n_o < 2.0 || n_o > 4.0 || n_w < 2.0 || n_w > 4.0)
        throw std::invalid_argument("FluidModel: Corey exponents out of [2, 4]");
}

namespace {

constexpr double kSatTol = 1e-6;

// Inverse formation volume factor and its pressure derivative.
inline double binv(double p, double b_ref, double c, double p_ref) {
    return (1.0 + c * (p - p_ref)) / b_ref;
}
inline double dbinv_dp(double b_ref, double c) { return c / b_ref; }

struct RelPerm {
    double krw, kro, dkrw, dkro;  // derivatives w.r.t. sw
};

RelPerm relperm(double sw, const FluidModel& f) {
    const double span = 1.0 - f.S_wc - f.S_or;
    double sbar = (sw - f.S_wc) / span;
    RelPerm r{};
    if (sbar <= 0.0) {
        r.krw = 0.0;
        r.kro = f.k_roe;
        r.dkrw = r.dkro = 0.0;
    } else if (sbar >= 1.0) {
        r.krw = f.k_rwe;
        r.kro = 0.0;
        r.dkrw = r.dkro = 0.0;
    } else {
        r.krw = f.k_rwe * std::pow(sbar, f.n_w);
        r.kro = f.k_roe * std::pow(1.0 - sbar, f.n_o);
        r.dkrw = f.k_rwe * f.n_w * std::pow(sbar, f.n_w - 1.0) / span;
        r.dkro = -f.k_roe * f.n_o * std::pow(1.0 - sbar, f.n_o - 1.0) / span;
    }
    return r;
}

// Assembles the per-active-cell oil/water residuals (surface bbl/day) and,
// when jac != nullptr, the analytic Jacobian triplets. Unknown ordering:
// x[2k] = p, x[2k+1] = sw for the k-th active cell, followed by one BHP
// unknown per rate-controlled well. rate_eq maps a well index to its extra
// equation/unknown slot (offset by nbase = 2 * num_active) or -1 when the
// well runs on plain BHP control; rate wells take their BHP from well_bhp
// and contribute the constraint row sum(q_o + q_w) - q_l_max = 0.
void assemble(const ReservoirState& s, const ReservoirState& s_old, double dt,
              const GridModel& grid, const FluidModel& fluid, const ConnectionList& conns,
              const std::vector<Well>& wells, const std::vector<int>& eq_of_cell,
              const std::vector<int>& rate_eq, const std::vector<double>& well_bhp,
              double q_l_max, int nbase,
              std::vector<double>& R, std::vector<Eigen::Triplet<double>>* jac) {
    const int ncell = grid.num_cells();
    const double rho_os = fluid.gamma_o * kWaterDensityStd;  // surface oil density, lb/ft^3
    const double dbo = dbinv_dp(fluid.B_o_ref, fluid.c_o);
    const double dbw = dbinv_dp(fluid.B_w_ref, fluid.c_w);

    std::fill(R.begin(), R.end(), 0.0);
    auto add_jac = [&](int row, int col, double v) {
        if (jac) jac->emplace_back(row, col, v);
    };

    // Accumulation: PV/dt * [ s_phase*binv - (s_phase*binv)_old ]
    for (int c = 0; c < ncell; ++c) {
        int k = eq_of_cell[c];
        if (k < 0) continue;
        const double pv_dt = grid.pore_volume_bbl(c) / dt;
        const double p = s.p[c], sw = s.sw[c];
        const double bo = binv(p, fluid.B_o_ref, fluid.c_o, fluid.p_ref);
        const double bw = binv(p, fluid.B_w_ref, fluid.c_w, fluid.p_ref);
        const double bo0 = binv(s_old.p[c], fluid.B_o_ref, fluid.c_o, fluid.p_ref);
        const double bw0 = binv(s_old.p[c], fluid.B_w_ref, fluid.c_w, fluid.p_ref);
        R[2 * k] += pv_dt * ((1.0 - sw) * bo - (1.0 - s_old.sw[c]) * bo0);
        R[2 * k + 1] += pv_dt * (sw * bw - s_old.sw[c] * bw0);
        add_jac(2 * k, 2 * k, pv_dt * (1.0 - sw) * dbo);
        add_jac(2 * k, 2 * k + 1, -pv_dt * bo);
        add_jac(2 * k + 1, 2 * k, pv_dt * sw * dbw);
        add_jac(2 * k + 1, 2 * k + 1, pv_dt * bw);
    }

    // Interface fluxes, upstream-weighted by phase potential.
    for (const Connection& cn : conns) {
        const int a = cn.a, b = cn.b;
        const int ka = eq_of_cell[a], kb = eq_of_cell[b];
        const double pa = s.p[a], pb = s.p[b];
        const double swa = s.sw[a], swb = s.sw[b];
        const double dD = grid.depth[b] - grid.depth[a];
        const RelPerm ra = relperm(swa, fluid), rb = relperm(swb, fluid);
        const double boa = binv(pa, fluid.B_o_ref, fluid.c_o, fluid.p_ref);
        const double bob = binv(pb, fluid.B_o_ref, fluid.c_o, fluid.p_ref);
        const double bwa = binv(pa, fluid.B_w_ref, fluid.c_w, fluid.p_ref);
        const double bwb = binv(pb, fluid.B_w_ref, fluid.c_w, fluid.p_ref);

        for (int ph = 0; ph < 2; ++ph) {  // 0 = oil, 1 = water
            const bool oil = ph == 0;
            const double rho_s = oil ? rho_os : fluid.rho_w;
            const double mu = oil ? fluid.mu_o_ref : fluid.mu_w_ref;
            const double bia = oil ? boa : bwa, bib = oil ? bob : bwb;
            const double dbi = oil ? dbo : dbw;
            // Interface specific weight, psi/ft: arithmetic mean of
            // reservoir densities rho_s * binv / 144.
            const double gbar = rho_s * (bia + bib) * 0.5 / 144.0;
            const double dgbar_dpa = rho_s * dbi * 0.5 / 144.0;
            const double dgbar_dpb = dgbar_dpa;
            const double dpsi = (pb - pa) - gbar * dD;  // potential of b minus a

            const bool up_b = dpsi > 0.0;
            const double kr = oil ? (up_b ? rb.kro : ra.kro) : (up_b ? rb.krw : ra.krw);
            const double dkr = oil ? (up_b ? rb.dkro : ra.dkro) : (up_b ? rb.dkrw : ra.dkrw);
            const double bi_up = up_b ? bib : bia;
            const double mob = kr * bi_up / mu;  // surface-volume mobility
            const double flux = cn.gamma * mob * dpsi;  // into a, STB/d

            if (ka >= 0) R[2 * ka + ph] -= flux;
            if (kb >= 0) R[2 * kb + ph] += flux;
            if (!jac) continue;

            const double ddpsi_dpa = -1.0 - dgbar_dpa * dD;
            const double ddpsi_dpb = 1.0 - dgbar_dpb * dD;
            double dflux_dpa = cn.gamma * mob * ddpsi_dpa;
            double dflux_dpb = cn.gamma * mob * ddpsi_dpb;
            if (up_b)
                dflux_dpb += cn.gamma * kr * dbi / mu * dpsi;
            else
                dflux_dpa += cn.gamma * kr * dbi / mu * dpsi;
            const double dflux_dsw_up = cn.gamma * dkr * bi_up / mu * dpsi;

            const int sw_col = up_b ? (kb >= 0 ? 2 * kb + 1 : -1) : (ka >= 0 ? 2 * ka + 1 : -1);
            if (ka >= 0) {
                add_jac(2 * ka + ph, 2 * ka, -dflux_dpa);
                if (kb >= 0) add_jac(2 * ka + ph, 2 * kb, -dflux_dpb);
                if (sw_col >= 0) add_jac(2 * ka + ph, sw_col, -dflux_dsw_up);
            }
            if (kb >= 0) {
                add_jac(2 * kb + ph, 2 * kb, dflux_dpb);
                if (ka >= 0) add_jac(2 * kb + ph, 2 * ka, dflux_dpa);
                if (sw_col >= 0) add_jac(2 * kb + ph, sw_col, dflux_dsw_up);
            }
        }
    }

    // Well sinks (producers, BHP-specified): q = WI * kr/(mu*B) * (p - bhp).
    for (size_t wn = 0; wn < wells.size(); ++wn) {
        const Well& w = wells[wn];
        if (w.status == WellStatus::shut) continue;
        const int wr = rate_eq.empty() ? -1 : rate_eq[wn];
        const int wcol = wr >= 0 ? nbase + wr : -1;
        const double bhp = wr >= 0 ? well_bhp[wn] : (w.control_bhp > 0.0 ? w.control_bhp : w.bhp);
        if (wr >= 0) R[wcol] -= q_l_max;
        for (int l = 0; l < grid.nz; ++l) {
            const int c = grid.cell(w.i, w.j, l);
            const int k = eq_of_cell[c];
            if (k < 0) continue;
            const double wi = peaceman_well_index(grid, w, l);
            const double p = s.p[c], sw = s.sw[c];
            const RelPerm rp = relperm(sw, fluid);
            const double bo = binv(p, fluid.B_o_ref, fluid.c_o, fluid.p_ref);
            const double bw = binv(p, fluid.B_w_ref, fluid.c_w, fluid.p_ref);
            const double dp = p - bhp;
            const double qo = wi * rp.kro * bo / fluid.mu_o_ref * dp;
            const double qw = wi * rp.krw * bw / fluid.mu_w_ref * dp;
            R[2 * k] += qo;
            R[2 * k + 1] += qw;
            if (wr >= 0) R[wcol] += qo + qw;
            if (!jac) continue;
            const double dqo_dp = wi / fluid.mu_o_ref * (rp.kro * dbo * dp + rp.kro * bo);
            const double dqo_dsw = wi / fluid.mu_o_ref * rp.dkro * bo * dp;
            const double dqw_dp = wi / fluid.mu_w_ref * (rp.krw * dbw * dp + rp.krw * bw);
            const double dqw_dsw = wi / fluid.mu_w_ref * rp.dkrw * bw * dp;
            add_jac(2 * k, 2 * k, dqo_dp);
            add_jac(2 * k, 2 * k + 1, dqo_dsw);
            add_jac(2 * k + 1, 2 * k, dqw_dp);
            add_jac(2 * k + 1, 2 * k + 1, dqw_dsw);
            if (wr >= 0) {
                const double dqo_db = -wi * rp.kro * bo / fluid.mu_o_ref;
                const double dqw_db = -wi * rp.krw * bw / fluid.mu_w_ref;
                add_jac(2 * k, wcol, dqo_db);
                add_jac(2 * k + 1, wcol, dqw_db);
                add_jac(wcol, 2 * k, dqo_dp + dqw_dp);
                add_jac(wcol, 2 * k + 1, dqo_dsw + dqw_dsw);
                add_jac(wcol, wcol, dqo_db + dqw_db);
            }
        }
    }
}

}  // namespace

ReservoirState initialize_state(const GridModel& grid, const FluidModel& fluid,
                                double p_grad, double d_datum, const Field2D& sw_init) {
    grid.validate();
    fluid.validate();
    if (grid.num_active() == 0) throw std::invalid_argument("initialize_state: no active cells");
    if (!(p_grad > 0.0) || !std::isfinite(p_grad) || !std::isfinite(d_datum))
        throw std::invalid_argument("initialize_state: bad pressure gradient or datum");
    if (sw_init.nx != grid.nx || sw_init.ny != grid.ny)
        throw std::invalid_argument("initialize_state: sw_init shape mismatch");

    ReservoirState st;
    st.t = 0.0;
    const int n = grid.num_cells();
    st.p.resize(n, 0.0);
    st.sw.resize(n, fluid.S_wc);
    const double sw_lo = fluid.S_wc, sw_hi = 1.0 - fluid.S_or;
    for (int l = 0; l < grid.nz; ++l)
        for (int j = 0; j < grid.ny; ++j)
            for (int i = 0; i < grid.nx; ++i) {
                int c = grid.cell(i, j, l);
                st.p[c] = p_grad * (d_datum + grid.depth[c]);
                st.sw[c] = std::clamp(sw_init.at(i, j), sw_lo, sw_hi);
            }
    return st;
}

ConnectionList compute_transmissibilities(const GridModel& grid) {
    grid.validate();
    ConnectionList conns;
    auto half = [&](int c, double area, double dist) {
        return kDarcyConst * grid.perm_h[c] * area / dist;
    };
    auto emit = [&](int a, int b, double ta, double tb, char dir) {
        if (!grid.is_active(a) || !grid.is_active(b)) return;
        double gamma = (ta + tb > 0.0) ? ta * tb / (ta + tb) : 0.0;
        conns.push_back({a, b, gamma, dir});
    };
    for (int l = 0; l < grid.nz; ++l)
        for (int j = 0; j < grid.ny; ++j)
            for (int i = 0; i < grid.nx; ++i) {
                int c = grid.cell(i, j, l);
                if (i + 1 < grid.nx) {
                    int b = grid.cell(i + 1, j, l);
                    emit(c, b, half(c, grid.dy * grid.dz[c], grid.dx / 2.0),
                         half(b, grid.dy * grid.dz[b], grid.dx / 2.0), 'x');
                }
                if (j + 1 < grid.ny) {
                    int b = grid.cell(i, j + 1, l);
                    emit(c, b, half(c, grid.dx * grid.dz[c], grid.dy / 2.0),
                         half(b, grid.dx * grid.dz[b], grid.dy / 2.0), 'y');
                }
                if (l + 1 < grid.nz) {
                    int b = grid.cell(i, j, l + 1);
                    double ta = kDarcyConst * grid.kvkh * grid.perm_h[c] * grid.dx * grid.dy /
                                (grid.dz[c] / 2.0);
                    double tb = kDarcyConst * grid.kvkh * grid.perm_h[b] * grid.dx * grid.dy /
                                (grid.dz[b] / 2.0);
                    emit(c, b, ta, tb, 'z');
                }
            }
    return conns;
}

double peaceman_well_index(const GridModel& grid, const Well& well, int layer) {
    const int c = grid.cell(well.i, well.j, layer);
    if (!grid.is_active(c)) throw std::invalid_argument("peaceman_well_index: well cell inactive");
    const double r_o = 0.28 * std::sqrt(grid.dx * grid.dx + grid.dy * grid.dy) / 2.0;
    if (r_o <= well.r_w) throw std::invalid_argument("peaceman_well_index: r_o <= r_w");
    return 2.0 * M_PI * kDarcyConst * grid.perm_h[c] * grid.dz[c] /
           (std::log(r_o / well.r_w) + well.skin);
}

PhaseProperties phase_properties(double p, double sw, const FluidModel& fluid) {
    const double sw_c = std::clamp(sw, fluid.S_wc - kSatTol, 1.0 - fluid.S_or + kSatTol);
    const RelPerm rp = relperm(sw_c, fluid);
    PhaseProperties pr;
    pr.krw = rp.krw;
    pr.kro = rp.kro;
    pr.B_o = 1.0 / binv(p, fluid.B_o_ref, fluid.c_o, fluid.p_ref);
    pr.B_w = 1.0 / binv(p, fluid.B_w_ref, fluid.c_w, fluid.p_ref);
    pr.mu_o = fluid.mu_o_ref;
    pr.mu_w = fluid.mu_w_ref;
    pr.rho_o = fluid.gamma_o * kWaterDensityStd / pr.B_o;
    pr.rho_w = fluid.rho_w / pr.B_w;
    return pr;
}

std::vector<std::array<double, 2>> well_layer_rates(const ReservoirState& state,
                                                    const GridModel& grid,
                                                    const FluidModel& fluid,
                                                    const Well& well) {
    std::vector<std::array<double, 2>> out(grid.nz, {0.0, 0.0});
    if (well.status == WellStatus::shut) return out;
    const double bhp = well.control_bhp > 0.0 ? well.control_bhp : well.bhp;
    for (int l = 0; l < grid.nz; ++l) {
        const int c = grid.cell(well.i, well.j, l);
        if (!grid.is_active(c)) continue;
        const double wi = peaceman_well_index(grid, well, l);
        const double p = state.p[c];
        const RelPerm rp = relperm(state.sw[c], fluid);
        const double bo = binv(p, fluid.B_o_ref, fluid.c_o, fluid.p_ref);
        const double bw = binv(p, fluid.B_w_ref, fluid.c_w, fluid.p_ref);
        out[l][0] = wi * rp.kro * bo / fluid.mu_o_ref * (p - bhp);
        out[l][1] = wi * rp.krw * bw / fluid.mu_w_ref * (p - bhp);
    }
    return out;
}

namespace {

std::vector<int> build_eq_index(const GridModel& grid, int* num_active_out) {
    std::vector<int> eq(grid.num_cells(), -1);
    int na = 0;
    for (int c = 0; c < grid.num_cells(); ++c)
        if (grid.is_active(c)) eq[c] = na++;
    if (num_active_out) *num_active_out = na;
    return eq;
}

}  // namespace

std::vector<double> assemble_residual(const ReservoirState& s_new, const ReservoirState& s_old,
                                      double dt, const GridModel& grid, const FluidModel& fluid,
                                      const ConnectionList& conns, const std::vector<Well>& wells) {
    int na = 0;
    auto eq = build_eq_index(grid, &na);
    std::vector<double> R(2 * na);
    assemble(s_new, s_old, dt, grid, fluid, conns, wells, eq, {}, {}, 0.0, 2 * na, R, nullptr);
    return R;
}

std::vector<double> assemble_jacobian_dense(const ReservoirState& s_new,
                                            const ReservoirState& s_old, double dt,
                                            const GridModel& grid, const FluidModel& fluid,
                                            const ConnectionList& conns,
                                            const std::vector<Well>& wells) {
    int na = 0;
    auto eq = build_eq_index(grid, &na);
    const int nun = 2 * na;
    std::vector<double> R(nun);
    std::vector<Eigen::Triplet<double>> trips;
    assemble(s_new, s_old, dt, grid, fluid, conns, wells, eq, {}, {}, 0.0, nun, R, &trips);
    std::vector<double> J(static_cast<size_t>(nun) * nun, 0.0);
    for (const auto& t : trips) J[static_cast<size_t>(t.row()) * nun + t.col()] += t.value();
    return J;
}

StepResult advance_timestep(ReservoirState& state, double dt, const GridModel& grid,
                            const FluidModel& fluid, const ConnectionList& conns,
                            std::vector<Well>& wells, double q_l_max, const SolverConfig& cfg) {
    if (!(dt > 0.0)) throw std::invalid_argument("advance_timestep: dt must be > 0");
    const int ncell = grid.num_cells();
    std::vector<int> eq_of_cell(ncell, -1), cells;
    for (int c = 0; c < ncell; ++c)
        if (grid.is_active(c)) {
            eq_of_cell[c] = static_cast<int>(cells.size());
            cells.push_back(c);
        }
    const int na = static_cast<int>(cells.size());
    const int nbase = 2 * na;
    // Clamp to the physical range, not the mobile window: equilibration can
    // require sw marginally below connate (immobile water compressing as oil
    // flows in), and a hard clamp at S_wc leaves Newton stuck at the bound.
    const double sw_lo = 0.0, sw_hi = 1.0;
    const double q_scale = std::isfinite(q_l_max) ? std::max(q_l_max, 1.0) : 1.0;

    ReservoirState trial;
    std::vector<int> rate_eq(wells.size(), -1);
    std::vector<double> well_bhp(wells.size(), 0.0);
    std::vector<double> R;
    std::vector<Eigen::Triplet<double>> trips;
    StepResult res;

    // Outer loop re-solves from the original state whenever a rate well's
    // BHP unknown drops below its floor and the well switches to BHP control.
    bool restart = true;
    while (restart) {
        restart = false;
        int n_rate = 0;
        for (size_t w = 0; w < wells.size(); ++w) {
            if (wells[w].status == WellStatus::open_rate) {
                rate_eq[w] = n_rate++;
                well_bhp[w] = wells[w].control_bhp > 0.0 ? wells[w].control_bhp : wells[w].bhp;
            } else {
                rate_eq[w] = -1;
            }
        }
        const int nun = nbase + n_rate;
        trial = state;
        R.assign(nun, 0.0);
        res = StepResult{};

        for (int it = 0; it <= cfg.max_newton; ++it) {
            trips.clear();
            assemble(trial, state, dt, grid, fluid, conns, wells, eq_of_cell, rate_eq, well_bhp,
                     q_l_max, nbase, R, &trips);

            double rnorm = 0.0;
            for (int k = 0; k < na; ++k) {
                const double scale = dt / grid.pore_volume_bbl(cells[k]);
                rnorm = std::max(rnorm, std::abs(R[2 * k]) * scale);
                rnorm = std::max(rnorm, std::abs(R[2 * k + 1]) * scale);
            }
            for (int m = 0; m < n_rate; ++m)
                rnorm = std::max(rnorm, std::abs(R[nbase + m]) / q_scale);
            if (rnorm <= cfg.newton_tol) {
                res.converged = true;
                res.newton_iters = it;
                break;
            }
            if (it == cfg.max_newton) break;

            Eigen::SparseMatrix<double> J(nun, nun);
            J.setFromTriplets(trips.begin(), trips.end());
            Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
            lu.compute(J);
            if (lu.info() != Eigen::Success) break;
            Eigen::VectorXd rhs(nun);
            for (int k = 0; k < nun; ++k) rhs[k] = -R[k];
            Eigen::VectorXd dx = lu.solve(rhs);
            if (lu.info() != Eigen::Success || !dx.allFinite()) break;

            double max_dsw = 0.0;
            for (int k = 0; k < na; ++k) max_dsw = std::max(max_dsw, std::abs(dx[2 * k + 1]));
            const double relax = max_dsw > cfg.max_dsw ? cfg.max_dsw / max_dsw : 1.0;
            for (int k = 0; k < na; ++k) {
                const int c = cells[k];
                trial.p[c] += relax * dx[2 * k];
                trial.sw[c] = std::clamp(trial.sw[c] + relax * dx[2 * k + 1], sw_lo, sw_hi);
            }
            for (size_t w = 0; w < wells.size(); ++w) {
                if (rate_eq[w] < 0) continue;
                well_bhp[w] += relax * dx[nbase + rate_eq[w]];
                if (well_bhp[w] < wells[w].bhp) {
                    // Deliverability no longer reaches the cap: fall back to
                    // the BHP floor and re-solve without the constraint row.
                    wells[w].status = WellStatus::open_bhp;
                    wells[w].control_bhp = wells[w].bhp;
                    restart = true;
                }
            }
            if (restart) break;
        }
    }

    if (!res.converged) return res;

    for (size_t w = 0; w < wells.size(); ++w)
        if (rate_eq[w] >= 0) wells[w].control_bhp = well_bhp[w];

    trial.t = state.t + dt;
    state = std::move(trial);
    res.well_rates.resize(wells.size(), {0.0, 0.0});
    for (size_t w = 0; w < wells.size(); ++w) {
        auto layers = well_layer_rates(state, grid, fluid, wells[w]);
        for (const auto& lr : layers) {
            res.well_rates[w][0] += lr[0];
            res.well_rates[w][1] += lr[1];
        }
    }
    return res;
}

namespace {

// Total surface liquid rate of one well at the given BHP, from the current state.
double liquid_rate_at_bhp(const ReservoirState& state, const GridModel& grid,
                          const FluidModel& fluid, Well well, double bhp) {
    well.control_bhp = bhp;
    double q = 0.0;
    for (const auto& lr : well_layer_rates(state, grid, fluid, well)) q += lr[0] + lr[1];
    return q;
}

}  // namespace

WellRates simulate_interval(ReservoirState& state, double t_end, double report_dt,
                            const GridModel& grid, const FluidModel& fluid,
                            const ConnectionList& conns, std::vector<Well>& wells,
                            double q_l_max, double wc_limit, const SolverConfig& cfg,
                            const std::string& context, WellRates* partial_out) {
    if (!(t_end > state.t)) throw std::invalid_argument("simulate_interval: t_end must exceed state.t");
    if (!(report_dt > 0.0)) throw std::invalid_argument("simulate_interval: report_dt must be > 0");

    WellRates rates;
    double dt_next = cfg.dt_init;
    const double eps = 1e-9;

    // Raises the control BHP of open wells whose explicit inflow exceeds the
    // liquid cap; returns true if any well is rate-controlled.
    auto apply_rate_control = [&](void) {
        bool any = false;
        for (Well& w : wells) {
            if (w.status == WellStatus::shut) continue;
            w.control_bhp = w.bhp;
            w.status = WellStatus::open_bhp;
            if (!std::isfinite(q_l_max)) continue;
            const double q0 = liquid_rate_at_bhp(state, grid, fluid, w, w.bhp);
            if (q0 <= q_l_max) continue;
            double p_hi = w.bhp;
            for (int l = 0; l < grid.nz; ++l) {
                int c = grid.cell(w.i, w.j, l);
                if (grid.is_active(c)) p_hi = std::max(p_hi, state.p[c]);
            }
            if (liquid_rate_at_bhp(state, grid, fluid, w, p_hi) > q_l_max) continue;  // cannot cap
            double lo = w.bhp, hi = p_hi;
            while (hi - lo > 1e-9 * p_hi) {
                const double mid = 0.5 * (lo + hi);
                const double q = liquid_rate_at_bhp(state, grid, fluid, w, mid);
                if (std::abs(q - q_l_max) <= cfg.rate_bisect_tol * q_l_max) {
                    lo = hi = mid;
                    break;
                }
                (q > q_l_max ? lo : hi) = mid;
            }
            w.status = WellStatus::open_rate;
            w.control_bhp = 0.5 * (lo + hi);
            any = true;
        }
        return any;
    };

    while (state.t < t_end - eps) {
        const double report_end = std::min(state.t + report_dt, t_end);
        const double report_len = report_end - state.t;

        // Step to the report boundary, accumulating produced volumes. The
        // explicit bisection before each step decides which wells are
        // rate-controlled and seeds their BHP; the implicit solve then holds
        // the cap exactly at the end-of-step state (or demotes the well to
        // BHP control if deliverability has fallen below the cap).
        std::vector<std::array<double, 2>> vol(wells.size(), {0.0, 0.0});
        while (state.t < report_end - eps) {
            apply_rate_control();
            const double dt = std::min(dt_next, report_end - state.t);
            StepResult sr = advance_timestep(state, dt, grid, fluid, conns, wells, q_l_max, cfg);
            if (!sr.converged) {
                dt_next = dt * cfg.dt_cut;
                if (dt_next < cfg.dt_min) {
                    if (partial_out) *partial_out = rates;
                    std::ostringstream msg;
                    msg << "simulate_interval: Newton failed below dt_min at t=" << state.t;
                    if (!context.empty()) msg << " [" << context << "]";
                    throw SimulationFailure(msg.str());
                }
                continue;
            }
            for (size_t w = 0; w < wells.size(); ++w) {
                vol[w][0] += sr.well_rates[w][0] * dt;
                vol[w][1] += sr.well_rates[w][1] * dt;
            }
            if (sr.newton_iters <= cfg.grow_iters) dt_next = std::min(dt_next * cfg.dt_grow, cfg.dt_max);
        }

        if (!wells.empty()) {
            RatesRecord rec;
            rec.t = state.t;
            rec.dt = report_len;
            rec.wells.resize(wells.size());
            for (size_t w = 0; w < wells.size(); ++w) {
                WellStepRates& r = rec.wells[w];
                r.q_o = vol[w][0] / report_len;
                r.q_w = vol[w][1] / report_len;
                r.bhp = wells[w].status == WellStatus::shut ? 0.0 : wells[w].control_bhp;
                const double liq = r.q_o + r.q_w;
                r.watercut = liq > 0.0 ? r.q_w / liq : 0.0;
                // Record the status in effect during the step; a watercut
                // breach shuts the well from the next step on, permanently.
                r.status = wells[w].status;
                if (wells[w].status != WellStatus::shut && r.watercut > wc_limit)
                    wells[w].status = WellStatus::shut;
            }
            rates.push_back(std::move(rec));
        }
    }
    return rates;
}

}  // namespace fdev
