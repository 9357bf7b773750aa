#include "fdev/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace fdev {

void ScenarioRanges::validate() const {
    if (nx <= 0 || ny <= 0 || nz <= 0) throw std::invalid_argument("ScenarioRanges: bad grid dims");
    if (structures.empty() || drill_days.empty())
        throw std::invalid_argument("ScenarioRanges: discrete option sets must be non-empty");
    auto chk = [](const UniformRange& r, const char* name) {
        if (!(r.lo <= r.hi)) throw std::invalid_argument(std::string("ScenarioRanges: unordered bounds for ") + name);
    };
    chk(dx, "dx"); chk(dy, "dy"); chk(azimuth, "azimuth"); chk(phi_mean, "phi_mean");
    chk(phi_std, "phi_std"); chk(kvkh_log, "kvkh"); chk(d_datum, "d_datum"); chk(p_grad, "p_grad");
    chk(B_o_ref, "B_o_ref"); chk(B_w_ref, "B_w_ref"); chk(c_o, "c_o"); chk(c_w, "c_w");
    chk(gamma_o, "gamma_o"); chk(rho_w, "rho_w"); chk(mu_o, "mu_o"); chk(mu_w, "mu_w");
    chk(S_or, "S_or"); chk(S_wc, "S_wc"); chk(k_roe, "k_roe"); chk(k_rwe, "k_rwe");
    chk(n_o, "n_o"); chk(n_w, "n_w"); chk(bhp_fraction, "bhp_fraction"); chk(skin, "skin");
    chk(oil_price, "oil_price"); chk(water_cost_frac, "water_cost_frac"); chk(opex, "opex");
    chk(well_cost, "well_cost"); chk(discount_rate, "discount_rate");
    chk(project_years, "project_years"); chk(wc_limit, "wc_limit"); chk(q_l_max, "q_l_max");
    if (!(kvkh_log.lo > 0.0)) throw std::invalid_argument("ScenarioRanges: kvkh bounds must be > 0");
}

double EconomicModel::discount(double t_days) const {
    return std::pow(1.0 + discount_rate, -t_days / 365.0);
}

void EconomicModel::validate() const {
    if (oil_price <= opex) throw std::invalid_argument("EconomicModel: oil_price must exceed opex");
    if (oil_price < 0 || opex < 0 || water_cost < 0 || well_cost < 0 || discount_rate < 0 ||
        project_days < 0 || drill_days < 0)
        throw std::invalid_argument("EconomicModel: negative parameter");
}

Scenario sample_scenario(const ScenarioRanges& rg, Rng& rng) {
    rg.validate();
    Scenario sc;
    sc.seed = rng.seed();

    // Scalars, in table order.
    const double dx = rg.dx.sample(rng);
    const double dy = rg.dy.sample(rng);
    const double azimuth = rg.azimuth.sample(rng);
    const VariogramStructure structure = rg.structures[rng.uniform_int(static_cast<int>(rg.structures.size()))];
    const double phi_mean = rg.phi_mean.sample(rng);
    const double phi_std = rg.phi_std.sample(rng);
    const double kvkh = rg.nz > 1 ? rng.log_uniform(rg.kvkh_log.lo, rg.kvkh_log.hi) : 1.0;
    sc.d_datum = rg.d_datum.sample(rng);
    sc.p_grad = rg.p_grad.sample(rng);
    sc.fluid.B_o_ref = rg.B_o_ref.sample(rng);
    sc.fluid.B_w_ref = rg.B_w_ref.sample(rng);
    sc.fluid.c_o = rg.c_o.sample(rng);
    sc.fluid.c_w = rg.c_w.sample(rng);
    sc.fluid.gamma_o = rg.gamma_o.sample(rng);
    sc.fluid.rho_w = rg.rho_w.sample(rng);
    sc.fluid.mu_o_ref = rg.mu_o.sample(rng);
    sc.fluid.mu_w_ref = rg.mu_w.sample(rng);
    sc.fluid.S_or = rg.S_or.sample(rng);
    sc.fluid.S_wc = rg.S_wc.sample(rng);
    sc.fluid.k_roe = rg.k_roe.sample(rng);
    sc.fluid.k_rwe = rg.k_rwe.sample(rng);
    sc.fluid.n_o = rg.n_o.sample(rng);
    sc.fluid.n_w = rg.n_w.sample(rng);
    sc.bhp_fraction = rg.bhp_fraction.sample(rng);
    sc.skin = rg.skin.sample(rng);
    sc.econ.oil_price = rg.oil_price.sample(rng);
    sc.econ.water_cost = rg.water_cost_frac.sample(rng) * sc.econ.oil_price;
    sc.econ.opex = rg.opex.sample(rng);
    sc.econ.well_cost = rg.well_cost.sample(rng);
    sc.econ.discount_rate = rg.discount_rate.sample(rng);
    sc.econ.drill_days = rg.drill_days[rng.uniform_int(static_cast<int>(rg.drill_days.size()))];
    sc.econ.project_days = rg.project_years.sample(rng) * 365.0;
    sc.constraints.wc_limit = rg.wc_limit.sample(rng);
    sc.constraints.q_l_max = rg.q_l_max.sample(rng);
    sc.constraints.min_spacing = rg.min_spacing;
    sc.constraints.max_wells = rg.max_wells;

    // Spatial fields. The sampled structure/azimuth apply to every field;
    // correlation ranges are per the table.
    const Variogram vz{structure, rg.dz_sgs.range_major, rg.dz_sgs.range_minor, azimuth};
    const Variogram vphi{structure, rg.phi_range_major, rg.phi_range_minor, azimuth};
    const Variogram vd{structure, rg.depth_sgs.range_major, rg.depth_sgs.range_minor, azimuth};

    Field2D dz_field = sample_gaussian_field(rg.nx, rg.ny, vz, rg.dz_sgs.mean, rg.dz_sgs.std, rng);
    for (double& v : dz_field.values) v = std::max(v, 1.0);
    Field2D phi = sample_gaussian_field(rg.nx, rg.ny, vphi, phi_mean, phi_std, rng);
    for (double& v : phi.values) v = std::clamp(v, 0.01, 0.4);
    Field2D perm = cloud_transform(phi, rg.perm_log_mean, rg.perm_log_std,
                                   CloudTransformKind::log, rg.cloud_noise, rng);
    for (double& v : perm.values) v = std::clamp(v, 0.01, 5e4);

    // Initial water saturation: negative rank coupling with porosity.
    Field2D neg_phi = phi;
    for (double& v : neg_phi.values) v = -v;
    const double span = 1.0 - sc.fluid.S_wc - sc.fluid.S_or;
    Field2D sw = cloud_transform(neg_phi, sc.fluid.S_wc + rg.sw_frac_mean * span,
                                 rg.sw_frac_std * span, CloudTransformKind::linear,
                                 rg.cloud_noise, rng);
    for (double& v : sw.values) v = std::clamp(v, sc.fluid.S_wc, 1.0 - sc.fluid.S_or);
    sc.sw_init = sw;

    Field2D active = elliptical_active_mask(rg.nx, rg.ny, rng);
    Field2D depth = sample_gaussian_field(rg.nx, rg.ny, vd, rg.depth_sgs.mean, rg.depth_sgs.std, rng);

    // Grid assembly: areal fields repeated per layer, layer thickness
    // dz/nz, depths stacked downward from the sampled top surface.
    GridModel& g = sc.grid;
    g.nx = rg.nx;
    g.ny = rg.ny;
    g.nz = rg.nz;
    g.dx = dx;
    g.dy = dy;
    g.kvkh = kvkh;
    const int n = g.num_cells();
    g.dz.resize(n);
    g.depth.resize(n);
    g.active.resize(n);
    g.perm_h.resize(n);
    g.porosity.resize(n);
    for (int l = 0; l < g.nz; ++l)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const int c = g.cell(i, j, l);
                const double layer_dz = dz_field.at(i, j) / g.nz;
                g.dz[c] = layer_dz;
                g.depth[c] = depth.at(i, j) + (l + 0.5) * layer_dz;
                g.active[c] = active.at(i, j) > 0.5 ? 1 : 0;
                g.perm_h[c] = perm.at(i, j);
                g.porosity[c] = phi.at(i, j);
            }

    sc.bhp = sc.bhp_fraction * sc.p_grad * sc.d_datum;
    sc.n_stages = std::max(1, std::min(rg.max_wells,
        static_cast<int>(std::floor(sc.econ.project_days / sc.econ.drill_days))));
    return sc;
}

SimCase build_sim_case(const Scenario& sc) {
    SimCase cs;
    cs.conns = compute_transmissibilities(sc.grid);
    cs.wi_map.assign(sc.grid.num_cells(), 0.0);
    Well probe;
    probe.r_w = 0.3;
    probe.skin = sc.skin;
    for (int l = 0; l < sc.grid.nz; ++l)
        for (int j = 0; j < sc.grid.ny; ++j)
            for (int i = 0; i < sc.grid.nx; ++i) {
                const int c = sc.grid.cell(i, j, l);
                if (!sc.grid.is_active(c)) continue;
                probe.i = i;
                probe.j = j;
                cs.wi_map[c] = peaceman_well_index(sc.grid, probe, l);
            }
    cs.init = initialize_state(sc.grid, sc.fluid, sc.p_grad, sc.d_datum, sc.sw_init);
    return cs;
}

namespace {

void put(std::ostream& os, const std::string& key, double v) {
    char buf[40];
    snprintf(buf, sizeof buf, "%.17g", v);
    os << key << " = " << buf << "\n";
}
void put(std::ostream& os, const std::string& key, int v) { os << key << " = " << v << "\n"; }
void put(std::ostream& os, const std::string& key, uint64_t v) { os << key << " = " << v << "\n"; }

template <typename T>
void put_array(std::ostream& os, const std::string& key, const std::vector<T>& v) {
    os << key << " =";
    char buf[40];
    for (T x : v) {
        snprintf(buf, sizeof buf, " %.17g", static_cast<double>(x));
        os << buf;
    }
    os << "\n";
}

class KvReader {
public:
    explicit KvReader(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            auto eq = line.find('=');
            if (eq == std::string::npos) throw std::invalid_argument("scenario text: malformed line: " + line);
            std::string key = line.substr(0, eq);
            while (!key.empty() && key.back() == ' ') key.pop_back();
            kv_[key] = line.substr(eq + 1);
        }
    }
    double num(const std::string& key) const { return std::stod(raw(key)); }
    int integer(const std::string& key) const { return static_cast<int>(std::stoll(raw(key))); }
    uint64_t u64(const std::string& key) const { return std::stoull(raw(key)); }
    std::vector<double> array(const std::string& key) const {
        std::istringstream in(raw(key));
        std::vector<double> v;
        double x;
        while (in >> x) v.push_back(x);
        return v;
    }
    std::string raw_str(const std::string& key) const {
        std::string v = raw(key);
        while (!v.empty() && v.front() == ' ') v.erase(v.begin());
        while (!v.empty() && v.back() == ' ') v.pop_back();
        return v;
    }
    // Every key must be consumed; leftovers are typos or foreign content.
    void check_all_used() const {
        for (const auto& [key, value] : kv_)
            if (!used_.count(key))
                throw std::invalid_argument("scenario text: unknown key " + key);
    }

private:
    const std::string& raw(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw std::invalid_argument("scenario text: missing key " + key);
        used_.insert(key);
        return it->second;
    }
    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> used_;
};

}  // namespace

std::string scenario_to_text(const Scenario& sc) {
    std::ostringstream os;
    os << "format = fdev-scenario-1\n";
    put(os, "seed", sc.seed);
    put(os, "n_stages", sc.n_stages);
    put(os, "grid.nx", sc.grid.nx);
    put(os, "grid.ny", sc.grid.ny);
    put(os, "grid.nz", sc.grid.nz);
    put(os, "grid.dx", sc.grid.dx);
    put(os, "grid.dy", sc.grid.dy);
    put(os, "grid.kvkh", sc.grid.kvkh);
    put_array(os, "grid.dz", sc.grid.dz);
    put_array(os, "grid.depth", sc.grid.depth);
    put_array(os, "grid.active", sc.grid.active);
    put_array(os, "grid.perm_h", sc.grid.perm_h);
    put_array(os, "grid.porosity", sc.grid.porosity);
    put(os, "fluid.B_o_ref", sc.fluid.B_o_ref);
    put(os, "fluid.B_w_ref", sc.fluid.B_w_ref);
    put(os, "fluid.c_o", sc.fluid.c_o);
    put(os, "fluid.c_w", sc.fluid.c_w);
    put(os, "fluid.mu_o_ref", sc.fluid.mu_o_ref);
    put(os, "fluid.mu_w_ref", sc.fluid.mu_w_ref);
    put(os, "fluid.gamma_o", sc.fluid.gamma_o);
    put(os, "fluid.rho_w", sc.fluid.rho_w);
    put(os, "fluid.S_or", sc.fluid.S_or);
    put(os, "fluid.S_wc", sc.fluid.S_wc);
    put(os, "fluid.k_roe", sc.fluid.k_roe);
    put(os, "fluid.k_rwe", sc.fluid.k_rwe);
    put(os, "fluid.n_o", sc.fluid.n_o);
    put(os, "fluid.n_w", sc.fluid.n_w);
    put(os, "fluid.p_ref", sc.fluid.p_ref);
    put(os, "econ.oil_price", sc.econ.oil_price);
    put(os, "econ.opex", sc.econ.opex);
    put(os, "econ.water_cost", sc.econ.water_cost);
    put(os, "econ.well_cost", sc.econ.well_cost);
    put(os, "econ.discount_rate", sc.econ.discount_rate);
    put(os, "econ.project_days", sc.econ.project_days);
    put(os, "econ.drill_days", sc.econ.drill_days);
    put(os, "constraints.q_l_max", sc.constraints.q_l_max);
    put(os, "constraints.wc_limit", sc.constraints.wc_limit);
    put(os, "constraints.min_spacing", sc.constraints.min_spacing);
    put(os, "constraints.max_wells", sc.constraints.max_wells);
    put(os, "bhp_fraction", sc.bhp_fraction);
    put(os, "bhp", sc.bhp);
    put(os, "skin", sc.skin);
    put(os, "p_grad", sc.p_grad);
    put(os, "d_datum", sc.d_datum);
    put_array(os, "sw_init", sc.sw_init.values);
    return os.str();
}

Scenario scenario_from_text(const std::string& text) {
    KvReader kv(text);
    Scenario sc;
    if (kv.raw_str("format") != "fdev-scenario-1")
        throw std::invalid_argument("scenario text: unsupported format tag");
    sc.seed = kv.u64("seed");
    sc.n_stages = kv.integer("n_stages");
    GridModel& g = sc.grid;
    g.nx = kv.integer("grid.nx");
    g.ny = kv.integer("grid.ny");
    g.nz = kv.integer("grid.nz");
    g.dx = kv.num("grid.dx");
    g.dy = kv.num("grid.dy");
    g.kvkh = kv.num("grid.kvkh");
    g.dz = kv.array("grid.dz");
    g.depth = kv.array("grid.depth");
    for (double a : kv.array("grid.active")) g.active.push_back(a > 0.5 ? 1 : 0);
    g.perm_h = kv.array("grid.perm_h");
    g.porosity = kv.array("grid.porosity");
    sc.fluid.B_o_ref = kv.num("fluid.B_o_ref");
    sc.fluid.B_w_ref = kv.num("fluid.B_w_ref");
    sc.fluid.c_o = kv.num("fluid.c_o");
    sc.fluid.c_w = kv.num("fluid.c_w");
    sc.fluid.mu_o_ref = kv.num("fluid.mu_o_ref");
    sc.fluid.mu_w_ref = kv.num("fluid.mu_w_ref");
    sc.fluid.gamma_o = kv.num("fluid.gamma_o");
    sc.fluid.rho_w = kv.num("fluid.rho_w");
    sc.fluid.S_or = kv.num("fluid.S_or");
    sc.fluid.S_wc = kv.num("fluid.S_wc");
    sc.fluid.k_roe = kv.num("fluid.k_roe");
    sc.fluid.k_rwe = kv.num("fluid.k_rwe");
    sc.fluid.n_o = kv.num("fluid.n_o");
    sc.fluid.n_w = kv.num("fluid.n_w");
    sc.fluid.p_ref = kv.num("fluid.p_ref");
    sc.econ.oil_price = kv.num("econ.oil_price");
    sc.econ.opex = kv.num("econ.opex");
    sc.econ.water_cost = kv.num("econ.water_cost");
    sc.econ.well_cost = kv.num("econ.well_cost");
    sc.econ.discount_rate = kv.num("econ.discount_rate");
    sc.econ.project_days = kv.num("econ.project_days");
    sc.econ.drill_days = kv.num("econ.drill_days");
    sc.constraints.q_l_max = kv.num("constraints.q_l_max");
    sc.constraints.wc_limit = kv.num("constraints.wc_limit");
    sc.constraints.min_spacing = kv.integer("constraints.min_spacing");
    sc.constraints.max_wells = kv.integer("constraints.max_wells");
    sc.bhp_fraction = kv.num("bhp_fraction");
    sc.bhp = kv.num("bhp");
    sc.skin = kv.num("skin");
    sc.p_grad = kv.num("p_grad");
    sc.d_datum = kv.num("d_datum");
    sc.sw_init.nx = g.nx;
    sc.sw_init.ny = g.ny;
    sc.sw_init.values = kv.array("sw_init");
    kv.check_all_used();
    sc.grid.validate();
    sc.fluid.validate();
    return sc;
}

}  // namespace fdev
