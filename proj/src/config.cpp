#include "fdev/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fdev {

namespace {

struct Binding {
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("not a number: " + s);
    return v;
}

class Registry {
public:
    explicit Registry(RunConfig& c) : cfg(c) { build(); }

    void set(const std::string& key, const std::string& value) {
        auto it = map_.find(key);
        if (it == map_.end()) throw std::invalid_argument("unknown config key: " + key);
        try {
            it->second.set(value);
        } catch (const std::exception& e) {
            throw std::invalid_argument("bad value for " + key + ": " + e.what());
        }
    }

    std::string dump() const {
        std::string out;
        for (const auto& [k, b] : map_) out += k + " = " + b.get() + "\n";
        return out;
    }

private:
    RunConfig& cfg;
    std::map<std::string, Binding> map_;

    void bind_double(const std::string& k, double& v) {
        map_[k] = {[&v] { return fmt_double(v); }, [&v](const std::string& s) { v = parse_double(s); }};
    }
    void bind_int(const std::string& k, int& v) {
        map_[k] = {[&v] { return std::to_string(v); }, [&v](const std::string& s) {
                       size_t pos = 0;
                       v = std::stoi(s, &pos);
                       if (pos != s.size()) throw std::invalid_argument("not an integer: " + s);
                   }};
    }
    void bind_u64(const std::string& k, uint64_t& v) {
        map_[k] = {[&v] { return std::to_string(v); },
                   [&v](const std::string& s) { v = std::stoull(s); }};
    }
    void bind_bool(const std::string& k, bool& v) {
        map_[k] = {[&v] { return std::string(v ? "true" : "false"); }, [&v](const std::string& s) {
                       if (s == "true" || s == "1")
                           v = true;
                       else if (s == "false" || s == "0")
                           v = false;
                       else
                           throw std::invalid_argument("not a boolean: " + s);
                   }};
    }
    void bind_string(const std::string& k, std::string& v) {
        map_[k] = {[&v] { return v; }, [&v](const std::string& s) { v = s; }};
    }
    void bind_range(const std::string& k, UniformRange& r) {
        bind_double(k + ".lo", r.lo);
        bind_double(k + ".hi", r.hi);
    }
    void bind_sgs(const std::string& k, SgsParams& p) {
        bind_double(k + ".mean", p.mean);
        bind_double(k + ".std", p.std);
        bind_double(k + ".range_minor", p.range_minor);
        bind_double(k + ".range_major", p.range_major);
    }
    void bind_double_list(const std::string& k, std::vector<double>& v) {
        map_[k] = {[&v] {
                       std::string out;
                       for (size_t i = 0; i < v.size(); ++i)
                           out += (i ? "," : "") + fmt_double(v[i]);
                       return out;
                   },
                   [&v](const std::string& s) {
                       std::vector<double> parsed;
                       std::stringstream ss(s);
                       std::string item;
                       while (std::getline(ss, item, ',')) parsed.push_back(parse_double(item));
                       if (parsed.empty()) throw std::invalid_argument("empty list");
                       v = std::move(parsed);
                   }};
    }
    void bind_structures(const std::string& k, std::vector<VariogramStructure>& v) {
        map_[k] = {[&v] {
                       std::string out;
                       for (size_t i = 0; i < v.size(); ++i)
                           out += std::string(i ? "," : "") +
                                  (v[i] == VariogramStructure::gaussian ? "gaussian" : "exponential");
                       return out;
                   },
                   [&v](const std::string& s) {
                       std::vector<VariogramStructure> parsed;
                       std::stringstream ss(s);
                       std::string item;
                       while (std::getline(ss, item, ',')) {
                           if (item == "gaussian")
                               parsed.push_back(VariogramStructure::gaussian);
                           else if (item == "exponential")
                               parsed.push_back(VariogramStructure::exponential);
                           else
                               throw std::invalid_argument("unknown structure: " + item);
                       }
                       if (parsed.empty()) throw std::invalid_argument("empty list");
                       v = std::move(parsed);
                   }};
    }

    void build() {
        bind_string("run.profile", cfg.profile);
        bind_u64("run.seed", cfg.seed);
        bind_int("run.workers", cfg.workers);
        bind_string("run.out_dir", cfg.out_dir);
        bind_bool("run.deterministic", cfg.deterministic);
        bind_double("run.report_dt", cfg.report_dt);

        ScenarioRanges& r = cfg.ranges;
        bind_int("grid.nx", r.nx);
        bind_int("grid.ny", r.ny);
        bind_int("grid.nz", r.nz);
        bind_int("scenario.min_spacing", r.min_spacing);
        bind_int("scenario.max_wells", r.max_wells);
        bind_range("scenario.dx", r.dx);
        bind_range("scenario.dy", r.dy);
        bind_sgs("scenario.dz", r.dz_sgs);
        bind_range("scenario.azimuth", r.azimuth);
        bind_structures("scenario.structures", r.structures);
        bind_range("scenario.phi_mean", r.phi_mean);
        bind_range("scenario.phi_std", r.phi_std);
        bind_double("scenario.phi_range_minor", r.phi_range_minor);
        bind_double("scenario.phi_range_major", r.phi_range_major);
        bind_double("scenario.perm_log_mean", r.perm_log_mean);
        bind_double("scenario.perm_log_std", r.perm_log_std);
        bind_double("scenario.cloud_noise", r.cloud_noise);
        bind_range("scenario.kvkh_log", r.kvkh_log);
        bind_range("scenario.d_datum", r.d_datum);
        bind_sgs("scenario.depth", r.depth_sgs);
        bind_range("scenario.p_grad", r.p_grad);
        bind_double("scenario.sw_frac_mean", r.sw_frac_mean);
        bind_double("scenario.sw_frac_std", r.sw_frac_std);
        bind_range("scenario.b_o_ref", r.B_o_ref);
        bind_range("scenario.b_w_ref", r.B_w_ref);
        bind_range("scenario.c_o", r.c_o);
        bind_range("scenario.c_w", r.c_w);
        bind_range("scenario.gamma_o", r.gamma_o);
        bind_range("scenario.rho_w", r.rho_w);
        bind_range("scenario.mu_o", r.mu_o);
        bind_range("scenario.mu_w", r.mu_w);
        bind_range("scenario.s_or", r.S_or);
        bind_range("scenario.s_wc", r.S_wc);
        bind_range("scenario.k_roe", r.k_roe);
        bind_range("scenario.k_rwe", r.k_rwe);
        bind_range("scenario.n_o", r.n_o);
        bind_range("scenario.n_w", r.n_w);
        bind_range("scenario.bhp_fraction", r.bhp_fraction);
        bind_range("scenario.skin", r.skin);
        bind_range("scenario.oil_price", r.oil_price);
        bind_range("scenario.water_cost_frac", r.water_cost_frac);
        bind_range("scenario.opex", r.opex);
        bind_range("scenario.well_cost", r.well_cost);
        bind_range("scenario.discount_rate", r.discount_rate);
        bind_double_list("scenario.drill_days", r.drill_days);
        bind_range("scenario.project_years", r.project_years);
        bind_range("scenario.wc_limit", r.wc_limit);
        bind_range("scenario.q_l_max", r.q_l_max);

        SolverConfig& s = cfg.solver;
        bind_double("solver.newton_tol", s.newton_tol);
        bind_int("solver.max_newton", s.max_newton);
        bind_double("solver.dt_init", s.dt_init);
        bind_double("solver.dt_max", s.dt_max);
        bind_double("solver.dt_min", s.dt_min);
        bind_int("solver.grow_iters", s.grow_iters);
        bind_double("solver.dt_grow", s.dt_grow);
        bind_double("solver.dt_cut", s.dt_cut);
        bind_double("solver.max_dsw", s.max_dsw);
        bind_double("solver.rate_bisect_tol", s.rate_bisect_tol);

        bind_double("obs.well_cost_volume_ref", cfg.norm.well_cost_volume_ref);
        bind_double("obs.q_l_ref", cfg.norm.q_l_ref);
        bind_double("obs.drill_days_ref", cfg.norm.drill_days_ref);

        ArchConfig& a = cfg.arch;
        bind_int("arch.trunk_channels", a.trunk_channels);
        bind_int("arch.n_res_blocks", a.n_res_blocks);
        bind_int("arch.head_channels", a.head_channels);
        bind_int("arch.head_reduced", a.head_reduced);
        bind_int("arch.embed", a.embed);

        PpoConfig& p = cfg.ppo;
        bind_double("ppo.gamma", p.gamma);
        bind_double("ppo.lambda", p.lambda);
        bind_double("ppo.clip_eps", p.clip_eps);
        bind_double("ppo.value_clip", p.value_clip);
        bind_double("ppo.c_kl", p.c_kl);
        bind_double("ppo.c_vf", p.c_vf);
        bind_double("ppo.c_ent", p.c_ent);
        bind_double("ppo.lr_init", p.lr_init);
        bind_double("ppo.lr_final", p.lr_final);
        bind_double("ppo.lr_decay_horizon", p.lr_decay_horizon);
        bind_int("ppo.minibatch", p.minibatch);
        bind_int("ppo.epochs", p.epochs);
        bind_double("ppo.reward_scale", p.reward_scale);
        bind_bool("ppo.normalize_advantages", p.normalize_advantages);
        bind_bool("ppo.kl_new_to_old", p.kl_new_to_old);

        bind_int("train.iterations", cfg.iterations);
        bind_int("train.episodes_per_iter", cfg.episodes_per_iter);
        bind_int("train.checkpoint_every", cfg.checkpoint_every);
        bind_int("train.npv_window", cfg.npv_window);
        bind_int("eval.scenarios", cfg.eval_scenarios);
    }
};

}  // namespace

TrainConfig RunConfig::train_config() const {
    TrainConfig tc;
    tc.rollout.ranges = ranges;
    tc.rollout.solver = solver;
    tc.rollout.norm = norm;
    tc.rollout.report_dt = report_dt;
    tc.arch = arch;
    tc.arch.nc = observation_channels(ranges.nz);
    tc.arch.nx = ranges.nx;
    tc.arch.ny = ranges.ny;
    tc.ppo = ppo;
    tc.iterations = iterations;
    tc.episodes_per_iter = episodes_per_iter;
    tc.seed = seed;
    tc.workers = workers;
    tc.checkpoint_every = checkpoint_every;
    tc.npv_window = npv_window;
    tc.out_dir = out_dir;
    return tc;
}

EvalConfig RunConfig::eval_config() const {
    EvalConfig ec;
    ec.ranges = ranges;
    ec.solver = solver;
    ec.norm = norm;
    ec.report_dt = report_dt;
    ec.seed = seed;
    ec.n_scenarios = eval_scenarios;
    ec.workers = workers;
    return ec;
}

RunConfig profile_config(const std::string& profile) {
    RunConfig cfg;
    cfg.profile = profile;
    if (profile == "paper2d" || profile == "paper3d") {
        // Published scale: 50x50 areal grid, full parameter table, large net.
        cfg.ranges.nx = 50;
        cfg.ranges.ny = 50;
        cfg.ranges.nz = profile == "paper3d" ? 3 : 1;
        cfg.arch.trunk_channels = profile == "paper3d" ? 128 : 64;
        cfg.arch.n_res_blocks = 6;
        cfg.arch.head_channels = 128;
        cfg.arch.head_reduced = 2;
        cfg.arch.embed = 50;
        cfg.ppo.lr_decay_horizon = 1.5e7;
        cfg.iterations = 10000;
        cfg.episodes_per_iter = 128;
        cfg.checkpoint_every = 50;
        cfg.eval_scenarios = 150;
        return cfg;
    }
    if (profile != "desk2d" && profile != "desk3d")
        throw std::invalid_argument("unknown profile: " + profile);

    // Desk scale: small grid, narrowed sampling ranges, small net; a full
    // training run fits interactive hardware.
    ScenarioRanges& r = cfg.ranges;
    r.nx = 16;
    r.ny = 16;
    r.nz = profile == "desk3d" ? 3 : 1;
    r.dx = {550, 650};
    r.dy = {550, 650};
    r.dz_sgs = {200, 20, 6, 12};
    r.phi_range_minor = 2;
    r.phi_range_major = 6;
    r.d_datum = {6000, 9000};
    r.depth_sgs = {0, 50, 6, 12};
    r.p_grad = {0.75, 0.9};
    r.mu_o = {2, 6};
    r.bhp_fraction = {0.4, 0.6};
    r.oil_price = {45, 55};
    r.opex = {8, 12};
    // Desk grid holds ~1% of the published-scale pore volume; well cost is
    // scaled down so development can be profitable under primary depletion.
    r.well_cost = {2e7, 5e7};
    r.drill_days = {240};
    r.project_years = {5, 6};
    r.wc_limit = {0.7, 0.9};
    r.q_l_max = {6e3, 1.2e4};
    r.max_wells = 8;

    ArchConfig& a = cfg.arch;
    a.trunk_channels = profile == "desk3d" ? 12 : 8;
    a.n_res_blocks = 1;
    a.head_channels = 16;
    a.head_reduced = 2;
    a.embed = 32;

    // Cheaper time stepping for the small grid; the report grid only
    // discretizes NPV accounting.
    cfg.solver.dt_init = 10;
    cfg.report_dt = 60;

    cfg.ppo.lr_decay_horizon = 2e5;
    cfg.iterations = 400;
    cfg.episodes_per_iter = 64;
    cfg.checkpoint_every = 25;
    cfg.eval_scenarios = 20;
    return cfg;
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
    Registry reg(cfg);
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        try {
            reg.set(key, value);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": " +
                                        e.what());
        }
    }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str());
}

void apply_config_overrides(RunConfig& cfg,
                            const std::vector<std::pair<std::string, std::string>>& kv) {
    Registry reg(cfg);
    for (const auto& [k, v] : kv) reg.set(k, v);
}

std::string resolved_config_text(const RunConfig& cfg) {
    RunConfig& mut = const_cast<RunConfig&>(cfg);  // registry binds non-const refs; dump only reads
    Registry reg(mut);
    return reg.dump();
}

}  // namespace fdev
