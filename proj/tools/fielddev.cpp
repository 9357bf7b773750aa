#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fdev/config.hpp"

namespace fs = std::filesystem;
using namespace fdev;

namespace {

struct CommonFlags {
    std::string config_file;
    std::string profile = "desk2d";
    uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0;
    std::string out_dir;
    std::string checkpoint;
    int scenarios = 0;
    int episodes = 0;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_file, "key = value config file");
    cmd->add_option("--profile", f.profile, "desk2d | desk3d | paper2d | paper3d");
    cmd->add_option("--seed", f.seed, "run seed")->each([&](const std::string&) { f.seed_set = true; });
    cmd->add_option("--workers", f.workers, "worker threads (or FIELDDEV_WORKERS)");
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_option("--checkpoint", f.checkpoint, "network checkpoint path");
    cmd->add_option("--scenarios", f.scenarios, "scenario count");
    cmd->add_option("--episodes", f.episodes, "episodes per training iteration");
    cmd->add_flag("--deterministic", f.deterministic, "fixed seeds / reproducible outputs");
}

RunConfig resolve(const CommonFlags& f) {
    RunConfig cfg = profile_config(f.profile);
    if (!f.config_file.empty()) apply_config_file(cfg, f.config_file);
    if (f.seed_set) cfg.seed = f.seed;
    if (f.workers > 0)
        cfg.workers = f.workers;
    else if (const char* env = std::getenv("FIELDDEV_WORKERS"))
        cfg.workers = std::max(1, std::atoi(env));
    if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
    if (f.scenarios > 0) cfg.eval_scenarios = f.scenarios;
    if (f.episodes > 0) cfg.episodes_per_iter = f.episodes;
    if (f.deterministic) cfg.deterministic = true;
    return cfg;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

void echo_config(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    write_file(cfg.out_dir + "/resolved_config.txt", resolved_config_text(cfg));
}

std::vector<Action> parse_actions(const std::string& text, int nx) {
    // Comma-separated: "skip" or "i:j" areal coordinates.
    std::vector<Action> actions;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        Action a;
        if (item == "skip") {
            a.w = 0;
        } else {
            const auto colon = item.find(':');
            if (colon == std::string::npos)
                throw std::invalid_argument("bad action '" + item + "' (want 'skip' or 'i:j')");
            a.w = 1;
            a.u = std::stoi(item.substr(colon + 1)) * nx + std::stoi(item.substr(0, colon));
        }
        actions.push_back(a);
    }
    return actions;
}

int cmd_sample(const CommonFlags& f) {
    RunConfig cfg = resolve(f);
    echo_config(cfg);
    const int n = cfg.eval_scenarios;
    for (int i = 0; i < n; ++i) {
        Rng rng(hash_combine(cfg.seed, static_cast<uint64_t>(i)));
        Scenario sc = sample_scenario(cfg.ranges, rng);
        char name[64];
        std::snprintf(name, sizeof(name), "/scenario_%04d.txt", i);
        write_file(cfg.out_dir + name, scenario_to_text(sc));
    }
    std::printf("wrote %d scenarios to %s\n", n, cfg.out_dir.c_str());
    return 0;
}

int cmd_simulate(const CommonFlags& f, const std::string& scenario_file,
                 const std::string& actions_text, bool trace) {
    RunConfig cfg = resolve(f);
    echo_config(cfg);

    Scenario sc;
    if (!scenario_file.empty()) {
        std::ifstream in(scenario_file);
        if (!in) throw std::invalid_argument("cannot open scenario file: " + scenario_file);
        std::stringstream ss;
        ss << in.rdbuf();
        sc = scenario_from_text(ss.str());
    } else {
        Rng rng(hash_combine(cfg.seed, 0ULL));
        sc = sample_scenario(cfg.ranges, rng);
    }
    const std::vector<Action> actions = parse_actions(actions_text, sc.grid.nx);

    Environment env(sc, cfg.solver, cfg.report_dt, cfg.norm);
    env.reset();
    std::ofstream trace_out;
    if (trace) trace_out.open(cfg.out_dir + "/episode_trace.jsonl");
    size_t next = 0;
    while (!env.done()) {
        Action a = next < actions.size() ? actions[next++] : Action{};
        StageResult res = env.step(a);
        if (trace) {
            nlohmann::json j;
            j["stage"] = res.info.stage;
            j["action"] = a.w == 1 ? std::to_string(a.u % sc.grid.nx) + ":" +
                                         std::to_string(a.u / sc.grid.nx)
                                   : "skip";
            j["reward"] = res.reward;
            auto wl = nlohmann::json::array();
            for (const Well& w : env.wells()) wl.push_back({{"i", w.i}, {"j", w.j}});
            j["wells"] = wl;
            trace_out << j.dump() << "\n";
        }
        if (res.info.sim_failed) {
            std::fprintf(stderr, "simulate: solver hard failure at stage %d\n", res.info.stage);
            break;
        }
    }

    // Rates history as CSV: one row per report step per well.
    std::string rates = "t,dt,well,q_o,q_w,bhp,watercut,status\n";
    char row[256];
    const WellRates& hist = env.episode_rates();
    for (const RatesRecord& rec : hist)
        for (size_t w = 0; w < rec.wells.size(); ++w) {
            const WellStepRates& ws = rec.wells[w];
            std::snprintf(row, sizeof(row), "%.17g,%.17g,%zu,%.17g,%.17g,%.17g,%.17g,%d\n",
                          rec.t, rec.dt, w, ws.q_o, ws.q_w, ws.bhp, ws.watercut,
                          static_cast<int>(ws.status));
            rates += row;
        }
    write_file(cfg.out_dir + "/rates.csv", rates);

    nlohmann::json summary;
    summary["npv"] = env.total_reward();
    summary["wells"] = env.wells().size();
    summary["stages"] = env.n_stages();
    write_file(cfg.out_dir + "/summary.json", summary.dump(2) + "\n");
    std::printf("NPV = %.6g $ (%zu wells)\n", env.total_reward(), env.wells().size());
    return 0;
}

int cmd_train(const CommonFlags& f) {
    RunConfig cfg = resolve(f);
    echo_config(cfg);
    TrainConfig tc = cfg.train_config();
    if (!f.checkpoint.empty()) tc.init_checkpoint = f.checkpoint;
    TrainResult res = train(tc);
    std::printf("train: %d iterations, %ld samples, metrics at %s\n", res.iterations_run,
                res.total_samples, res.metrics_path.c_str());
    if (!res.ok) {
        std::fprintf(stderr, "train: stopped on persistent non-finite loss\n");
        return 2;
    }
    return 0;
}

int cmd_eval(const CommonFlags& f, bool include_patterns) {
    RunConfig cfg = resolve(f);
    echo_config(cfg);
    EvalConfig ec = cfg.eval_config();
    ec.include_patterns = include_patterns;

    NetworkParams net;
    const NetworkParams* net_ptr = nullptr;
    if (!f.checkpoint.empty()) {
        net = load_checkpoint(f.checkpoint);
        net_ptr = &net;
    }
    EvalReport report = evaluate(net_ptr, ec);
    const std::string base = include_patterns ? "compare" : "eval";
    if (include_patterns) {
        write_file(cfg.out_dir + "/" + base + "_report.csv", report.to_csv());
    } else {
        std::string csv = "scenario_id,npv_ai\n";
        char row[128];
        for (const ScenarioEval& ev : report.scenarios) {
            if (ev.failed) continue;
            std::snprintf(row, sizeof(row), "%d,%.17g\n", ev.scenario_id, ev.npv_ai);
            csv += row;
        }
        write_file(cfg.out_dir + "/" + base + "_report.csv", csv);
    }
    write_file(cfg.out_dir + "/" + base + "_summary.json", report.aggregate_json());
    std::printf("%s: mean AI NPV %.6g $, win rate %.3f, %d failed\n", base.c_str(),
                report.mean_npv_ai, report.win_rate, report.n_failed);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Oil-field development planning: scenarios, simulation, RL training"};
    app.require_subcommand(1);

    CommonFlags f;
    std::string scenario_file, actions_text;
    bool trace = false;

    CLI::App* sample = app.add_subcommand("sample", "sample and serialize scenarios");
    add_common(sample, f);
    CLI::App* simulate = app.add_subcommand("simulate", "run one scenario with a fixed action list");
    add_common(simulate, f);
    simulate->add_option("--scenario-file", scenario_file, "serialized scenario (default: sample one)");
    simulate->add_option("--actions", actions_text, "comma list of 'skip' or 'i:j'");
    simulate->add_flag("--trace", trace, "write episode_trace.jsonl");
    CLI::App* train_cmd = app.add_subcommand("train", "PPO training");
    add_common(train_cmd, f);
    CLI::App* eval_cmd = app.add_subcommand("eval", "greedy policy evaluation on a frozen set");
    add_common(eval_cmd, f);
    CLI::App* compare = app.add_subcommand("compare", "policy vs 4/5/9/16-spot patterns");
    add_common(compare, f);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (sample->parsed()) return cmd_sample(f);
        if (simulate->parsed()) return cmd_simulate(f, scenario_file, actions_text, trace);
        if (train_cmd->parsed()) return cmd_train(f);
        if (eval_cmd->parsed()) return cmd_eval(f, false);
        if (compare->parsed()) return cmd_eval(f, true);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
    return 1;
}
