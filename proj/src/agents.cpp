#include "fdev/agents.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include "json.hpp"

namespace fdev {

const char* pattern_name(Pattern p) {
    switch (p) {
        case Pattern::spot4: return "4spot";
        case Pattern::spot5: return "5spot";
        case Pattern::spot9: return "9spot";
        case Pattern::spot16: return "16spot";
    }
    return "?";
}

PatternPlan pattern_plan(Pattern pattern, const GridModel& grid) {
    PatternPlan plan;
    plan.pattern = pattern;
    const int k = pattern == Pattern::spot16 ? 4 : pattern == Pattern::spot9 ? 3 : 2;
    std::vector<std::pair<int, int>> pts;
    for (int mj = 0; mj < k; ++mj)
        for (int mi = 0; mi < k; ++mi)
            pts.emplace_back(static_cast<int>((mi + 0.5) * grid.nx / k),
                             static_cast<int>((mj + 0.5) * grid.ny / k));
    if (pattern == Pattern::spot5)
        pts.emplace_back((pts[0].first + pts[3].first) / 2, (pts[0].second + pts[3].second) / 2);
    // Row-major drilling order.
    std::sort(pts.begin(), pts.end(),
              [](const auto& a, const auto& b) { return std::tie(a.second, a.first) < std::tie(b.second, b.first); });
    for (const auto& [i, j] : pts)
        if (grid.active[grid.cell(i, j, 0)]) plan.cells.push_back(j * grid.nx + i);
    return plan;
}

Action greedy_action(const NetworkParams& net, const Observation& obs,
                     const std::vector<uint8_t>& mask) {
    PolicyValueOutput out = forward(net, obs.data.data(), 1, mask.data());
    Action act;
    act.w = out.drill_logp[1] > out.drill_logp[0] ? 1 : 0;  // tie -> skip (lowest index)
    if (act.w == 1) {
        int best = -1;
        for (int u = 0; u < out.hw; ++u) {
            if (!mask[u]) continue;
            if (best < 0 || out.loc_logp[u] > out.loc_logp[best]) best = u;
        }
        if (best < 0)
            act.w = 0;
        else
            act.u = best;
    }
    return act;
}

double run_pattern_episode(const PatternPlan& plan, const Scenario& sc,
                           const SolverConfig& solver, double report_dt, const ObsNorm& norm) {
    Environment env(sc, solver, report_dt, norm);
    env.reset();
    size_t next = 0;
    while (!env.done()) {
        Action act;
        if (next < plan.cells.size() && env.action_mask()[plan.cells[next]]) {
            act.w = 1;
            act.u = plan.cells[next];
            ++next;
        }
        StageResult res = env.step(act);
        if (res.info.sim_failed) throw SimulationFailure("pattern episode: solver failure");
    }
    return env.total_reward();
}

double run_greedy_episode(const NetworkParams& net, const Scenario& sc,
                          const SolverConfig& solver, double report_dt, const ObsNorm& norm) {
    Environment env(sc, solver, report_dt, norm);
    Observation obs = env.reset();
    while (!env.done()) {
        Action act = greedy_action(net, obs, env.action_mask());
        StageResult res = env.step(act);
        if (res.info.sim_failed) throw SimulationFailure("greedy episode: solver failure");
        obs = std::move(res.obs);
    }
    return env.total_reward();
}

EvalReport evaluate(const NetworkParams* net, const EvalConfig& cfg) {
    EvalReport report;
    report.scenarios.resize(cfg.n_scenarios);

    auto run_one = [&](int id) {
        ScenarioEval& ev = report.scenarios[id];
        ev.scenario_id = id;
        Rng rng(hash_combine(hash_combine(cfg.seed, 0x6576616cULL), static_cast<uint64_t>(id)));
        Scenario sc = sample_scenario(cfg.ranges, rng);
        try {
            ev.npv_ai = net ? run_greedy_episode(*net, sc, cfg.solver, cfg.report_dt, cfg.norm)
                            : 0.0;
            if (cfg.include_patterns) {
                const Pattern pats[4] = {Pattern::spot4, Pattern::spot5, Pattern::spot9,
                                         Pattern::spot16};
                for (int p = 0; p < 4; ++p) {
                    PatternPlan plan = pattern_plan(pats[p], sc.grid);
                    ev.npv_pattern[p] =
                        run_pattern_episode(plan, sc, cfg.solver, cfg.report_dt, cfg.norm);
                }
                ev.npv_best_pattern = *std::max_element(ev.npv_pattern, ev.npv_pattern + 4);
            }
            ev.ai_wins = ev.npv_ai >= ev.npv_best_pattern;
        } catch (const SimulationFailure&) {
            ev.failed = true;
        }
    };

    const int workers = std::max(1, std::min(cfg.workers, cfg.n_scenarios));
    if (workers == 1) {
        for (int id = 0; id < cfg.n_scenarios; ++id) run_one(id);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t)
            pool.emplace_back([&] {
                for (;;) {
                    const int id = next.fetch_add(1);
                    if (id >= cfg.n_scenarios) return;
                    run_one(id);
                }
            });
        for (auto& th : pool) th.join();
    }

    int n_ok = 0, wins = 0;
    double sum_ai = 0.0, sum_best = 0.0;
    for (const ScenarioEval& ev : report.scenarios) {
        if (ev.failed) {
            ++report.n_failed;
            continue;
        }
        ++n_ok;
        wins += ev.ai_wins ? 1 : 0;
        sum_ai += ev.npv_ai;
        sum_best += ev.npv_best_pattern;
    }
    if (n_ok > 0) {
        report.win_rate = static_cast<double>(wins) / n_ok;
        report.mean_npv_ai = sum_ai / n_ok;
        report.mean_npv_best_pattern = sum_best / n_ok;
    }
    return report;
}

std::string EvalReport::to_csv() const {
    std::string out =
        "scenario_id,npv_ai,npv_4spot,npv_5spot,npv_9spot,npv_16spot,npv_best_pattern,ai_wins\n";
    char row[512];
    for (const ScenarioEval& ev : scenarios) {
        if (ev.failed) continue;
        std::snprintf(row, sizeof(row), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                      ev.scenario_id, ev.npv_ai, ev.npv_pattern[0], ev.npv_pattern[1],
                      ev.npv_pattern[2], ev.npv_pattern[3], ev.npv_best_pattern,
                      ev.ai_wins ? 1 : 0);
        out += row;
    }
    return out;
}

std::string EvalReport::aggregate_json() const {
    nlohmann::json j;
    j["n_scenarios"] = scenarios.size();
    j["n_failed"] = n_failed;
    j["win_rate"] = win_rate;
    j["mean_npv_ai"] = mean_npv_ai;
    j["mean_npv_best_pattern"] = mean_npv_best_pattern;
    return j.dump(2) + "\n";
}

}  // namespace fdev
