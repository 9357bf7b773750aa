#pragma once

#include <string>
#include <vector>

#include "fdev/environment.hpp"
#include "fdev/nnet.hpp"

namespace fdev {

enum class Pattern { spot4, spot5, spot9, spot16 };

const char* pattern_name(Pattern p);

struct PatternPlan {
    Pattern pattern = Pattern::spot4;
    std::vector<int> cells;  // flat areal indices, row-major drilling order
};

// k x k lattice (k = 2, 3, 4) at the centers of a uniform partition inset
// by half a spacing; 5-spot adds the areal center to the 4-spot corners.
// Wells on inactive cells are dropped.
PatternPlan pattern_plan(Pattern pattern, const GridModel& grid);

// Greedy policy action: argmax drill head, then argmax masked location
// head; ties break to the lowest index; all-masked forces skip.
Action greedy_action(const NetworkParams& net, const Observation& obs,
                     const std::vector<uint8_t>& mask);

struct ScenarioEval {
    int scenario_id = 0;
    double npv_ai = 0.0;
    double npv_pattern[4] = {0.0, 0.0, 0.0, 0.0};  // 4/5/9/16-spot
    double npv_best_pattern = 0.0;
    bool ai_wins = false;
    bool failed = false;  // any simulator hard failure; excluded from aggregates
};

struct EvalReport {
    std::vector<ScenarioEval> scenarios;
    double win_rate = 0.0;
    double mean_npv_ai = 0.0;
    double mean_npv_best_pattern = 0.0;
    int n_failed = 0;

    std::string to_csv() const;
    std::string aggregate_json() const;
};

struct EvalConfig {
    ScenarioRanges ranges;
    SolverConfig solver;
    ObsNorm norm;
    double report_dt = 30.0;
    uint64_t seed = 0;   // frozen scenario set key
    int n_scenarios = 20;
    int workers = 1;
    bool include_patterns = true;  // false: policy NPVs only
};

// Runs the greedy policy and all four pattern agents through the same
// frozen scenario set and assembles per-scenario NPVs plus aggregates.
// net may be null: the AI column is then an all-skip agent (NPV 0).
EvalReport evaluate(const NetworkParams* net, const EvalConfig& cfg);

// Plays one episode with scripted pattern actions (one well per stage,
// remaining stages skip); returns total NPV. Throws SimulationFailure on a
// hard solver failure.
double run_pattern_episode(const PatternPlan& plan, const Scenario& sc,
                           const SolverConfig& solver, double report_dt, const ObsNorm& norm);

// Plays one episode greedily with the given policy; returns total NPV.
double run_greedy_episode(const NetworkParams& net, const Scenario& sc,
                          const SolverConfig& solver, double report_dt, const ObsNorm& norm);

}  // namespace fdev
