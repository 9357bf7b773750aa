#pragma once

#include <string>
#include <vector>

#include "fdev/agents.hpp"
#include "fdev/ppo.hpp"

namespace fdev {

// Everything a run needs, with flat dotted-key text overrides. Unknown
// keys are rejected; the resolved config is echoed next to run outputs.
struct RunConfig {
    std::string profile = "desk2d";
    uint64_t seed = 0;
    int workers = 1;
    std::string out_dir = "out";
    bool deterministic = true;
    double report_dt = 30.0;

    ScenarioRanges ranges;
    SolverConfig solver;
    ObsNorm norm;
    ArchConfig arch;  // nc/nx/ny derived from ranges at use time
    PpoConfig ppo;

    int iterations = 100;
    int episodes_per_iter = 32;
    int checkpoint_every = 20;
    int npv_window = 10;
    int eval_scenarios = 20;

    TrainConfig train_config() const;
    EvalConfig eval_config() const;
};

// Profile defaults: desk2d / desk3d are small fast configurations;
// paper2d / paper3d use the published grid, ranges and network sizes.
RunConfig profile_config(const std::string& profile);

// "key = value" lines, '#' comments. Later values win. Unknown keys or
// malformed lines raise invalid_argument with the line number.
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_file(RunConfig& cfg, const std::string& path);
void apply_config_overrides(RunConfig& cfg,
                            const std::vector<std::pair<std::string, std::string>>& kv);

// Every registered key, sorted, in config-file syntax.
std::string resolved_config_text(const RunConfig& cfg);

}  // namespace fdev
