#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fdev/agents.hpp"

using namespace fdev;

namespace {

GridModel active_grid(int nx, int ny) {
    GridModel g;
    g.nx = nx;
    g.ny = ny;
    g.nz = 1;
    g.dx = g.dy = 600;
    const size_t n = static_cast<size_t>(nx) * ny;
    g.dz.assign(n, 100.0);
    g.depth.assign(n, 0.0);
    g.active.assign(n, 1);
    g.perm_h.assign(n, 100.0);
    g.porosity.assign(n, 0.2);
    return g;
}

ScenarioRanges desk_ranges() {
    ScenarioRanges r;
    r.nx = 8;
    r.ny = 8;
    r.nz = 1;
    r.dz_sgs = {150, 15, 4, 8};
    r.project_years = {4, 5};
    r.drill_days = {240};
    r.max_wells = 6;
    return r;
}

NetworkParams tiny_net(const ScenarioRanges& r, uint64_t seed) {
    ArchConfig a;
    a.nc = observation_channels(r.nz);
    a.nx = r.nx;
    a.ny = r.ny;
    a.trunk_channels = 4;
    a.n_res_blocks = 1;
    a.head_channels = 4;
    a.head_reduced = 2;
    a.embed = 8;
    Rng rng(seed);
    return init_params(a, rng);
}

}  // namespace

TEST_CASE("pattern lattices on a fully active 50x50 grid") {
    GridModel g = active_grid(50, 50);

    auto at = [&](int i, int j) { return j * 50 + i; };

    SUBCASE("4-spot: 2x2 lattice at quarter points") {
        PatternPlan p = pattern_plan(Pattern::spot4, g);
        CHECK(p.cells == std::vector<int>{at(12, 12), at(37, 12), at(12, 37), at(37, 37)});
    }
    SUBCASE("5-spot adds the center") {
        PatternPlan p = pattern_plan(Pattern::spot5, g);
        REQUIRE(p.cells.size() == 5);
        CHECK(std::count(p.cells.begin(), p.cells.end(), at(24, 24)) +
                  std::count(p.cells.begin(), p.cells.end(), at(25, 25)) >=
              1);
        // Row-major order: sorted by (j, i).
        for (size_t k = 1; k < p.cells.size(); ++k) CHECK(p.cells[k - 1] < p.cells[k]);
    }
    SUBCASE("9-spot and 16-spot sizes") {
        CHECK(pattern_plan(Pattern::spot9, g).cells.size() == 9);
        CHECK(pattern_plan(Pattern::spot16, g).cells.size() == 16);
    }
}

TEST_CASE("pattern wells on inactive cells are dropped") {
    GridModel g = active_grid(50, 50);
    PatternPlan full = pattern_plan(Pattern::spot9, g);
    // Deactivate two of the nine lattice cells.
    g.active[full.cells[0]] = 0;
    g.active[full.cells[4]] = 0;
    PatternPlan p = pattern_plan(Pattern::spot9, g);
    CHECK(p.cells.size() == 7);
    for (int c : p.cells) CHECK(g.active[c] == 1);

    for (uint8_t& a : g.active) a = 0;
    CHECK(pattern_plan(Pattern::spot4, g).cells.empty());
}

TEST_CASE("pattern names") {
    CHECK(std::string(pattern_name(Pattern::spot4)) == "4spot");
    CHECK(std::string(pattern_name(Pattern::spot16)) == "16spot");
}

TEST_CASE("greedy action selection") {
    ScenarioRanges r = desk_ranges();
    NetworkParams net = tiny_net(r, 3);
    Rng srng(5);
    Scenario sc = sample_scenario(r, srng);
    Environment env(sc);
    Observation obs = env.reset();

    SUBCASE("all-masked grid forces skip") {
        std::vector<uint8_t> mask(64, 0);
        Action a = greedy_action(net, obs, mask);
        CHECK(a.w == 0);
    }
    SUBCASE("a single valid cell is the only drill target") {
        std::vector<uint8_t> mask(64, 0);
        mask[19] = 1;
        Action a = greedy_action(net, obs, mask);
        if (a.w == 1) CHECK(a.u == 19);
    }
    SUBCASE("a large location-bias offset steers the choice") {
        std::vector<uint8_t> mask(64, 1);
        // Push the drill head hard toward drilling and bias one cell.
        net.data[net.pdrill.b + 1] = 50.0;
        net.data[net.ploc.b + 42] = 50.0;
        Action a = greedy_action(net, obs, mask);
        CHECK(a.w == 1);
        CHECK(a.u == 42);
        // Masking the favourite moves the argmax elsewhere.
        mask[42] = 0;
        Action b = greedy_action(net, obs, mask);
        CHECK(b.w == 1);
        CHECK(b.u != 42);
        CHECK(mask[b.u] == 1);
    }
}

TEST_CASE("greedy choice is invariant to a constant location-logit shift") {
    ScenarioRanges r = desk_ranges();
    NetworkParams net = tiny_net(r, 7);
    Rng lrng(8);
    for (size_t k = 0; k < net.ploc.w_size; ++k) net.data[net.ploc.w + k] = 0.1 * lrng.normal();
    Rng srng(9);
    Scenario sc = sample_scenario(r, srng);
    Environment env(sc);
    Observation obs = env.reset();
    std::vector<uint8_t> mask = env.action_mask();

    Action a1 = greedy_action(net, obs, mask);
    for (size_t k = 0; k < net.ploc.b_size; ++k) net.data[net.ploc.b + k] += 3.7;
    Action a2 = greedy_action(net, obs, mask);
    CHECK(a1.w == a2.w);
    CHECK(a1.u == a2.u);
}

TEST_CASE("evaluation over a frozen scenario set") {
    EvalConfig cfg;
    cfg.ranges = desk_ranges();
    cfg.report_dt = 60.0;
    cfg.seed = 17;
    cfg.n_scenarios = 3;

    SUBCASE("null policy plays all-skip with zero NPV") {
        EvalReport rep = evaluate(nullptr, cfg);
        REQUIRE(rep.scenarios.size() == 3);
        for (const ScenarioEval& ev : rep.scenarios) {
            if (ev.failed) continue;
            CHECK(ev.npv_ai == 0.0);
            double best = *std::max_element(ev.npv_pattern, ev.npv_pattern + 4);
            CHECK(ev.npv_best_pattern == best);
            CHECK(ev.ai_wins == (ev.npv_ai >= ev.npv_best_pattern));
        }
        CHECK(rep.win_rate >= 0.0);
        CHECK(rep.win_rate <= 1.0);
    }
    SUBCASE("deterministic across calls and worker counts") {
        NetworkParams net = tiny_net(cfg.ranges, 21);
        EvalReport r1 = evaluate(&net, cfg);
        cfg.workers = 2;
        EvalReport r2 = evaluate(&net, cfg);
        REQUIRE(r1.scenarios.size() == r2.scenarios.size());
        for (size_t k = 0; k < r1.scenarios.size(); ++k) {
            CHECK(r1.scenarios[k].npv_ai == r2.scenarios[k].npv_ai);
            CHECK(r1.scenarios[k].npv_best_pattern == r2.scenarios[k].npv_best_pattern);
        }
        CHECK(r1.to_csv() == r2.to_csv());
    }
    SUBCASE("include_patterns = false leaves pattern columns at zero") {
        NetworkParams net = tiny_net(cfg.ranges, 23);
        cfg.include_patterns = false;
        EvalReport rep = evaluate(&net, cfg);
        for (const ScenarioEval& ev : rep.scenarios)
            for (double v : ev.npv_pattern) CHECK(v == 0.0);
    }
}

TEST_CASE("report serialization") {
    EvalReport rep;
    ScenarioEval ev;
    ev.scenario_id = 0;
    ev.npv_ai = 1.5e8;
    ev.npv_pattern[0] = 1e8;
    ev.npv_pattern[1] = 1.2e8;
    ev.npv_pattern[2] = 0.9e8;
    ev.npv_pattern[3] = -2e7;
    ev.npv_best_pattern = 1.2e8;
    ev.ai_wins = true;
    rep.scenarios.push_back(ev);
    rep.win_rate = 1.0;
    rep.mean_npv_ai = 1.5e8;
    rep.mean_npv_best_pattern = 1.2e8;

    std::string csv = rep.to_csv();
    std::istringstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "scenario_id,npv_ai,npv_4spot,npv_5spot,npv_9spot,npv_16spot,npv_best_pattern,ai_wins");
    std::string row;
    std::getline(in, row);
    CHECK(row.substr(0, 2) == "0,");
    CHECK(row.back() == '1');

    std::string json = rep.aggregate_json();
    CHECK(json.find("\"win_rate\"") != std::string::npos);
    CHECK(json.find("\"mean_npv_ai\"") != std::string::npos);
}
