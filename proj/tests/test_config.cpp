#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <stdexcept>
#include <string>

#include "fdev/config.hpp"

using namespace fdev;

TEST_CASE("profile defaults") {
    SUBCASE("desk2d is the small 2D configuration") {
        RunConfig c = profile_config("desk2d");
        CHECK(c.ranges.nx == 16);
        CHECK(c.ranges.ny == 16);
        CHECK(c.ranges.nz == 1);
        CHECK(c.arch.n_res_blocks == 1);
        CHECK(c.ranges.drill_days == std::vector<double>{240});
    }
    SUBCASE("paper3d uses the published grid and network sizes") {
        RunConfig c = profile_config("paper3d");
        CHECK(c.ranges.nx == 50);
        CHECK(c.ranges.ny == 50);
        CHECK(c.ranges.nz == 3);
        CHECK(c.arch.trunk_channels == 128);
        CHECK(c.arch.n_res_blocks == 6);
        CHECK(c.arch.embed == 50);
    }
    SUBCASE("unknown profile is rejected") {
        CHECK_THROWS_AS(profile_config("bogus"), std::invalid_argument);
    }
}

TEST_CASE("config text parsing") {
    RunConfig c = profile_config("desk2d");

    SUBCASE("values, comments and blank lines") {
        apply_config_text(c,
                          "# comment\n"
                          "\n"
                          "run.seed = 42\n"
                          "ppo.clip_eps = 0.3   # trailing comment\n"
                          "scenario.oil_price.lo = 50\n"
                          "scenario.oil_price.hi = 60\n"
                          "train.iterations = 7\n");
        CHECK(c.seed == 42);
        CHECK(c.ppo.clip_eps == 0.3);
        CHECK(c.ranges.oil_price.lo == 50);
        CHECK(c.ranges.oil_price.hi == 60);
        CHECK(c.iterations == 7);
    }
    SUBCASE("later values win") {
        apply_config_text(c, "run.seed = 1\nrun.seed = 2\n");
        CHECK(c.seed == 2);
    }
    SUBCASE("unknown key names the offending line") {
        try {
            apply_config_text(c, "run.seed = 1\nnot.a.key = 3\n");
            FAIL("expected invalid_argument");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("2") != std::string::npos);
            CHECK(std::string(e.what()).find("not.a.key") != std::string::npos);
        }
    }
    SUBCASE("malformed values are rejected") {
        CHECK_THROWS_AS(apply_config_text(c, "run.seed = banana\n"), std::invalid_argument);
        CHECK_THROWS_AS(apply_config_text(c, "run.seed\n"), std::invalid_argument);
    }
    SUBCASE("overrides share the same registry") {
        apply_config_overrides(c, {{"run.workers", "4"}, {"ppo.epochs", "3"}});
        CHECK(c.workers == 4);
        CHECK(c.ppo.epochs == 3);
        CHECK_THROWS_AS(apply_config_overrides(c, {{"nope", "1"}}), std::invalid_argument);
    }
}

TEST_CASE("resolved config text round-trips") {
    RunConfig c = profile_config("desk2d");
    apply_config_text(c, "run.seed = 99\nppo.lr_init = 0.002\nscenario.max_wells = 5\n");
    std::string dump = resolved_config_text(c);
    CHECK(dump.find("run.seed = 99") != std::string::npos);

    RunConfig d = profile_config("paper2d");  // deliberately different base
    apply_config_text(d, dump);
    CHECK(resolved_config_text(d) == dump);
}

TEST_CASE("derived train and eval configs") {
    RunConfig c = profile_config("desk2d");
    apply_config_text(c, "run.seed = 5\nrun.workers = 2\ntrain.episodes_per_iter = 12\n");
    TrainConfig t = c.train_config();
    CHECK(t.seed == 5);
    CHECK(t.workers == 2);
    CHECK(t.episodes_per_iter == 12);
    CHECK(t.arch.nc == observation_channels(c.ranges.nz));
    CHECK(t.arch.nx == c.ranges.nx);
    CHECK(t.rollout.ranges.nx == c.ranges.nx);

    EvalConfig e = c.eval_config();
    CHECK(e.seed == 5);
    CHECK(e.n_scenarios == c.eval_scenarios);
    CHECK(e.ranges.ny == c.ranges.ny);
}
