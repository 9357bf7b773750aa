#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "fdev/nnet.hpp"

using namespace fdev;

namespace {

ArchConfig tiny_arch() {
    ArchConfig a;
    a.nc = 3;
    a.nx = 6;
    a.ny = 6;
    a.trunk_channels = 8;
    a.n_res_blocks = 1;
    a.head_channels = 8;
    a.head_reduced = 2;
    a.embed = 10;
    return a;
}

std::vector<double> random_obs(const ArchConfig& a, int batch, Rng& rng) {
    std::vector<double> obs(static_cast<size_t>(batch) * a.nc * a.hw());
    for (double& v : obs) v = rng.uniform(-1.0, 1.0);
    return obs;
}

std::vector<uint8_t> full_mask(const ArchConfig& a, int batch) {
    return std::vector<uint8_t>(static_cast<size_t>(batch) * a.hw(), 1);
}

}  // namespace

TEST_CASE("parameter count matches the closed-form layer sum") {
    ArchConfig a;
    a.nc = 17;
    a.nx = 16;
    a.ny = 16;
    a.trunk_channels = 64;
    a.n_res_blocks = 6;
    a.head_channels = 128;
    a.head_reduced = 2;
    a.embed = 50;
    Rng rng(1);
    NetworkParams net = init_params(a, rng);
    const int hw = 256;
    size_t expect = 0;
    expect += 64 * 17 * 9 + 64;                    // trunk conv 3x3
    expect += 6 * 2 * (64 * 64 * 9 + 64);          // residual blocks
    expect += 2 * (128 * 64 * 1 + 128);            // two 1x1 reduction convs
    expect += 2 * (2 * 128 * 1 + 2);               // two 1x1 two-kernel convs
    expect += 2 * (50 * 2 * hw + 50);              // two embedding FCs
    expect += 2 * 50 + 2;                          // drill head
    expect += hw * 50 + hw;                        // location head
    expect += 1 * 50 + 1;                          // value head
    CHECK(net.data.size() == expect);
}

TEST_CASE("same seed gives identical parameters") {
    Rng r1(5), r2(5);
    CHECK(init_params(tiny_arch(), r1).data == init_params(tiny_arch(), r2).data);
}

TEST_CASE("zero-initialized heads give a uniform masked policy") {
    ArchConfig a = tiny_arch();
    Rng rng(2);
    NetworkParams net = init_params(a, rng);
    Rng orng(3);
    std::vector<double> obs = random_obs(a, 1, orng);
    std::vector<uint8_t> mask(a.hw(), 0);
    mask[3] = mask[17] = mask[30] = 1;
    PolicyValueOutput out = forward(net, obs.data(), 1, mask.data());
    CHECK(std::exp(out.drill_logp[0]) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::exp(out.drill_logp[1]) == doctest::Approx(0.5).epsilon(1e-12));
    for (int u = 0; u < a.hw(); ++u) {
        if (mask[u])
            CHECK(std::exp(out.loc_logp[u]) == doctest::Approx(1.0 / 3).epsilon(1e-12));
        else
            CHECK(std::exp(out.loc_logp[u]) == 0.0);
    }
}

TEST_CASE("masked softmax contracts") {
    ArchConfig a = tiny_arch();
    Rng rng(4);
    NetworkParams net = init_params(a, rng);
    for (double& v : net.data) v = 0.01 * std::sin(0.7 * (&v - net.data.data()));
    Rng orng(5);
    std::vector<double> obs = random_obs(a, 1, orng);

    SUBCASE("single valid cell gets probability one") {
        std::vector<uint8_t> mask(a.hw(), 0);
        mask[11] = 1;
        PolicyValueOutput out = forward(net, obs.data(), 1, mask.data());
        CHECK(std::exp(out.loc_logp[11]) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("probabilities sum to one over the valid support") {
        std::vector<uint8_t> mask(a.hw(), 1);
        for (int u = 0; u < a.hw(); u += 3) mask[u] = 0;
        PolicyValueOutput out = forward(net, obs.data(), 1, mask.data());
        double sum = 0.0;
        for (int u = 0; u < a.hw(); ++u) {
            if (!mask[u])
                CHECK(out.loc_logp[u] == -std::numeric_limits<double>::infinity());
            else
                sum += std::exp(out.loc_logp[u]);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::exp(out.drill_logp[0]) + std::exp(out.drill_logp[1]) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("all-masked grid forces skip") {
        std::vector<uint8_t> mask(a.hw(), 0);
        PolicyValueOutput out = forward(net, obs.data(), 1, mask.data());
        CHECK(std::exp(out.drill_logp[0]) == 1.0);
        CHECK(std::exp(out.drill_logp[1]) == 0.0);
        for (int u = 0; u < a.hw(); ++u) CHECK(std::exp(out.loc_logp[u]) == 0.0);
        CHECK(joint_entropy(out, 0) == 0.0);
    }
}

TEST_CASE("residual blocks with zero weights are identity") {
    ArchConfig a = tiny_arch();
    Rng rng(6);
    NetworkParams net = init_params(a, rng);
    for (const auto& r : net.res) {
        for (size_t k = 0; k < r.first.w_size; ++k) net.data[r.first.w + k] = 0.0;
        for (size_t k = 0; k < r.second.w_size; ++k) net.data[r.second.w + k] = 0.0;
    }
    Rng orng(7);
    std::vector<double> obs = random_obs(a, 1, orng);
    std::vector<uint8_t> mask = full_mask(a, 1);
    ForwardCache cache;
    forward(net, obs.data(), 1, mask.data(), &cache);
    const size_t chw = static_cast<size_t>(a.trunk_channels) * a.hw();
    for (size_t k = 0; k < chw; ++k)
        CHECK(cache.res_out[(a.n_res_blocks - 1) * chw + k] == cache.trunk_act[k]);
}

TEST_CASE("batch rows equal single-sample forwards") {
    ArchConfig a = tiny_arch();
    Rng rng(8);
    NetworkParams net = init_params(a, rng);
    const int batch = 5;
    Rng orng(9);
    std::vector<double> obs = random_obs(a, batch, orng);
    std::vector<uint8_t> masks(static_cast<size_t>(batch) * a.hw(), 1);
    Rng mrng(10);
    for (auto& m : masks) m = mrng.uniform() < 0.7 ? 1 : 0;
    PolicyValueOutput out = forward(net, obs.data(), batch, masks.data(), nullptr, 3);
    for (int s = 0; s < batch; ++s) {
        PolicyValueOutput one = forward(net, obs.data() + static_cast<size_t>(s) * a.nc * a.hw(),
                                        1, masks.data() + static_cast<size_t>(s) * a.hw());
        CHECK(out.value[s] == one.value[0]);
        for (int i = 0; i < 2; ++i) CHECK(out.drill_logp[2 * s + i] == one.drill_logp[i]);
        for (int u = 0; u < a.hw(); ++u)
            CHECK(out.loc_logp[static_cast<size_t>(s) * a.hw() + u] == one.loc_logp[u]);
    }
}

TEST_CASE("action log-prob and joint entropy") {
    PolicyValueOutput out;
    out.batch = 1;
    out.hw = 2;
    const double inf = std::numeric_limits<double>::infinity();

    SUBCASE("uniform drill head, skip action") {
        out.drill_logp = {std::log(0.5), std::log(0.5)};
        out.loc_logp = {std::log(0.3), std::log(0.7)};
        CHECK(action_log_prob(out, 0, Action{0, 0}) == doctest::Approx(std::log(0.5)));
        CHECK(action_log_prob(out, 0, Action{1, 1}) ==
              doctest::Approx(std::log(0.5) + std::log(0.7)));
    }
    SUBCASE("deterministic policy has zero entropy") {
        out.drill_logp = {0.0, -inf};
        out.loc_logp = {-inf, -inf};
        CHECK(joint_entropy(out, 0) == 0.0);
    }
    SUBCASE("joint entropy matches brute force over the three outcomes") {
        out.drill_logp = {std::log(0.4), std::log(0.6)};
        out.loc_logp = {std::log(0.25), std::log(0.75)};
        // Outcomes: skip (0.4), drill@0 (0.6*0.25), drill@1 (0.6*0.75).
        const double p1 = 0.4, p2 = 0.6 * 0.25, p3 = 0.6 * 0.75;
        const double brute = -(p1 * std::log(p1) + p2 * std::log(p2) + p3 * std::log(p3));
        CHECK(joint_entropy(out, 0) == doctest::Approx(brute).epsilon(1e-12));
    }
    SUBCASE("illegal action is a contract violation") {
        out.drill_logp = {0.0, -inf};
        out.loc_logp = {-inf, -inf};
        CHECK_THROWS_AS(action_log_prob(out, 0, Action{1, 0}), std::logic_error);
    }
}

TEST_CASE("gradient check against central finite differences") {
    ArchConfig a = tiny_arch();
    Rng rng(11);
    NetworkParams net = init_params(a, rng);
    // Give the zero-initialized heads small random weights so their
    // gradients are exercised off the symmetric point.
    for (const LayerRef* l : {&net.pdrill, &net.ploc})
        for (size_t k = 0; k < l->w_size; ++k) net.data[l->w + k] = 0.05 * rng.normal();

    const int batch = 2;
    Rng orng(12);
    std::vector<double> obs = random_obs(a, batch, orng);
    std::vector<uint8_t> masks(static_cast<size_t>(batch) * a.hw(), 1);
    Rng mrng(13);
    for (auto& m : masks) m = mrng.uniform() < 0.8 ? 1 : 0;

    // Scalar loss: fixed random combination of all outputs.
    Rng wrng(14);
    std::vector<double> w_drill(batch * 2), w_loc(static_cast<size_t>(batch) * a.hw()),
        w_val(batch);
    for (double& v : w_drill) v = wrng.normal();
    for (double& v : w_loc) v = wrng.normal();
    for (double& v : w_val) v = wrng.normal();

    auto loss = [&](const NetworkParams& p) {
        PolicyValueOutput out = forward(p, obs.data(), batch, masks.data());
        double acc = 0.0;
        for (int s = 0; s < batch; ++s) {
            for (int i = 0; i < 2; ++i)
                if (std::isfinite(out.drill_logp[2 * s + i]))
                    acc += w_drill[2 * s + i] * out.drill_logp[2 * s + i];
            for (int u = 0; u < a.hw(); ++u) {
                const size_t k = static_cast<size_t>(s) * a.hw() + u;
                if (std::isfinite(out.loc_logp[k])) acc += w_loc[k] * out.loc_logp[k];
            }
            acc += w_val[s] * out.value[s];
        }
        return acc;
    };

    ForwardCache cache;
    PolicyValueOutput out = forward(net, obs.data(), batch, masks.data(), &cache);
    std::vector<double> d_drill = w_drill, d_loc = w_loc, d_val = w_val;
    for (size_t k = 0; k < d_loc.size(); ++k)
        if (!masks[k]) d_loc[k] = 0.0;
    std::vector<double> grads(net.data.size(), 0.0);
    backward(net, cache, out, masks.data(), d_drill.data(), d_loc.data(), d_val.data(), grads);

    Rng prng(15);
    int checked = 0;
    double max_rel = 0.0;
    // Sample parameters from every layer, plus uniform random ones.
    std::vector<size_t> picks;
    for (const LayerRef* l : net.layer_order()) {
        picks.push_back(l->w + prng.uniform_int(static_cast<int>(l->w_size)));
        picks.push_back(l->b + prng.uniform_int(static_cast<int>(l->b_size)));
    }
    while (picks.size() < 60) picks.push_back(prng.uniform_int(static_cast<int>(net.data.size())));

    const double h = 1e-5;
    for (size_t idx : picks) {
        NetworkParams p = net;
        p.data[idx] += h;
        const double lp = loss(p);
        p.data[idx] = net.data[idx] - h;
        const double lm = loss(p);
        const double fd = (lp - lm) / (2 * h);
        const double scale = std::max({std::abs(fd), std::abs(grads[idx]), 1e-6});
        max_rel = std::max(max_rel, std::abs(fd - grads[idx]) / scale);
        ++checked;
    }
    CHECK(checked >= 60);
    CHECK(max_rel <= 1e-4);
}

TEST_CASE("zero upstream gradient yields zero parameter gradient") {
    ArchConfig a = tiny_arch();
    Rng rng(16);
    NetworkParams net = init_params(a, rng);
    std::vector<double> obs = random_obs(a, 1, rng);
    std::vector<uint8_t> mask = full_mask(a, 1);
    ForwardCache cache;
    PolicyValueOutput out = forward(net, obs.data(), 1, mask.data(), &cache);
    std::vector<double> zero2(2, 0.0), zero_hw(a.hw(), 0.0), zero1(1, 0.0);
    std::vector<double> grads(net.data.size(), 0.0);
    backward(net, cache, out, mask.data(), zero2.data(), zero_hw.data(), zero1.data(), grads);
    for (double g : grads) CHECK(g == 0.0);
}

TEST_CASE("multithreaded backward matches single-threaded") {
    ArchConfig a = tiny_arch();
    Rng rng(17);
    NetworkParams net = init_params(a, rng);
    const int batch = 7;
    std::vector<double> obs = random_obs(a, batch, rng);
    std::vector<uint8_t> masks(static_cast<size_t>(batch) * a.hw(), 1);
    std::vector<double> dd(batch * 2, 0.3), dl(static_cast<size_t>(batch) * a.hw(), -0.1),
        dv(batch, 0.7);

    auto run = [&](int threads) {
        ForwardCache cache;
        PolicyValueOutput out = forward(net, obs.data(), batch, masks.data(), &cache, threads);
        std::vector<double> grads(net.data.size(), 0.0);
        backward(net, cache, out, masks.data(), dd.data(), dl.data(), dv.data(), grads, threads);
        return grads;
    };
    // Per-sample reduction order differs across thread counts, so equality
    // holds to rounding, not bitwise.
    const std::vector<double> g1 = run(1), g4 = run(4);
    REQUIRE(g1.size() == g4.size());
    for (size_t k = 0; k < g1.size(); ++k)
        CHECK(g1[k] == doctest::Approx(g4[k]).epsilon(1e-12));
}

TEST_CASE("checkpoint round-trips bit-exactly with user fields") {
    ArchConfig a = tiny_arch();
    Rng rng(18);
    NetworkParams net = init_params(a, rng);
    const std::string path = "/tmp/fdev_test_checkpoint.bin";
    save_checkpoint(path, net, {{"iter", "12"}, {"note", "x"}});
    std::vector<std::pair<std::string, std::string>> extra;
    NetworkParams back = load_checkpoint(path, &extra);
    CHECK(back.data == net.data);
    CHECK(back.arch.trunk_channels == a.trunk_channels);
    REQUIRE(extra.size() == 2);
    CHECK(extra[0].first == "iter");
    CHECK(extra[0].second == "12");
    std::remove(path.c_str());
}
