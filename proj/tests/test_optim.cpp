#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "macnet/optim.hpp"

#include "helpers.hpp"

using namespace macnet;

namespace {

ParamRegistry two_param_registry(std::mt19937_64& rng) {
    ParamRegistry reg;
    reg.add("a", testutil::rand_tensor({2, 3}, rng));
    reg.add("b", testutil::rand_tensor({4}, rng));
    return reg;
}

double global_norm(const GradTable& g) {
    double sq = 0.0;
    for (const auto& v : g)
        for (double x : v) sq += x * x;
    return std::sqrt(sq);
}

}  // namespace

TEST_CASE("gradient clipping: rescale only above the threshold") {
    std::mt19937_64 rng(1);
    ParamRegistry reg = two_param_registry(rng);
    GradTable g = zero_grads(reg);
    REQUIRE(g.size() == 2);
    CHECK(g[0].size() == 6);
    CHECK(g[1].size() == 4);

    // below the threshold: untouched, returns the true norm
    g[0] = {0.3, 0.4, 0, 0, 0, 0};
    g[1] = {0, 0, 0, 0};
    GradTable before = g;
    CHECK(clip_gradients(g, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g == before);

    // the classic 3-4-5 example lands exactly on the unit sphere
    g[0] = {3.0, 0, 0, 0, 0, 0};
    g[1] = {4.0, 0, 0, 0};
    CHECK(clip_gradients(g, 1.0) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(g[0][0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(g[1][0] == doctest::Approx(0.8).epsilon(1e-12));

    // property: post-clip norm <= max_norm, direction preserved
    for (int trial = 0; trial < 50; ++trial) {
        std::mt19937_64 trng(100 + trial);
        std::uniform_real_distribution<double> u(-4.0, 4.0);
        GradTable h = zero_grads(reg);
        for (auto& v : h)
            for (double& x : v) x = u(trng);
        GradTable raw = h;
        const double pre = clip_gradients(h, 0.7);
        CHECK(pre == doctest::Approx(global_norm(raw)).epsilon(1e-12));
        CHECK(global_norm(h) <= 0.7 + 1e-12);
        // cosine between raw and clipped stays 1
        double dot = 0.0;
        for (size_t i = 0; i < h.size(); ++i)
            for (size_t j = 0; j < h[i].size(); ++j) dot += h[i][j] * raw[i][j];
        CHECK(dot / (global_norm(h) * global_norm(raw)) == doctest::Approx(1.0).epsilon(1e-12));
    }

    GradTable nan_g = zero_grads(reg);
    nan_g[0][0] = std::numeric_limits<double>::quiet_NaN();
    GradTable copy = nan_g;
    const double norm = clip_gradients(nan_g, 1.0);
    CHECK(!std::isfinite(norm));
    CHECK(std::isnan(nan_g[0][0]));
    CHECK(nan_g[1] == copy[1]);  // untouched

    CHECK_THROWS_AS(clip_gradients(copy, 0.0), ContractError);
    CHECK_THROWS_AS(clip_gradients(copy, -1.0), ContractError);
}

TEST_CASE("adam: first step size, zero-gradient fixed point, scalar oracle") {
    std::mt19937_64 rng(2);
    ParamRegistry reg = two_param_registry(rng);
    AdamConfig cfg;
    cfg.lr = 1e-3;

    // first step moves every coordinate by ~lr regardless of gradient scale
    {
        AdamState st = AdamState::create(reg, cfg);
        GradTable g = zero_grads(reg);
        for (auto& v : g)
            for (double& x : v) x = 7.3;  // arbitrary uniform gradient
        std::vector<double> before(reg.param(0).data().begin(), reg.param(0).data().end());
        adam_step(st, reg, g);
        auto after = reg.param(0).data();
        for (size_t i = 0; i < after.size(); ++i) {
            const double step = std::abs(after[i] - before[i]);
            CHECK(step == doctest::Approx(cfg.lr).epsilon(1e-4));  // |Δθ| ≈ lr for t=1
            CHECK(after[i] < before[i]);                           // opposite the gradient sign
        }
        CHECK(st.t == 1);
    }

    // zero gradients leave parameters exactly unchanged
    {
        ParamRegistry reg2 = two_param_registry(rng);
        AdamState st = AdamState::create(reg2, cfg);
        std::vector<double> before(reg2.param(0).data().begin(), reg2.param(0).data().end());
        adam_step(st, reg2, zero_grads(reg2));
        for (size_t i = 0; i < before.size(); ++i) CHECK(reg2.param(0).data()[i] == before[i]);
    }

    // 100-step scalar oracle: replicate the recurrence in plain doubles
    {
        ParamRegistry reg3;
        reg3.add("x", Tensor::vec({0.5}));
        AdamState st = AdamState::create(reg3, cfg);
        double theta = 0.5, m = 0.0, v = 0.0;
        std::mt19937_64 grng(17);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (int t = 1; t <= 100; ++t) {
            const double grad = u(grng);
            GradTable g = {{grad}};
            adam_step(st, reg3, g);

            m = cfg.beta1 * m + (1 - cfg.beta1) * grad;
            v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad;
            const double mhat = m / (1 - std::pow(cfg.beta1, t));
            const double vhat = v / (1 - std::pow(cfg.beta2, t));
            theta -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            CHECK(std::abs(reg3.param(0).data()[0] - theta) < 1e-12);
        }
    }

    // non-finite gradient aborts with the parameter named
    {
        ParamRegistry reg4 = two_param_registry(rng);
        AdamState st = AdamState::create(reg4, cfg);
        GradTable g = zero_grads(reg4);
        g[1][2] = std::numeric_limits<double>::infinity();
        try {
            adam_step(st, reg4, g);
            FAIL("expected TrainingError");
        } catch (const TrainingError& e) {
            CHECK(std::string(e.what()).find("b") != std::string::npos);
        }
    }
}

TEST_CASE("ema: fixed point, single update, geometric convergence") {
    ParamRegistry reg;
    reg.add("w", Tensor::vec({1.0, -2.0}));

    // shadow starts as a copy, so updating with unchanged weights is a no-op
    EmaState ema = EmaState::create(reg, 0.999);
    REQUIRE(ema.shadow.size() == 1);
    CHECK(ema.shadow[0][0] == 1.0);
    ema.update(reg);
    CHECK(ema.shadow[0][0] == 1.0);
    CHECK(ema.shadow[0][1] == -2.0);

    // one update after a unit jump moves the shadow by (1-decay)
    reg.param(0).mutable_data()[0] = 2.0;
    ema.update(reg);
    CHECK(ema.shadow[0][0] == doctest::Approx(1.0 + 0.001).epsilon(1e-12));

    // geometric convergence: shadow gap shrinks by decay each update
    EmaState fast = EmaState::create(reg, 0.5);
    reg.param(0).mutable_data()[1] = 0.0;  // shadow holds -2, param now 0
    double expected_gap = -2.0;
    for (int k = 1; k <= 20; ++k) {
        fast.update(reg);
        expected_gap *= 0.5;
        CHECK(fast.shadow[0][1] == doctest::Approx(expected_gap).epsilon(1e-12));
    }

    CHECK_THROWS_AS(EmaState::create(reg, 0.0), ContractError);
    CHECK_THROWS_AS(EmaState::create(reg, 1.0), ContractError);
}

TEST_CASE("ema scope: installs shadows, restores raw weights") {
    ParamRegistry reg;
    reg.add("w", Tensor::vec({3.0}));
    EmaState ema = EmaState::create(reg, 0.9);
    ema.shadow[0][0] = 7.0;  // pretend the average has drifted

    {
        EmaScope scope(reg, ema);
        CHECK(reg.param(0).data()[0] == 7.0);
    }
    CHECK(reg.param(0).data()[0] == 3.0);
}

TEST_CASE("early stopping: strict improvement within the patience budget") {
    {
        EarlyStopper s(2);
        CHECK(!s.observe(0.5));
        CHECK(s.improved());
        CHECK(!s.observe(0.6));
        CHECK(!s.observe(0.7));
        CHECK(s.improved());
        CHECK(s.best == 0.7);
        CHECK(s.best_index == 2);
    }
    {
        EarlyStopper s(2);
        CHECK(!s.observe(0.7));
        CHECK(!s.observe(0.6));  // one stale observation
        CHECK(s.observe(0.6));   // second stale observation: stop (ties don't improve)
        CHECK(!s.improved());
        CHECK(s.best_index == 0);
        CHECK(s.best == 0.7);
    }
    {
        EarlyStopper s(1);
        bool stopped = false;
        for (int i = 0; i < 100 && !stopped; ++i) stopped = s.observe(i * 0.01);
        CHECK(!stopped);  // strictly increasing scores never trigger
    }
    {
        // negative scores still improve over the initial sentinel
        EarlyStopper s(3);
        CHECK(!s.observe(-5.0));
        CHECK(s.improved());
    }
    CHECK_THROWS_AS(EarlyStopper(0), ContractError);
}
