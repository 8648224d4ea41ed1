#include "nptrack/mppi.hpp"

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "nptrack/plant.hpp"
#include "nptrack/rng.hpp"

namespace nptrack {
namespace {

VehicleParams test_params() {
    VehicleParams p;
    p.mass = 3.74;
    p.inertia_z = 0.04712;
    p.lf = 0.15875;
    p.lr = 0.17145;
    p.h_cg = 0.074;
    p.c_f = 4.718;
    p.c_r = 5.4562;
    p.mu = 1.0489;
    p.delta_min = -0.4189;
    p.delta_max = 0.4189;
    p.v_min = 0.0;
    p.v_max = 12.0;
    p.a_min = -4.0;
    p.a_max = 4.0;
    p.v_delta_min = -3.2;
    p.v_delta_max = 3.2;
    return p;
}

MPPIConfig small_config() {
    MPPIConfig cfg;
    cfg.horizon = 5;
    cfg.samples = 64;
    cfg.a_min = -4.0;
    cfg.a_max = 4.0;
    cfg.v_delta_min = -3.2;
    cfg.v_delta_max = 3.2;
    return cfg;
}

TerrainGrid flat_grid(double half = 50.0) {
    return TerrainGrid::from_catalog(make_surface("flat", {}), {-half, -half}, {half, half},
                                     {1.0, 1.0});
}

std::vector<RefPoint> constant_ref(int count, const RefPoint& rp) {
    return std::vector<RefPoint>(count, rp);
}

TEST(SampleControls, DegenerateSigmaCollapsesToMean) {
    MPPIConfig cfg = small_config();
    cfg.sigma_a = 1e-12;
    cfg.sigma_v_delta = 1e-12;
    ControlSequence mean(cfg.horizon);
    for (int t = 0; t < cfg.horizon; ++t) mean[t] = {0.3 * t - 0.5, 0.1 * t};
    RolloutBatch batch;
    sample_controls(mean, cfg, 0, batch);
    for (int s = 0; s < cfg.samples; ++s) {
        const double* row = batch.control_row(s);
        for (int t = 0; t < cfg.horizon; ++t) {
            ASSERT_NEAR(row[2 * t], mean[t].a, 1e-9);
            ASSERT_NEAR(row[2 * t + 1], mean[t].v_delta, 1e-9);
        }
    }
}

// Oracle: truncated-normal moment formulas evaluated with erfc.
TEST(SampleControls, TruncatedMomentsAndSupport) {
    MPPIConfig cfg;
    cfg.horizon = 1;
    cfg.samples = 100000;
    cfg.sigma_a = 0.5;
    cfg.sigma_v_delta = 0.5;
    cfg.a_min = -1.0;
    cfg.a_max = 1.0;
    cfg.v_delta_min = -1.0;
    cfg.v_delta_max = 1.0;
    ControlSequence mean(1, {0.0, 0.0});
    RolloutBatch batch;
    sample_controls(mean, cfg, 3, batch);

    double sum = 0.0;
    for (int s = 0; s < cfg.samples; ++s) {
        const double x = batch.control_row(s)[0];
        ASSERT_GT(x, -1.0);
        ASSERT_LT(x, 1.0);
        sum += x;
    }
    const double empirical_mean = sum / cfg.samples;

    // moments of N(0, 0.5^2) truncated to [-1, 1]
    const double alpha = -2.0, beta = 2.0;
    auto phi = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
    const double z = normal_cdf(beta) - normal_cdf(alpha);
    const double trunc_var =
        0.25 * (1.0 + (alpha * phi(alpha) - beta * phi(beta)) / z -
                std::pow((phi(alpha) - phi(beta)) / z, 2));
    const double se = std::sqrt(trunc_var / cfg.samples);
    EXPECT_LT(std::abs(empirical_mean - 0.0), 3.0 * se);
}

TEST(SampleControls, MeanAtBoundPullsInward) {
    MPPIConfig cfg;
    cfg.horizon = 1;
    cfg.samples = 20000;
    cfg.sigma_a = 0.5;
    cfg.sigma_v_delta = 0.5;
    cfg.a_min = -1.0;
    cfg.a_max = 1.0;
    cfg.v_delta_min = -1.0;
    cfg.v_delta_max = 1.0;
    ControlSequence mean(1, {1.0, -1.0});  // at the bounds
    RolloutBatch batch;
    sample_controls(mean, cfg, 0, batch);
    double sum_a = 0.0, sum_vd = 0.0;
    for (int s = 0; s < cfg.samples; ++s) {
        ASSERT_LE(batch.control_row(s)[0], 1.0);
        sum_a += batch.control_row(s)[0];
        sum_vd += batch.control_row(s)[1];
    }
    EXPECT_LT(sum_a / cfg.samples, 0.95);
    EXPECT_GT(sum_vd / cfg.samples, -0.95);
}

TEST(ImportanceWeights, EqualCostsGiveUniform) {
    const std::vector<double> costs(8, 3.5);
    const auto w = importance_weights(costs, 0.7);
    for (double ws : w) EXPECT_EQ(ws, 1.0 / 8.0);
}

TEST(ImportanceWeights, SharpSoftminLimit) {
    const auto w = importance_weights({0.0, 10.0}, 0.01);
    EXPECT_EQ(w[1], 0.0);  // exp(-1000) underflows
    EXPECT_EQ(w[0], 1.0);
}

TEST(ImportanceWeights, OffsetInvarianceBitExact) {
    const std::vector<double> costs = {3.0, 7.0, 11.0, 4.0, 21.0};
    std::vector<double> shifted = costs;
    for (double& c : shifted) c += 1000.0;  // exact in binary
    const auto w1 = importance_weights(costs, 0.9);
    const auto w2 = importance_weights(shifted, 0.9);
    for (std::size_t i = 0; i < w1.size(); ++i) ASSERT_EQ(w1[i], w2[i]);
}

TEST(ImportanceWeights, NormalizationAndRange) {
    std::vector<double> costs;
    for (int i = 0; i < 500; ++i) costs.push_back(10.0 * std::sin(i * 1.7) + 12.0);
    costs[10] = std::numeric_limits<double>::infinity();  // one failed rollout
    const auto w = importance_weights(costs, 2.0);
    double sum = 0.0;
    for (double ws : w) {
        ASSERT_GE(ws, 0.0);
        ASSERT_LE(ws, 1.0);
        sum += ws;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(w[10], 0.0);
}

TEST(ImportanceWeights, AllInfiniteThrows) {
    const double inf = std::numeric_limits<double>::infinity();
    EXPECT_THROW(importance_weights({inf, inf, inf}, 0.5), AllRolloutsFailed);
}

TEST(OptimalSequence, IdentityMidpointOneHot) {
    MPPIConfig cfg = small_config();
    cfg.samples = 1;
    cfg.horizon = 2;
    RolloutBatch batch;
    batch.resize(1, 2);
    batch.control_row(0)[0] = 0.7;
    batch.control_row(0)[1] = -0.2;
    batch.control_row(0)[2] = 1.1;
    batch.control_row(0)[3] = 0.05;
    batch.weights = {1.0};
    const ControlSequence single = optimal_sequence(batch, cfg);
    EXPECT_EQ(single[0].a, 0.7);
    EXPECT_EQ(single[1].a, 1.1);
    EXPECT_EQ(single[1].v_delta, 0.05);

    RolloutBatch two;
    two.resize(2, 1);
    two.control_row(0)[0] = 1.0;
    two.control_row(0)[1] = 0.5;
    two.control_row(1)[0] = 2.0;
    two.control_row(1)[1] = -0.5;
    two.weights = {0.5, 0.5};
    const ControlSequence mid = optimal_sequence(two, cfg);
    EXPECT_EQ(mid[0].a, 1.5);
    EXPECT_EQ(mid[0].v_delta, 0.0);

    two.weights = {0.0, 1.0};
    const ControlSequence hot = optimal_sequence(two, cfg);
    EXPECT_EQ(hot[0].a, 2.0);
    EXPECT_EQ(hot[0].v_delta, -0.5);
}

TEST(ShiftWarmStart, Examples) {
    const ControlSequence seq = {{1, 10}, {2, 20}, {3, 30}};
    const ControlSequence shifted = shift_warm_start(seq);
    EXPECT_EQ(shifted[0].a, 2.0);
    EXPECT_EQ(shifted[1].a, 3.0);
    EXPECT_EQ(shifted[2].a, 3.0);
    EXPECT_EQ(shifted[2].v_delta, 30.0);

    const ControlSequence constant = {{5, 1}, {5, 1}, {5, 1}};
    const ControlSequence same = shift_warm_start(constant);
    for (const auto& u : same) {
        EXPECT_EQ(u.a, 5.0);
        EXPECT_EQ(u.v_delta, 1.0);
    }

    const ControlSequence one = shift_warm_start({{7, 8}});
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].a, 7.0);
}

TEST(Rollout, ZeroControlsFlatFromRestStaysPut) {
    const TerrainGrid grid = flat_grid();
    const VehicleParams p = test_params();
    std::vector<double> controls(10 * 2, 0.0);
    std::vector<double> states(11 * 7);
    VehicleState x0;
    const bool ok = rollout(x0, controls.data(), 10, grid, nullptr, p, 0.02, states.data());
    EXPECT_TRUE(ok);
    for (int t = 0; t <= 10; ++t) {
        for (int d = 0; d < 7; ++d) ASSERT_EQ(states[t * 7 + d], 0.0);
    }
}

TEST(Rollout, BaselineEqualsZeroPriorGPOnFlat) {
    const TerrainGrid grid = flat_grid();
    const VehicleParams p = test_params();
    const ResidualModel prior = ResidualModel::prior(
        Eigen::MatrixXd::Zero(2, 9), {KernelHyper{}, KernelHyper{}, KernelHyper{}}, 1.0);
    std::vector<double> controls;
    for (int t = 0; t < 8; ++t) {
        controls.push_back(0.5 - 0.05 * t);
        controls.push_back(0.2 * std::sin(t));
    }
    VehicleState x0;
    x0.v = 2.0;
    std::vector<double> a(9 * 7), b(9 * 7);
    EXPECT_TRUE(rollout(x0, controls.data(), 8, grid, nullptr, p, 0.02, a.data()));
    EXPECT_TRUE(rollout(x0, controls.data(), 8, grid, &prior, p, 0.02, b.data()));
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(Rollout, OneStepEqualsComposedStep) {
    const TerrainGrid grid = TerrainGrid::from_catalog(
        make_surface("tilted_plane", {{"slope_deg", 6.0}}), {-50, -50}, {50, 50}, {1, 1});
    const VehicleParams p = test_params();
    Eigen::MatrixXd z = Eigen::MatrixXd::Random(4, 9);
    Eigen::VectorXd y = Eigen::VectorXd::Random(4) * 0.05;
    KernelHyper h;
    const ResidualModel model(SparseGPHead::batch_fit(z, y, z, h, 1.0),
                              SparseGPHead::batch_fit(z, y, z, h, 1.0),
                              SparseGPHead::batch_fit(z, y, z, h, 1.0));
    VehicleState x0;
    x0.px = 1.0;
    x0.v = 3.0;
    const double controls[2] = {0.8, -0.3};
    std::vector<double> states(2 * 7);
    EXPECT_TRUE(rollout(x0, controls, 1, grid, &model, p, 0.02, states.data()));
    const VehicleState direct = composed_step(x0, {0.8, -0.3}, grid, model, p, 0.02);
    EXPECT_EQ(states[7 + 0], direct.px);
    EXPECT_EQ(states[7 + 4], direct.v);
    EXPECT_EQ(states[7 + 6], direct.r);
}

TEST(Rollout, OutOfBoundsFreezesAndFlags) {
    const TerrainGrid grid = flat_grid(2.0);  // tiny map
    const VehicleParams p = test_params();
    VehicleState x0;
    x0.px = 1.5;
    x0.v = 5.0;  // exits in a few steps
    std::vector<double> controls(20 * 2, 0.0);
    std::vector<double> states(21 * 7);
    const bool ok = rollout(x0, controls.data(), 20, grid, nullptr, p, 0.02, states.data());
    EXPECT_FALSE(ok);
    // frozen tail: all rows equal after the exit row
    const int last = 20;
    bool froze = false;
    for (int t = 1; t <= last; ++t) {
        if (states[t * 7] == states[(t - 1) * 7] && states[t * 7] > 1.5) froze = true;
    }
    EXPECT_TRUE(froze);
}

TEST(TrajectoryCost, HandComputedExamples) {
    MPPIConfig cfg;
    cfg.horizon = 1;
    cfg.q_px = 1.0;
    cfg.q_py = 1.0;
    cfg.q_v = 0.0;
    cfg.q_psi = 0.0;
    cfg.r_a = 0.0;
    cfg.r_v_delta = 0.0;
    cfg.rd_a = 0.0;
    cfg.rd_v_delta = 0.0;
    cfg.qh_scale = 0.0;
    // state offset (3, 4) at t = 0, zero at the terminal step
    std::vector<double> states(2 * 7, 0.0);
    states[0] = 3.0;
    states[1] = 4.0;
    std::vector<double> controls(2, 0.0);
    const auto ref = constant_ref(2, RefPoint{});
    EXPECT_EQ(trajectory_cost(states.data(), controls.data(), 1, ref, cfg, false), 25.0);

    // states on the reference, zero inputs -> zero cost
    MPPIConfig cfg2;
    cfg2.horizon = 3;
    std::vector<double> zs(4 * 7, 0.0);
    std::vector<double> zu(3 * 2, 0.0);
    EXPECT_EQ(trajectory_cost(zs.data(), zu.data(), 3, constant_ref(4, RefPoint{}), cfg2, false),
              0.0);

    // constant input (1, 0), R = diag(0.1, 0): J = 20 * 0.1, no R_d term
    MPPIConfig cfg3;
    cfg3.horizon = 20;
    cfg3.q_px = cfg3.q_py = cfg3.q_v = cfg3.q_psi = 0.0;
    cfg3.qh_scale = 0.0;
    cfg3.r_a = 0.1;
    cfg3.r_v_delta = 0.0;
    cfg3.rd_a = 5.0;
    cfg3.rd_v_delta = 7.0;
    std::vector<double> s3(21 * 7, 0.0);
    std::vector<double> u3(20 * 2, 0.0);
    for (int t = 0; t < 20; ++t) u3[2 * t] = 1.0;
    EXPECT_NEAR(trajectory_cost(s3.data(), u3.data(), 20, constant_ref(21, RefPoint{}), cfg3,
                                false),
                2.0, 1e-12);
}

TEST(TrajectoryCost, FailureAddsConfiguredCost) {
    MPPIConfig cfg;
    cfg.horizon = 1;
    std::vector<double> states(2 * 7, 0.0);
    std::vector<double> controls(2, 0.0);
    const auto ref = constant_ref(2, RefPoint{});
    const double ok = trajectory_cost(states.data(), controls.data(), 1, ref, cfg, false);
    const double failed = trajectory_cost(states.data(), controls.data(), 1, ref, cfg, true);
    EXPECT_EQ(failed - ok, cfg.fail_cost);
}

TEST(MppiStep, StationaryRegulatorStaysNearZero) {
    MPPIConfig cfg = small_config();
    cfg.horizon = 20;
    cfg.samples = 256;
    cfg.seed = 5;
    const TerrainGrid grid = flat_grid();
    const VehicleParams p = test_params();
    MPPISolver solver(cfg, p);
    VehicleState x;  // at rest on the reference
    const auto ref = constant_ref(cfg.horizon + 1, RefPoint{});
    const auto res = solver.step(x, ref, ControlSequence(cfg.horizon), grid, nullptr, 0);
    const double n_eff = res.diagnostics.ess;
    ASSERT_GT(n_eff, 1.0);
    // Monte-Carlo bound from the run's effective sample size
    EXPECT_LT(std::abs(res.input.a), 3.0 * cfg.sigma_a / std::sqrt(n_eff));
}

TEST(MppiStep, SeedDeterminismAcrossRunsAndWorkers) {
    MPPIConfig cfg = small_config();
    cfg.samples = 128;
    cfg.seed = 77;
    const TerrainGrid grid = flat_grid();
    const VehicleParams p = test_params();
    VehicleState x;
    x.v = 2.0;
    RefPoint rp;
    rp.px = 5.0;
    rp.v = 2.0;
    const auto ref = constant_ref(cfg.horizon + 1, rp);

    cfg.workers = 1;
    MPPISolver s1(cfg, p);
    cfg.workers = 2;
    MPPISolver s2(cfg, p);
    const ControlSequence warm(cfg.horizon, ControlInput{0.1, -0.05});
    const auto r1 = s1.step(x, ref, warm, grid, nullptr, 9);
    const auto r2 = s2.step(x, ref, warm, grid, nullptr, 9);
    const auto r3 = s1.step(x, ref, warm, grid, nullptr, 9);
    ASSERT_EQ(r1.optimal.size(), r2.optimal.size());
    for (std::size_t t = 0; t < r1.optimal.size(); ++t) {
        ASSERT_EQ(r1.optimal[t].a, r2.optimal[t].a);
        ASSERT_EQ(r1.optimal[t].v_delta, r2.optimal[t].v_delta);
        ASSERT_EQ(r1.optimal[t].a, r3.optimal[t].a);
    }
    EXPECT_EQ(r1.input.a, r2.input.a);
    EXPECT_EQ(r1.input.v_delta, r2.input.v_delta);
}

TEST(MppiStep, InfiniteTemperatureGivesUnweightedMean) {
    MPPIConfig cfg = small_config();
    cfg.temperature = 1e12;
    cfg.samples = 100;
    const TerrainGrid grid = flat_grid();
    const VehicleParams p = test_params();
    MPPISolver solver(cfg, p);
    VehicleState x;
    x.v = 1.0;
    const auto ref = constant_ref(cfg.horizon + 1, RefPoint{});
    const auto res = solver.step(x, ref, ControlSequence(cfg.horizon), grid, nullptr, 2);
    double mean_first = 0.0;
    for (int s = 0; s < cfg.samples; ++s) {
        mean_first += solver.last_batch().control_row(s)[0];
    }
    mean_first /= cfg.samples;
    EXPECT_NEAR(res.input.a, mean_first, 1e-9);
}

TEST(MppiStep, BaselineEqualsZeroPriorGpOnFlat) {
    MPPIConfig cfg = small_config();
    cfg.seed = 31;
    const TerrainGrid grid = flat_grid();
    const VehicleParams p = test_params();
    const ResidualModel prior = ResidualModel::prior(
        Eigen::MatrixXd::Zero(3, 9), {KernelHyper{}, KernelHyper{}, KernelHyper{}}, 1.0);
    VehicleState x;
    x.v = 1.5;
    RefPoint rp;
    rp.px = 3.0;
    rp.v = 1.5;
    const auto ref = constant_ref(cfg.horizon + 1, rp);
    MPPISolver sa(cfg, p), sb(cfg, p);
    const auto ra = sa.step(x, ref, ControlSequence(cfg.horizon), grid, nullptr, 4);
    const auto rb = sb.step(x, ref, ControlSequence(cfg.horizon), grid, &prior, 4);
    for (std::size_t t = 0; t < ra.optimal.size(); ++t) {
        ASSERT_EQ(ra.optimal[t].a, rb.optimal[t].a);
        ASSERT_EQ(ra.optimal[t].v_delta, rb.optimal[t].v_delta);
    }
}

TEST(MppiStep, AllRolloutsFailedBrakes) {
    MPPIConfig cfg = small_config();
    cfg.horizon = 20;
    const TerrainGrid grid = flat_grid(1.0);  // 2 x 2 m map
    const VehicleParams p = test_params();
    MPPISolver solver(cfg, p);
    VehicleState x;
    x.px = 0.9;
    x.v = 8.0;  // leaves the map on every sample
    const auto ref = constant_ref(cfg.horizon + 1, RefPoint{});
    const auto res = solver.step(x, ref, ControlSequence(cfg.horizon), grid, nullptr, 0);
    EXPECT_TRUE(res.diagnostics.all_failed);
    EXPECT_EQ(res.input.a, cfg.a_min);
    EXPECT_EQ(res.input.v_delta, 0.0);
    EXPECT_EQ(res.optimal.back().a, 0.0);
}

TEST(MppiStep, SampledAndReturnedControlsRespectBox) {
    MPPIConfig cfg = small_config();
    cfg.samples = 512;
    cfg.sigma_a = 3.0;  // wide sampling pushes against the box
    cfg.sigma_v_delta = 3.0;
    const TerrainGrid grid = flat_grid();
    const VehicleParams p = test_params();
    MPPISolver solver(cfg, p);
    VehicleState x;
    x.v = 2.0;
    const auto ref = constant_ref(cfg.horizon + 1, RefPoint{});
    const auto res =
        solver.step(x, ref, ControlSequence(cfg.horizon, {3.9, 3.1}), grid, nullptr, 1);
    for (int s = 0; s < cfg.samples; ++s) {
        const double* row = solver.last_batch().control_row(s);
        for (int t = 0; t < cfg.horizon; ++t) {
            ASSERT_GE(row[2 * t], cfg.a_min);
            ASSERT_LE(row[2 * t], cfg.a_max);
            ASSERT_GE(row[2 * t + 1], cfg.v_delta_min);
            ASSERT_LE(row[2 * t + 1], cfg.v_delta_max);
        }
    }
    for (const auto& u : res.optimal) {
        ASSERT_GE(u.a, cfg.a_min);
        ASSERT_LE(u.a, cfg.a_max);
    }
}

// Closed-loop sanity: more samples never hurt on the flat regulator task.
TEST(MppiStep, MonotoneImprovementWithSampleCount) {
    const TerrainGrid grid = flat_grid();
    const VehicleParams p = test_params();
    auto closed_loop_cost = [&](int samples, std::uint64_t seed) {
        MPPIConfig cfg;
        cfg.horizon = 20;
        cfg.samples = samples;
        cfg.seed = seed;
        cfg.a_min = -4.0;
        cfg.a_max = 4.0;
        cfg.v_delta_min = -3.2;
        cfg.v_delta_max = 3.2;
        MPPISolver solver(cfg, p);
        VehicleState x;
        x.py = 0.8;  // start offset; regulate to the origin ref at speed 1
        RefPoint rp;
        rp.v = 1.0;
        double j = 0.0;
        ControlSequence warm(cfg.horizon);
        std::vector<RefPoint> ref(cfg.horizon + 1);
        for (int t = 0; t <= cfg.horizon; ++t) {
            ref[t] = rp;
            ref[t].px = x.px + 1.0 * cfg.dt * t;
        }
        for (int step = 0; step < 30; ++step) {
            for (int t = 0; t <= cfg.horizon; ++t) ref[t].px = x.px + 1.0 * cfg.dt * t;
            const auto res = solver.step(x, ref, warm, grid, nullptr, step);
            warm = shift_warm_start(res.optimal);
            x = ode_step(x, res.input, p, cfg.dt);
            j += x.py * x.py + (x.v - 1.0) * (x.v - 1.0);
        }
        return j;
    };
    double mean_small = 0.0, mean_large = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        mean_small += closed_loop_cost(16, seed);
        mean_large += closed_loop_cost(1024, seed);
    }
    EXPECT_LE(mean_large, mean_small);
}

} // namespace
} // namespace nptrack
