#include "nptrack/plant.hpp"

#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

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

PlantConfig quiet_plant(double dt) {
    PlantConfig pc;
    pc.noise_std.setZero();
    pc.dt = dt;
    return pc;
}

TEST(PlantStep, FlatTerrainMatchesNominalExactly) {
    const TerrainGrid grid =
        TerrainGrid::from_catalog(make_surface("flat", {}), {-50, -50}, {50, 50}, {1, 1});
    const VehicleParams p = test_params();
    const PlantConfig pc = quiet_plant(0.02);  // one sub-step: same integrator
    VehicleState x;
    x.v = 3.0;
    x.delta = 0.08;
    x.psi = 0.4;
    const ControlInput u{0.7, -0.3};
    const VehicleState plant = plant_step(x, u, grid, pc, p, 0.02);
    const VehicleState model = ode_step(x, u, p, 0.02);
    EXPECT_EQ(plant.to_vector(), model.to_vector());
}

// Oracle: closed-form gravity projection on a 10 degree incline.
TEST(PlantStep, UphillGravityDeceleration) {
    const TerrainGrid grid = TerrainGrid::from_catalog(
        make_surface("tilted_plane", {{"slope_deg", 10.0}}), {-50, -50}, {50, 50}, {0.5, 0.5});
    const VehicleParams p = test_params();
    PlantConfig pc = quiet_plant(1e-6);
    pc.k_a = 1.0;
    pc.k_beta = 0.0;
    pc.k_r = 0.0;
    VehicleState x;
    x.v = 3.0;  // heading +x, straight uphill
    const double dt = 1e-6;
    const VehicleState next = plant_step(x, {0.0, 0.0}, grid, pc, p, dt);
    const double vdot = (next.v - x.v) / dt;
    EXPECT_NEAR(vdot, -9.81 * std::sin(10.0 * M_PI / 180.0), 1e-6);
    EXPECT_NEAR(vdot, -1.7036, 1e-3);

    // downhill accelerates
    VehicleState down = x;
    down.psi = M_PI;
    const VehicleState dnext = plant_step(down, {0.0, 0.0}, grid, pc, p, dt);
    EXPECT_NEAR((dnext.v - down.v) / dt, +9.81 * std::sin(10.0 * M_PI / 180.0), 1e-6);
}

TEST(PlantStep, PureBankDriftsSideSlipOnly) {
    // plane tilted along +y; heading +x drives across the slope
    const TerrainGrid grid = TerrainGrid::from_catalog(
        make_surface("tilted_plane", {{"slope_deg", 10.0}, {"direction_deg", 90.0}}), {-50, -50},
        {50, 50}, {0.5, 0.5});
    const VehicleParams p = test_params();
    PlantConfig pc = quiet_plant(1e-6);
    pc.k_a = 1.0;
    pc.k_beta = 1.0;
    pc.k_r = 0.0;
    VehicleState x;
    x.v = 3.0;
    const double dt = 1e-6;
    const VehicleState next = plant_step(x, {0.0, 0.0}, grid, pc, p, dt);
    EXPECT_NEAR((next.v - x.v) / dt, 0.0, 1e-9);  // gamma_h = 0 across the slope
    EXPECT_GT(std::abs((next.beta - x.beta) / dt), 0.1);  // bank-induced drift
}

TEST(PlantStep, RotationEquivariantCouplings) {
    // same scene rotated 90 degrees must give the same longitudinal effect
    const VehicleParams p = test_params();
    PlantConfig pc = quiet_plant(1e-6);
    const TerrainGrid gx = TerrainGrid::from_catalog(
        make_surface("tilted_plane", {{"slope_deg", 10.0}}), {-50, -50}, {50, 50}, {0.5, 0.5});
    const TerrainGrid gy = TerrainGrid::from_catalog(
        make_surface("tilted_plane", {{"slope_deg", 10.0}, {"direction_deg", 90.0}}), {-50, -50},
        {50, 50}, {0.5, 0.5});
    VehicleState hx;
    hx.v = 3.0;  // uphill along +x
    VehicleState hy;
    hy.v = 3.0;
    hy.psi = M_PI / 2.0;  // uphill along +y
    const double dt = 1e-6;
    const double vdot_x = (plant_step(hx, {0, 0}, gx, pc, p, dt).v - hx.v) / dt;
    const double vdot_y = (plant_step(hy, {0, 0}, gy, pc, p, dt).v - hy.v) / dt;
    EXPECT_NEAR(vdot_x, vdot_y, 1e-9);
}

TEST(PlantStep, OutOfBoundsThrows) {
    const TerrainGrid grid =
        TerrainGrid::from_catalog(make_surface("flat", {}), {-1, -1}, {1, 1}, {0.5, 0.5});
    const VehicleParams p = test_params();
    VehicleState x;
    x.px = 0.9;
    x.v = 10.0;
    EXPECT_THROW(plant_step(x, {0, 0}, grid, quiet_plant(0.002), p, 0.02), OutOfBounds);
}

TEST(PlantConfigValidation, SubstepMustDivide) {
    PlantConfig pc;
    pc.dt = 0.003;
    EXPECT_THROW(pc.validate(0.02), ConfigError);
    pc.dt = 0.002;
    EXPECT_NO_THROW(pc.validate(0.02));
}

ClosedLoopConfig quick_loop(const VehicleParams& p, std::uint64_t seed) {
    ClosedLoopConfig cfg;
    cfg.vehicle = p;
    cfg.mppi.horizon = 12;
    cfg.mppi.samples = 96;
    cfg.mppi.temperature = 2.0;
    cfg.mppi.a_min = p.a_min;
    cfg.mppi.a_max = p.a_max;
    cfg.mppi.v_delta_min = p.v_delta_min;
    cfg.mppi.v_delta_max = p.v_delta_max;
    cfg.mppi.seed = seed;
    cfg.plant.noise_std.setZero();
    cfg.plant.dt = 0.002;
    cfg.max_steps = 120;
    cfg.seed = seed;
    return cfg;
}

TEST(ClosedLoop, ZeroStepsGivesEmptyLog) {
    const auto gen = generate_track("oval", "flat", {}, {});
    ClosedLoopConfig cfg = quick_loop(test_params(), 0);
    cfg.max_steps = 0;
    const RunLog log = run_closed_loop(gen.reference, gen.terrain, ControllerMode::baseline, cfg);
    EXPECT_TRUE(log.records.empty());
    EXPECT_FALSE(log.lap_completed);
    EXPECT_FALSE(log.departed);
}

TEST(ClosedLoop, ModelPlantMatchGivesTinyResiduals) {
    const auto gen = generate_track("oval", "flat", {}, {});
    ClosedLoopConfig cfg = quick_loop(test_params(), 1);
    cfg.plant.k_a = 0.0;
    cfg.plant.k_beta = 0.0;
    cfg.plant.k_r = 0.0;
    cfg.plant.dt = cfg.mppi.dt;  // same discretization as the model
    const RunLog log = run_closed_loop(gen.reference, gen.terrain, ControllerMode::baseline, cfg);
    ASSERT_GT(log.records.size(), 50u);
    for (const auto& rec : log.records) {
        ASSERT_LT(rec.residual.cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(ClosedLoop, LogSelfConsistentResidualColumn) {
    const auto gen = generate_track("oval", "sinusoidal_hills", {{"amp", 0.8}}, {});
    const VehicleParams p = test_params();
    ClosedLoopConfig cfg = quick_loop(p, 3);
    cfg.plant.noise_std << 0.01, 0.002, 0.005;
    const RunLog log = run_closed_loop(gen.reference, gen.terrain, ControllerMode::baseline, cfg);
    ASSERT_GT(log.records.size(), 30u);
    for (std::size_t k = 0; k + 1 < log.records.size(); ++k) {
        const auto& rec = log.records[k];
        const auto& next = log.records[k + 1];
        const VehicleState nominal = ode_step(rec.state, rec.input, p, cfg.mppi.dt);
        ASSERT_NEAR(rec.residual[0], next.state.v - nominal.v, 1e-12);
        ASSERT_NEAR(rec.residual[1], next.state.beta - nominal.beta, 1e-12);
        ASSERT_NEAR(rec.residual[2], next.state.r - nominal.r, 1e-12);
    }
}

TEST(ClosedLoop, DifficultyMonotoneInCouplingGains) {
    const auto gen = generate_track("oval", "sinusoidal_hills", {{"amp", 1.2}}, {});
    const VehicleParams p = test_params();
    auto mean_cte = [&](double gain_scale, std::uint64_t seed) {
        ClosedLoopConfig cfg = quick_loop(p, seed);
        cfg.max_steps = 100;
        cfg.plant.k_a = 1.0 * gain_scale;
        cfg.plant.k_beta = 1.0 * gain_scale;
        cfg.corridor_halfwidth = 1e9;  // keep episodes running for the comparison
        const RunLog log =
            run_closed_loop(gen.reference, gen.terrain, ControllerMode::baseline, cfg);
        return summarize(log, ControllerMode::baseline, seed).mean_abs_cte;
    };
    int harder = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        if (mean_cte(4.0, seed) >= mean_cte(1.0, seed)) ++harder;
    }
    EXPECT_EQ(harder, 5);
}

TEST(ClosedLoop, RunLogCsvRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "nptrack_test_plant";
    std::filesystem::create_directories(dir);
    const auto gen = generate_track("oval", "flat", {}, {});
    ClosedLoopConfig cfg = quick_loop(test_params(), 5);
    cfg.max_steps = 25;
    const RunLog log = run_closed_loop(gen.reference, gen.terrain, ControllerMode::baseline, cfg);
    log.write_csv(dir / "run.csv");
    const RunLog loaded = RunLog::read_csv(dir / "run.csv");
    ASSERT_EQ(loaded.records.size(), log.records.size());
    EXPECT_EQ(loaded.lap_completed, log.lap_completed);
    EXPECT_EQ(loaded.departed, log.departed);
    for (std::size_t i = 0; i < log.records.size(); i += 5) {
        ASSERT_EQ(loaded.records[i].state.px, log.records[i].state.px);
        ASSERT_EQ(loaded.records[i].cte, log.records[i].cte);
        ASSERT_EQ(loaded.records[i].residual[1], log.records[i].residual[1]);
        ASSERT_EQ(loaded.records[i].solve_ms, log.records[i].solve_ms);
    }
}

TEST(ClosedLoop, GpRecursiveLearnsNothingWhenPlantIsNominal) {
    const auto gen = generate_track("oval", "flat", {}, {});
    const VehicleParams p = test_params();
    ClosedLoopConfig cfg = quick_loop(p, 7);
    cfg.plant.k_a = 0.0;
    cfg.plant.k_beta = 0.0;
    cfg.plant.k_r = 0.0;
    cfg.plant.noise_std << 0.01, 0.002, 0.005;
    cfg.max_steps = 150;

    KernelHyper h;
    h.sigma_f2 = 0.25;
    Eigen::MatrixXd inducing = Eigen::MatrixXd::Random(10, 9);
    ResidualModel model = ResidualModel::prior(inducing, {h, h, h}, 0.999);
    const RunLog log =
        run_closed_loop(gen.reference, gen.terrain, ControllerMode::gp_recursive, cfg, &model);
    ASSERT_GT(log.records.size(), 50u);
    // learned means stay within 3 sigma of zero
    for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 20; ++k) {
            GPInput z = GPInput::Random() * 0.5;
            const auto pred = model.head(i).predict(z);
            ASSERT_LT(std::abs(pred.mean), 3.0 * std::sqrt(pred.variance) + 1e-9);
        }
    }
}

TEST(ClosedLoop, CollectGathersResidualPairs) {
    const auto gen = generate_track("oval", "sinusoidal_hills", {{"amp", 1.0}}, {});
    ClosedLoopConfig cfg = quick_loop(test_params(), 11);
    cfg.excitation_frac = 0.3;
    cfg.max_steps = 80;
    ResidualDataset ds;
    const RunLog log = run_closed_loop(gen.reference, gen.terrain, ControllerMode::baseline, cfg,
                                       nullptr, &ds);
    // one pair per completed control step minus rejected outliers
    const std::size_t completed = log.records.size() - (log.departed ? 1 : 0);
    EXPECT_EQ(static_cast<std::size_t>(ds.size()) + log.outliers_rejected, completed);
    EXPECT_GT(ds.size(), 40);
}

} // namespace
} // namespace nptrack
