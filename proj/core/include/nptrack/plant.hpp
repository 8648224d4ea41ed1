#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nptrack/mppi.hpp"
#include "nptrack/sparse_gp.hpp"
#include "nptrack/track.hpp"

namespace nptrack {

// Synthetic ground-truth plant: the nominal single-track model augmented
// with terrain couplings (gravity along the heading, bank-induced side
// slip, slope yaw scaling) plus process noise on (v, beta, r).
struct PlantConfig {
    double gravity = 9.81;
    double k_a = 1.0;     // longitudinal gravity coupling
    double k_beta = 1.0;  // lateral bank coupling
    double k_r = 0.3;     // slope yaw-rate scaling
    Eigen::Vector3d noise_std{0.02, 0.005, 0.01};  // (v, beta, r) per control step
    double dt = 0.002;    // plant sub-step; must divide the control dt

    void validate(double control_dt) const;
};

// Advance the plant by `dt` (sub-stepped at pcfg.dt), querying terrain
// roll/pitch at the current position each sub-step; `noise` is added to
// (v, beta, r) after integration. Throws OutOfBounds on leaving the map.
VehicleState plant_step(const VehicleState& x, const ControlInput& u, const TerrainGrid& grid,
                        const PlantConfig& pcfg, const VehicleParams& p, double dt,
                        const Eigen::Vector3d& noise = Eigen::Vector3d::Zero());

enum class ControllerMode { baseline, gp, gp_recursive };
std::string to_string(ControllerMode mode);
ControllerMode mode_from_string(const std::string& name);

struct RunRecord {
    int step = 0;
    double t = 0.0;
    VehicleState state;   // measured state at the start of the step
    ControlInput input;   // applied input
    RefPoint ref;         // reference point for this step
    double cte = 0.0;
    double heading_error = 0.0;
    Eigen::Vector3d gp_prediction{0.0, 0.0, 0.0};  // residual mean the controller used
    Eigen::Vector3d residual{0.0, 0.0, 0.0};       // measured-minus-nominal to the next step
    double mppi_min_cost = 0.0;
    double mppi_ess = 0.0;
    int mppi_failures = 0;
    double solve_ms = 0.0;  // wall clock; excluded from determinism
};

struct RunLog {
    std::vector<RunRecord> records;
    bool lap_completed = false;
    bool departed = false;
    double progress = 0.0;  // unwrapped arc length travelled
    std::uint64_t outliers_rejected = 0;

    void write_csv(const std::filesystem::path& path) const;
    static RunLog read_csv(const std::filesystem::path& path);
};

struct RunSummary {
    std::string mode;
    std::uint64_t seed = 0;
    int steps = 0;
    double mean_abs_cte = 0.0;
    double median_abs_cte = 0.0;
    double max_abs_cte = 0.0;
    bool lap_completed = false;
    bool departed = false;
    double median_solve_ms = 0.0;
    double frequency_hz = 0.0;  // 1000 / median_solve_ms
};
RunSummary summarize(const RunLog& log, ControllerMode mode, std::uint64_t seed);

struct ClosedLoopConfig {
    VehicleParams vehicle;
    MPPIConfig mppi;
    PlantConfig plant;
    OutlierGate gate;
    int max_steps = 2000;
    double corridor_halfwidth = 2.5;  // |cte| beyond this counts as departure
    double start_speed = 0.0;
    double excitation_frac = 0.0;     // input perturbation amplitude, fraction of half-range
    std::uint64_t seed = 0;           // plant noise / excitation streams
};

// Drive the plant with the selected controller until the step budget, lap
// completion or track departure. gp / gp_recursive require `model`;
// gp_recursive additionally feeds each accepted residual target back into
// it. When `collect` is given, accepted (xi, y) pairs are appended.
RunLog run_closed_loop(const ReferenceTrajectory& track, const TerrainGrid& terrain,
                       ControllerMode mode, const ClosedLoopConfig& cfg,
                       ResidualModel* model = nullptr, ResidualDataset* collect = nullptr);

} // namespace nptrack
