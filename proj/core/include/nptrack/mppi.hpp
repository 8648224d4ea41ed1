#pragma once

#include <cstdint>
#include <vector>

#include "nptrack/dynamics.hpp"
#include "nptrack/sparse_gp.hpp"
#include "nptrack/terrain.hpp"
#include "nptrack/track.hpp"

namespace nptrack {

struct MPPIConfig {
    int horizon = 20;            // H
    int samples = 1024;          // N
    double temperature = 0.01;   // tau
    double sigma_a = 0.5;        // sampling std dev per input channel
    double sigma_v_delta = 0.5;

    // Admissible input box U; sampled and returned controls stay inside.
    double a_min = -4.0, a_max = 4.0;
    double v_delta_min = -3.2, v_delta_max = 3.2;

    // State weights apply to (p_x, p_y, v, psi); the remaining states are
    // unreferenced by the tracking objective.
    double q_px = 20.0, q_py = 20.0, q_v = 2.0, q_psi = 5.0;
    double r_a = 0.1, r_v_delta = 0.1;     // input magnitude
    double rd_a = 1.0, rd_v_delta = 1.0;   // input variation
    double qh_scale = 5.0;                 // terminal weight = qh_scale * Q

    double dt = 0.02;
    std::uint64_t seed = 0;
    double fail_cost = 1e6;  // added to out-of-map rollouts
    int workers = 0;         // 0 = hardware concurrency

    void validate() const;
};

using ControlSequence = std::vector<ControlInput>;

// One step's sampled controls, their trajectories, costs and weights.
struct RolloutBatch {
    int num_samples = 0;
    int horizon = 0;
    std::vector<double> controls;      // N x H x 2
    std::vector<double> states;        // N x (H+1) x 7
    std::vector<double> costs;         // N, includes fail_cost for failures
    std::vector<double> weights;       // N, zero for failures, sums to 1
    std::vector<std::uint8_t> failed;  // N

    void resize(int n, int h);
    double* control_row(int s) { return controls.data() + static_cast<std::size_t>(s) * horizon * 2; }
    const double* control_row(int s) const {
        return controls.data() + static_cast<std::size_t>(s) * horizon * 2;
    }
    double* state_row(int s) {
        return states.data() + static_cast<std::size_t>(s) * (horizon + 1) * 7;
    }
    const double* state_row(int s) const {
        return states.data() + static_cast<std::size_t>(s) * (horizon + 1) * 7;
    }
};

// Truncated-normal sampling around mean_seq (clamped into the box), one
// exact inverse-CDF draw per entry, keyed by (seed, step_index, sample, t).
void sample_controls(const ControlSequence& mean_seq, const MPPIConfig& cfg,
                     std::uint64_t step_index, RolloutBatch& batch);

// Propagate one control sequence; gp == nullptr runs the nominal model.
// Terrain roll/pitch is interpolated at each predicted position. On leaving
// the map the remaining states freeze and false is returned.
bool rollout(const VehicleState& x0, const double* control_seq, int horizon,
             const TerrainGrid& grid, const ResidualModel* gp, const VehicleParams& params,
             double dt, double* states_out);

// Tracking objective: running state error + input magnitude, input-variation
// smoothness, terminal error; heading error is wrapped. `ref` needs H+1 points.
double trajectory_cost(const double* states, const double* control_seq, int horizon,
                       const std::vector<RefPoint>& ref, const MPPIConfig& cfg, bool failed);

// Softmin weights exp(-(J - min J)/tau), normalized. +inf costs get exactly
// zero weight; throws AllRolloutsFailed when no cost is finite.
std::vector<double> importance_weights(const std::vector<double>& costs, double temperature);

// Per-step weighted average of the sampled sequences, clamped to the box.
ControlSequence optimal_sequence(const RolloutBatch& batch, const MPPIConfig& cfg);

// Receding-horizon warm start: drop the first entry, duplicate the last.
ControlSequence shift_warm_start(ControlSequence optimal);

struct MPPIDiagnostics {
    double min_cost = 0.0;
    double mean_cost = 0.0;
    double ess = 0.0;       // effective sample size 1 / sum(w^2)
    double solve_ms = 0.0;  // wall time (excluded from determinism)
    int failures = 0;
    bool all_failed = false;
};

class MPPISolver {
public:
    MPPISolver(MPPIConfig cfg, VehicleParams params);

    struct StepResult {
        ControlInput input;       // u*_{k|k}
        ControlSequence optimal;  // full H-step sequence
        MPPIDiagnostics diagnostics;
    };

    // One MPPI solve: sample around prev_optimal, roll out, weight, average.
    // If every rollout leaves the map, returns a braking command (a_min, 0)
    // with prev_optimal shifted and zero appended.
    StepResult step(const VehicleState& x, const std::vector<RefPoint>& ref,
                    const ControlSequence& prev_optimal, const TerrainGrid& grid,
                    const ResidualModel* gp, std::uint64_t step_index);

    const MPPIConfig& config() const { return cfg_; }
    const RolloutBatch& last_batch() const { return batch_; }

private:
    MPPIConfig cfg_;
    VehicleParams params_;
    RolloutBatch batch_;
};

} // namespace nptrack
