#pragma once

#include <Eigen/Core>

#include "nptrack/errors.hpp"

namespace nptrack {

struct RollPitch;
class TerrainGrid;
class ResidualModel;

// State x = [p_x, p_y, psi, delta, v, beta, r]. Heading psi is kept
// unwrapped in the state; it is only reduced to (-pi, pi] when it enters
// the GP input vector.
struct VehicleState {
    double px = 0.0;
    double py = 0.0;
    double psi = 0.0;
    double delta = 0.0;
    double v = 0.0;
    double beta = 0.0;
    double r = 0.0;

    Eigen::Matrix<double, 7, 1> to_vector() const {
        Eigen::Matrix<double, 7, 1> x;
        x << px, py, psi, delta, v, beta, r;
        return x;
    }
    static VehicleState from_vector(const Eigen::Matrix<double, 7, 1>& x) {
        return {x[0], x[1], x[2], x[3], x[4], x[5], x[6]};
    }
    bool finite() const;
};

struct ControlInput {
    double a = 0.0;        // longitudinal acceleration [m/s^2]
    double v_delta = 0.0;  // steering rate [rad/s]
};

// Single-track model parameters with per-load-normalized cornering
// stiffnesses (tire force = mu * C * F_z * slip).
struct VehicleParams {
    double mass = 0.0;       // kg
    double inertia_z = 0.0;  // kg m^2
    double lf = 0.0;         // CoG to front axle [m]
    double lr = 0.0;         // CoG to rear axle [m]
    double h_cg = 0.0;       // CoG height [m]
    double c_f = 0.0;        // front cornering stiffness [1/rad]
    double c_r = 0.0;        // rear cornering stiffness [1/rad]
    double mu = 0.0;         // friction coefficient

    double delta_min = 0.0, delta_max = 0.0;
    double v_min = 0.0, v_max = 0.0;
    double a_min = 0.0, a_max = 0.0;
    double v_delta_min = 0.0, v_delta_max = 0.0;

    double wheelbase() const { return lf + lr; }
};

// Throws ConfigError if any physical field is non-positive or bounds are inverted.
void validate(const VehicleParams& p);

// GP input xi = [psi, delta, v, beta, r, a, v_delta, roll, pitch].
using GPInput = Eigen::Matrix<double, 9, 1>;

// Speed range over which the tire-model derivative blends into the
// kinematic single-track derivative (avoids the 1/v singularity).
inline constexpr double kBlendSpeedLow = 0.1;
inline constexpr double kBlendSpeedHigh = 0.5;

// Time derivative of the single-track state, [d/dt of each state entry].
// Below kBlendSpeedHigh the slip/yaw derivatives fade into their kinematic
// counterparts, reaching pure kinematics at kBlendSpeedLow.
Eigen::Matrix<double, 7, 1> st_derivative(const VehicleState& x, const ControlInput& u,
                                          const VehicleParams& p);

// One classical RK4 step with u held constant; delta and v are clamped to
// the parameter bounds afterwards.
VehicleState ode_step(const VehicleState& x, const ControlInput& u, const VehicleParams& p,
                      double dt);

GPInput assemble_gp_input(const VehicleState& x, const ControlInput& u, const RollPitch& rp);

// Nominal step plus the GP mean residual on (v, beta, r); position, heading
// and steering pass through the nominal integrator untouched.
VehicleState composed_step(const VehicleState& x, const ControlInput& u, const TerrainGrid& grid,
                           const ResidualModel& gp, const VehicleParams& p, double dt);

} // namespace nptrack
