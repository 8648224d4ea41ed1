#include "nptrack/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "nptrack/sparse_gp.hpp"
#include "nptrack/terrain.hpp"
#include "nptrack/util.hpp"

namespace nptrack {

namespace {
constexpr double kGravity = 9.81;
}

bool VehicleState::finite() const {
    return std::isfinite(px) && std::isfinite(py) && std::isfinite(psi) && std::isfinite(delta) &&
           std::isfinite(v) && std::isfinite(beta) && std::isfinite(r);
}

void validate(const VehicleParams& p) {
    auto positive = [](double x) { return std::isfinite(x) && x > 0.0; };
    if (!positive(p.mass) || !positive(p.inertia_z) || !positive(p.lf) || !positive(p.lr) ||
        !positive(p.h_cg) || !positive(p.c_f) || !positive(p.c_r) || !positive(p.mu)) {
        throw ConfigError("vehicle params: all physical fields must be finite and positive");
    }
    if (!(p.delta_min < p.delta_max) || !(p.v_min < p.v_max) || !(p.a_min < p.a_max) ||
        !(p.v_delta_min < p.v_delta_max)) {
        throw ConfigError("vehicle params: bounds must satisfy min < max");
    }
}

Eigen::Matrix<double, 7, 1> st_derivative(const VehicleState& x, const ControlInput& u,
                                          const VehicleParams& p) {
    if (!x.finite() || !std::isfinite(u.a) || !std::isfinite(u.v_delta)) {
        throw NonFiniteState("st_derivative: non-finite state or input");
    }

    const double L = p.wheelbase();
    Eigen::Matrix<double, 7, 1> dx;
    dx[0] = x.v * std::cos(x.psi + x.beta);
    dx[1] = x.v * std::sin(x.psi + x.beta);
    dx[2] = x.r;
    dx[3] = u.v_delta;
    dx[4] = u.a;

    // Kinematic slip/yaw derivatives (chain rule on beta = atan(lr tan d / L)).
    const double tan_d = std::tan(x.delta);
    const double cos_d2 = std::cos(x.delta) * std::cos(x.delta);
    const double kin_ratio = tan_d * p.lr / L;
    const double beta_dot_kin = p.lr * u.v_delta / (L * cos_d2 * (1.0 + kin_ratio * kin_ratio));
    const double r_dot_kin =
        (u.a * std::cos(x.beta) * tan_d - x.v * std::sin(x.beta) * beta_dot_kin * tan_d +
         x.v * std::cos(x.beta) * u.v_delta / cos_d2) /
        L;

    const double w =
        std::clamp((x.v - kBlendSpeedLow) / (kBlendSpeedHigh - kBlendSpeedLow), 0.0, 1.0);
    if (w == 0.0) {
        dx[5] = beta_dot_kin;
        dx[6] = r_dot_kin;
        return dx;
    }

    // Linear-tire slip/yaw derivatives with longitudinal load transfer
    // through the CoG height (front load ~ g lr - a h, rear ~ g lf + a h).
    const double ff = kGravity * p.lr - u.a * p.h_cg;
    const double fr = kGravity * p.lf + u.a * p.h_cg;
    const double cff = p.c_f * ff;
    const double crr = p.c_r * fr;
    const double v = x.v;
    const double beta_dot_dyn = p.mu / (v * L) * (cff * x.delta - (crr + cff) * x.beta) +
                                (p.mu / (v * v * L) * (crr * p.lr - cff * p.lf) - 1.0) * x.r;
    const double r_dot_dyn =
        p.mu * p.mass / (p.inertia_z * L) *
        (p.lf * cff * x.delta + (p.lr * crr - p.lf * cff) * x.beta -
         (p.lf * p.lf * cff + p.lr * p.lr * crr) * x.r / v);

    dx[5] = (1.0 - w) * beta_dot_kin + w * beta_dot_dyn;
    dx[6] = (1.0 - w) * r_dot_kin + w * r_dot_dyn;
    return dx;
}

VehicleState ode_step(const VehicleState& x, const ControlInput& u, const VehicleParams& p,
                      double dt) {
    const Eigen::Matrix<double, 7, 1> x0 = x.to_vector();
    const auto k1 = st_derivative(x, u, p);
    const auto k2 = st_derivative(VehicleState::from_vector(x0 + 0.5 * dt * k1), u, p);
    const auto k3 = st_derivative(VehicleState::from_vector(x0 + 0.5 * dt * k2), u, p);
    const auto k4 = st_derivative(VehicleState::from_vector(x0 + dt * k3), u, p);
    VehicleState out = VehicleState::from_vector(x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    out.delta = std::clamp(out.delta, p.delta_min, p.delta_max);
    out.v = std::clamp(out.v, p.v_min, p.v_max);
    return out;
}

GPInput assemble_gp_input(const VehicleState& x, const ControlInput& u, const RollPitch& rp) {
    GPInput xi;
    xi << wrap_pi(x.psi), x.delta, x.v, x.beta, x.r, u.a, u.v_delta, rp.roll, rp.pitch;
    return xi;
}

VehicleState composed_step(const VehicleState& x, const ControlInput& u, const TerrainGrid& grid,
                           const ResidualModel& gp, const VehicleParams& p, double dt) {
    const RollPitch rp = roll_pitch_from_normal(grid.query({x.px, x.py}).normal);
    const GPInput xi = assemble_gp_input(x, u, rp);
    VehicleState out = ode_step(x, u, p, dt);
    const Eigen::Vector3d residual = gp.predict_mean(xi);
    out.v += residual[0];
    out.beta += residual[1];
    out.r += residual[2];
    return out;
}

} // namespace nptrack
