#include "nptrack/mppi.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>

#include "nptrack/rng.hpp"
#include "nptrack/util.hpp"

namespace nptrack {

void MPPIConfig::validate() const {
    if (horizon < 1 || samples < 1) throw ConfigError("mppi: horizon and samples must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("mppi: temperature must be > 0");
    if (!(sigma_a > 0.0) || !(sigma_v_delta > 0.0)) {
        throw ConfigError("mppi: sampling std devs must be > 0");
    }
    if (!(a_min < a_max) || !(v_delta_min < v_delta_max)) {
        throw ConfigError("mppi: input bounds must satisfy min < max");
    }
    if (q_px < 0.0 || q_py < 0.0 || q_v < 0.0 || q_psi < 0.0 || r_a < 0.0 || r_v_delta < 0.0 ||
        rd_a < 0.0 || rd_v_delta < 0.0 || qh_scale < 0.0) {
        throw ConfigError("mppi: cost weights must be non-negative");
    }
    if (!(dt > 0.0)) throw ConfigError("mppi: dt must be > 0");
}

void RolloutBatch::resize(int n, int h) {
    num_samples = n;
    horizon = h;
    controls.assign(static_cast<std::size_t>(n) * h * 2, 0.0);
    states.assign(static_cast<std::size_t>(n) * (h + 1) * 7, 0.0);
    costs.assign(n, 0.0);
    weights.assign(n, 0.0);
    failed.assign(n, 0);
}

void sample_controls(const ControlSequence& mean_seq, const MPPIConfig& cfg,
                     std::uint64_t step_index, RolloutBatch& batch) {
    const int h = cfg.horizon;
    const int n = cfg.samples;
    batch.resize(n, h);
    const std::uint32_t step32 = static_cast<std::uint32_t>(step_index);
    parallel_for(static_cast<std::size_t>(n), cfg.workers, [&](std::size_t s) {
        double* row = batch.control_row(static_cast<int>(s));
        for (int t = 0; t < h; ++t) {
            const auto u01 = counter_uniform2(cfg.seed, RngDomain::control_sampling,
                                              static_cast<std::uint32_t>(s),
                                              static_cast<std::uint32_t>(t), step32);
            const double mean_a = std::clamp(mean_seq[t].a, cfg.a_min, cfg.a_max);
            const double mean_vd =
                std::clamp(mean_seq[t].v_delta, cfg.v_delta_min, cfg.v_delta_max);
            row[2 * t] = truncnorm_from_uniform(u01[0], mean_a, cfg.sigma_a, cfg.a_min, cfg.a_max);
            row[2 * t + 1] = truncnorm_from_uniform(u01[1], mean_vd, cfg.sigma_v_delta,
                                                    cfg.v_delta_min, cfg.v_delta_max);
        }
    });
}

bool rollout(const VehicleState& x0, const double* control_seq, int horizon,
             const TerrainGrid& grid, const ResidualModel* gp, const VehicleParams& params,
             double dt, double* states_out) {
    VehicleState x = x0;
    auto write_state = [&](int t, const VehicleState& s) {
        double* row = states_out + static_cast<std::size_t>(t) * 7;
        row[0] = s.px;
        row[1] = s.py;
        row[2] = s.psi;
        row[3] = s.delta;
        row[4] = s.v;
        row[5] = s.beta;
        row[6] = s.r;
    };
    write_state(0, x);
    for (int t = 0; t < horizon; ++t) {
        if (!grid.contains({x.px, x.py})) {
            for (int k = t + 1; k <= horizon; ++k) write_state(k, x);
            return false;
        }
        const ControlInput u{control_seq[2 * t], control_seq[2 * t + 1]};
        x = gp ? composed_step(x, u, grid, *gp, params, dt) : ode_step(x, u, params, dt);
        write_state(t + 1, x);
    }
    if (!grid.contains({x.px, x.py})) return false;
    return true;
}

double trajectory_cost(const double* states, const double* control_seq, int horizon,
                       const std::vector<RefPoint>& ref, const MPPIConfig& cfg, bool failed) {
    double j = 0.0;
    for (int t = 0; t < horizon; ++t) {
        const double* x = states + static_cast<std::size_t>(t) * 7;
        const double dx = x[0] - ref[t].px;
        const double dy = x[1] - ref[t].py;
        const double dv = x[4] - ref[t].v;
        const double dpsi = wrap_pi(x[2] - ref[t].psi);
        j += cfg.q_px * dx * dx + cfg.q_py * dy * dy + cfg.q_v * dv * dv + cfg.q_psi * dpsi * dpsi;
        const double a = control_seq[2 * t];
        const double vd = control_seq[2 * t + 1];
        j += cfg.r_a * a * a + cfg.r_v_delta * vd * vd;
        if (t + 1 < horizon) {
            const double da = a - control_seq[2 * (t + 1)];
            const double dvd = vd - control_seq[2 * (t + 1) + 1];
            j += cfg.rd_a * da * da + cfg.rd_v_delta * dvd * dvd;
        }
    }
    const double* xh = states + static_cast<std::size_t>(horizon) * 7;
    const double dx = xh[0] - ref[horizon].px;
    const double dy = xh[1] - ref[horizon].py;
    const double dv = xh[4] - ref[horizon].v;
    const double dpsi = wrap_pi(xh[2] - ref[horizon].psi);
    j += cfg.qh_scale * (cfg.q_px * dx * dx + cfg.q_py * dy * dy + cfg.q_v * dv * dv +
                         cfg.q_psi * dpsi * dpsi);
    if (failed) j += cfg.fail_cost;
    return j;
}

std::vector<double> importance_weights(const std::vector<double>& costs, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("importance_weights: temperature must be > 0");
    double min_cost = std::numeric_limits<double>::infinity();
    for (double c : costs) min_cost = std::min(min_cost, c);
    if (!std::isfinite(min_cost)) {
        throw AllRolloutsFailed("importance_weights: every rollout cost is infinite");
    }
    std::vector<double> w(costs.size());
    double total = 0.0;
    for (std::size_t s = 0; s < costs.size(); ++s) {
        // min-subtraction cancels in the normalized ratio; exp(-inf) -> 0
        w[s] = std::exp(-(costs[s] - min_cost) / temperature);
        total += w[s];
    }
    for (double& ws : w) ws /= total;
    return w;
}

ControlSequence optimal_sequence(const RolloutBatch& batch, const MPPIConfig& cfg) {
    ControlSequence opt(batch.horizon);
    for (int t = 0; t < batch.horizon; ++t) {
        double a = 0.0, vd = 0.0;
        for (int s = 0; s < batch.num_samples; ++s) {
            const double* row = batch.control_row(s);
            a += batch.weights[s] * row[2 * t];
            vd += batch.weights[s] * row[2 * t + 1];
        }
        opt[t].a = std::clamp(a, cfg.a_min, cfg.a_max);
        opt[t].v_delta = std::clamp(vd, cfg.v_delta_min, cfg.v_delta_max);
    }
    return opt;
}

ControlSequence shift_warm_start(ControlSequence optimal) {
    if (optimal.size() <= 1) return optimal;
    std::rotate(optimal.begin(), optimal.begin() + 1, optimal.end());
    optimal.back() = optimal[optimal.size() - 2];
    return optimal;
}

MPPISolver::MPPISolver(MPPIConfig cfg, VehicleParams params)
    : cfg_(cfg), params_(params) {
    cfg_.validate();
    batch_.resize(cfg_.samples, cfg_.horizon);
}

MPPISolver::StepResult MPPISolver::step(const VehicleState& x, const std::vector<RefPoint>& ref,
                                        const ControlSequence& prev_optimal,
                                        const TerrainGrid& grid, const ResidualModel* gp,
                                        std::uint64_t step_index) {
    const auto t_start = std::chrono::steady_clock::now();
    if (static_cast<int>(ref.size()) < cfg_.horizon + 1) {
        throw DimensionMismatch("mppi step: reference slice must have H+1 points");
    }
    ControlSequence mean = prev_optimal;
    mean.resize(cfg_.horizon);

    sample_controls(mean, cfg_, step_index, batch_);

    parallel_for(static_cast<std::size_t>(cfg_.samples), cfg_.workers, [&](std::size_t s) {
        const int si = static_cast<int>(s);
        const bool ok = rollout(x, batch_.control_row(si), cfg_.horizon, grid, gp, params_,
                                cfg_.dt, batch_.state_row(si));
        batch_.failed[si] = ok ? 0 : 1;
        batch_.costs[si] = trajectory_cost(batch_.state_row(si), batch_.control_row(si),
                                           cfg_.horizon, ref, cfg_, !ok);
    });

    StepResult result;
    auto& diag = result.diagnostics;
    diag.failures = static_cast<int>(
        std::count(batch_.failed.begin(), batch_.failed.end(), std::uint8_t{1}));

    std::vector<double> masked = batch_.costs;
    for (int s = 0; s < cfg_.samples; ++s) {
        if (batch_.failed[s]) masked[s] = std::numeric_limits<double>::infinity();
    }
    try {
        batch_.weights = importance_weights(masked, cfg_.temperature);
    } catch (const AllRolloutsFailed&) {
        diag.all_failed = true;
        diag.min_cost = diag.mean_cost = cfg_.fail_cost;
        result.optimal = mean;
        if (!result.optimal.empty()) {
            std::rotate(result.optimal.begin(), result.optimal.begin() + 1, result.optimal.end());
            result.optimal.back() = ControlInput{0.0, 0.0};
        }
        result.input = ControlInput{cfg_.a_min, 0.0};
        diag.solve_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t_start).count();
        return result;
    }

    result.optimal = optimal_sequence(batch_, cfg_);
    result.input = result.optimal.front();

    double sum = 0.0, sum_w2 = 0.0;
    double min_cost = std::numeric_limits<double>::infinity();
    for (int s = 0; s < cfg_.samples; ++s) {
        sum += batch_.costs[s];
        sum_w2 += batch_.weights[s] * batch_.weights[s];
        min_cost = std::min(min_cost, batch_.costs[s]);
    }
    diag.min_cost = min_cost;
    diag.mean_cost = sum / cfg_.samples;
    diag.ess = sum_w2 > 0.0 ? 1.0 / sum_w2 : 0.0;
    diag.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                              t_start).count();
    return result;
}

} // namespace nptrack
