#include "nptrack/plant.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "nptrack/rng.hpp"
#include "nptrack/util.hpp"

namespace nptrack {

namespace {

constexpr double kCouplingSpeedFloor = 0.5;  // in g/max(v, floor) for the bank term

// Terrain-coupled state derivative used as the ground truth.
Eigen::Matrix<double, 7, 1> plant_derivative(const VehicleState& x, const ControlInput& u,
                                             const TerrainGrid& grid, const PlantConfig& pcfg,
                                             const VehicleParams& p) {
    Eigen::Matrix<double, 7, 1> dx = st_derivative(x, u, p);
    const TerrainSample s = grid.query({x.px, x.py});
    const RollPitch rp = roll_pitch_from_normal(s.normal);
    // Terrain tilt rotated into the vehicle frame: gamma_h is the climb
    // pitch along the heading (gamma ~ dh/dx, alpha ~ -dh/dy for small
    // angles, so grad h . heading = gamma cos psi - alpha sin psi),
    // alpha_h the lateral bank.
    const double cos_psi = std::cos(x.psi);
    const double sin_psi = std::sin(x.psi);
    const double gamma_h = rp.pitch * cos_psi - rp.roll * sin_psi;
    const double alpha_h = rp.roll * cos_psi + rp.pitch * sin_psi;
    dx[4] += -pcfg.k_a * pcfg.gravity * std::sin(gamma_h);
    dx[5] += pcfg.k_beta * (pcfg.gravity / std::max(x.v, kCouplingSpeedFloor)) * std::sin(alpha_h);
    dx[6] += pcfg.k_r * x.r * (1.0 / std::cos(s.slope) - 1.0);
    return dx;
}

} // namespace

void PlantConfig::validate(double control_dt) const {
    if (!(dt > 0.0) || !(control_dt > 0.0)) throw ConfigError("plant: dt must be > 0");
    const double ratio = control_dt / dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9) {
        throw ConfigError("plant: plant dt must divide the control dt");
    }
    if (!std::isfinite(k_a) || !std::isfinite(k_beta) || !std::isfinite(k_r) ||
        !(gravity > 0.0) || (noise_std.array() < 0.0).any()) {
        throw ConfigError("plant: gains must be finite and noise std non-negative");
    }
}

VehicleState plant_step(const VehicleState& x, const ControlInput& u, const TerrainGrid& grid,
                        const PlantConfig& pcfg, const VehicleParams& p, double dt,
                        const Eigen::Vector3d& noise) {
    const int substeps = std::max(1, static_cast<int>(std::round(dt / pcfg.dt)));
    const double h = dt / substeps;
    VehicleState cur = x;
    for (int k = 0; k < substeps; ++k) {
        const Eigen::Matrix<double, 7, 1> x0 = cur.to_vector();
        const auto k1 = plant_derivative(cur, u, grid, pcfg, p);
        const auto k2 = plant_derivative(VehicleState::from_vector(x0 + 0.5 * h * k1), u, grid, pcfg, p);
        const auto k3 = plant_derivative(VehicleState::from_vector(x0 + 0.5 * h * k2), u, grid, pcfg, p);
        const auto k4 = plant_derivative(VehicleState::from_vector(x0 + h * k3), u, grid, pcfg, p);
        cur = VehicleState::from_vector(x0 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
        // physical steering stop; no reverse gear
        cur.delta = std::clamp(cur.delta, p.delta_min, p.delta_max);
        cur.v = std::max(cur.v, 0.0);
    }
    cur.v += noise[0];
    cur.beta += noise[1];
    cur.r += noise[2];
    cur.v = std::max(cur.v, 0.0);
    if (!grid.contains({cur.px, cur.py})) {
        throw OutOfBounds("plant left the mapped terrain");
    }
    return cur;
}

std::string to_string(ControllerMode mode) {
    switch (mode) {
        case ControllerMode::baseline: return "baseline";
        case ControllerMode::gp: return "gp";
        case ControllerMode::gp_recursive: return "gp_recursive";
    }
    return "?";
}

ControllerMode mode_from_string(const std::string& name) {
    if (name == "baseline") return ControllerMode::baseline;
    if (name == "gp") return ControllerMode::gp;
    if (name == "gp_recursive") return ControllerMode::gp_recursive;
    throw ConfigError("unknown controller mode '" + name +
                      "' (known: baseline, gp, gp_recursive)");
}

namespace {

const char* kCsvHeader =
    "step,t,px,py,psi,delta,v,beta,r,a,v_delta,ref_px,ref_py,ref_v,ref_psi,cte,heading_error,"
    "gp_pred_v,gp_pred_beta,gp_pred_r,resid_v,resid_beta,resid_r,mppi_min_cost,mppi_ess,"
    "mppi_failures,solve_ms";

} // namespace

void RunLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << kCsvHeader << '\n';
    for (const auto& r : records) {
        out << r.step << ',' << format_double(r.t) << ',' << format_double(r.state.px) << ','
            << format_double(r.state.py) << ',' << format_double(r.state.psi) << ','
            << format_double(r.state.delta) << ',' << format_double(r.state.v) << ','
            << format_double(r.state.beta) << ',' << format_double(r.state.r) << ','
            << format_double(r.input.a) << ',' << format_double(r.input.v_delta) << ','
            << format_double(r.ref.px) << ',' << format_double(r.ref.py) << ','
            << format_double(r.ref.v) << ',' << format_double(r.ref.psi) << ','
            << format_double(r.cte) << ',' << format_double(r.heading_error) << ','
            << format_double(r.gp_prediction[0]) << ',' << format_double(r.gp_prediction[1]) << ','
            << format_double(r.gp_prediction[2]) << ',' << format_double(r.residual[0]) << ','
            << format_double(r.residual[1]) << ',' << format_double(r.residual[2]) << ','
            << format_double(r.mppi_min_cost) << ',' << format_double(r.mppi_ess) << ','
            << r.mppi_failures << ',' << format_double(r.solve_ms) << '\n';
    }
    out << "# lap_completed=" << (lap_completed ? 1 : 0) << " departed=" << (departed ? 1 : 0)
        << " progress=" << format_double(progress) << " outliers_rejected=" << outliers_rejected
        << '\n';
}

RunLog RunLog::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) {
        throw IoError("'" + path.string() + "' is not a run log");
    }
    RunLog log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ss(line.substr(1));
            std::string kv;
            while (ss >> kv) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) continue;
                const std::string key = kv.substr(0, eq);
                const std::string value = kv.substr(eq + 1);
                if (key == "lap_completed") log.lap_completed = value == "1";
                else if (key == "departed") log.departed = value == "1";
                else if (key == "progress") log.progress = std::strtod(value.c_str(), nullptr);
                else if (key == "outliers_rejected") log.outliers_rejected = std::strtoull(value.c_str(), nullptr, 10);
            }
            continue;
        }
        std::istringstream ss(line);
        std::string cell;
        double vals[27];
        int c = 0;
        while (c < 27 && std::getline(ss, cell, ',')) {
            vals[c++] = std::strtod(cell.c_str(), nullptr);
        }
        if (c != 27) throw IoError("malformed run log row in '" + path.string() + "'");
        RunRecord r;
        r.step = static_cast<int>(vals[0]);
        r.t = vals[1];
        r.state = {vals[2], vals[3], vals[4], vals[5], vals[6], vals[7], vals[8]};
        r.input = {vals[9], vals[10]};
        r.ref = {vals[11], vals[12], vals[13], vals[14]};
        r.cte = vals[15];
        r.heading_error = vals[16];
        r.gp_prediction = {vals[17], vals[18], vals[19]};
        r.residual = {vals[20], vals[21], vals[22]};
        r.mppi_min_cost = vals[23];
        r.mppi_ess = vals[24];
        r.mppi_failures = static_cast<int>(vals[25]);
        r.solve_ms = vals[26];
        log.records.push_back(r);
    }
    return log;
}

RunSummary summarize(const RunLog& log, ControllerMode mode, std::uint64_t seed) {
    RunSummary s;
    s.mode = to_string(mode);
    s.seed = seed;
    s.steps = static_cast<int>(log.records.size());
    s.lap_completed = log.lap_completed;
    s.departed = log.departed;
    if (log.records.empty()) return s;
    std::vector<double> abs_cte, solve;
    abs_cte.reserve(log.records.size());
    solve.reserve(log.records.size());
    double total = 0.0;
    for (const auto& r : log.records) {
        abs_cte.push_back(std::abs(r.cte));
        solve.push_back(r.solve_ms);
        total += std::abs(r.cte);
    }
    s.mean_abs_cte = total / static_cast<double>(abs_cte.size());
    s.max_abs_cte = *std::max_element(abs_cte.begin(), abs_cte.end());
    auto median = [](std::vector<double> v) {
        const std::size_t mid = v.size() / 2;
        std::nth_element(v.begin(), v.begin() + mid, v.end());
        double m = v[mid];
        if (v.size() % 2 == 0) {
            m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
        }
        return m;
    };
    s.median_abs_cte = median(abs_cte);
    s.median_solve_ms = median(solve);
    s.frequency_hz = s.median_solve_ms > 0.0 ? 1000.0 / s.median_solve_ms : 0.0;
    return s;
}

RunLog run_closed_loop(const ReferenceTrajectory& track, const TerrainGrid& terrain,
                       ControllerMode mode, const ClosedLoopConfig& cfg, ResidualModel* model,
                       ResidualDataset* collect) {
    validate(cfg.vehicle);
    cfg.mppi.validate();
    cfg.plant.validate(cfg.mppi.dt);
    const bool uses_gp = mode != ControllerMode::baseline;
    if (uses_gp && (model == nullptr || model->empty())) {
        throw ConfigError("controller mode '" + to_string(mode) + "' needs a residual model");
    }

    MPPISolver solver(cfg.mppi, cfg.vehicle);
    const double dt = cfg.mppi.dt;
    const int horizon = cfg.mppi.horizon;

    const RefPoint start = track.at(0.0);
    VehicleState x;
    x.px = start.px;
    x.py = start.py;
    x.psi = start.psi;
    x.v = cfg.start_speed;
    const Eigen::Vector2d start_pos{start.px, start.py};

    ControlSequence warm(horizon, ControlInput{0.0, 0.0});
    RunLog log;
    double s_prev = track.nearest_arclength({x.px, x.py});
    double progress = 0.0;
    const double total_len = track.length();

    for (int step = 0; step < cfg.max_steps; ++step) {
        const Eigen::Vector2d pos{x.px, x.py};
        const double s_now = track.nearest_arclength(pos);
        const auto ref = track.slice(s_now, x.v, dt, horizon + 1);

        auto result = solver.step(x, ref, warm, terrain, uses_gp ? model : nullptr,
                                  static_cast<std::uint64_t>(step));
        warm = shift_warm_start(result.optimal);
        ControlInput u = result.input;

        if (cfg.excitation_frac > 0.0) {
            const auto e = counter_uniform2(cfg.seed, RngDomain::excitation,
                                            static_cast<std::uint32_t>(step), 0, 0);
            const double half_a = 0.5 * (cfg.mppi.a_max - cfg.mppi.a_min);
            const double half_vd = 0.5 * (cfg.mppi.v_delta_max - cfg.mppi.v_delta_min);
            u.a = std::clamp(u.a + cfg.excitation_frac * half_a * (2.0 * e[0] - 1.0),
                             cfg.mppi.a_min, cfg.mppi.a_max);
            u.v_delta = std::clamp(u.v_delta + cfg.excitation_frac * half_vd * (2.0 * e[1] - 1.0),
                                   cfg.mppi.v_delta_min, cfg.mppi.v_delta_max);
        }

        RunRecord rec;
        rec.step = step;
        rec.t = step * dt;
        rec.state = x;
        rec.input = u;
        rec.ref = ref.front();
        rec.cte = cross_track_error(pos, track);
        rec.heading_error = wrap_pi(x.psi - ref.front().psi);
        rec.mppi_min_cost = result.diagnostics.min_cost;
        rec.mppi_ess = result.diagnostics.ess;
        rec.mppi_failures = result.diagnostics.failures;
        rec.solve_ms = result.diagnostics.solve_ms;

        GPInput xi;
        bool have_xi = false;
        if (terrain.contains(pos)) {
            xi = assemble_gp_input(x, u, roll_pitch_from_normal(terrain.query(pos).normal));
            have_xi = true;
            if (uses_gp) rec.gp_prediction = model->predict_mean(xi);
        }

        // plant noise: one draw triple per control step
        Eigen::Vector3d noise = Eigen::Vector3d::Zero();
        if ((cfg.plant.noise_std.array() > 0.0).any()) {
            const auto n01 = counter_uniform2(cfg.seed, RngDomain::plant_noise,
                                              static_cast<std::uint32_t>(step), 0, 0);
            const auto n23 = counter_uniform2(cfg.seed, RngDomain::plant_noise,
                                              static_cast<std::uint32_t>(step), 1, 0);
            noise[0] = cfg.plant.noise_std[0] * normal_from_uniform(n01[0]);
            noise[1] = cfg.plant.noise_std[1] * normal_from_uniform(n01[1]);
            noise[2] = cfg.plant.noise_std[2] * normal_from_uniform(n23[0]);
        }

        VehicleState x_next;
        bool departed = false;
        try {
            x_next = plant_step(x, u, terrain, cfg.plant, cfg.vehicle, dt, noise);
        } catch (const OutOfBounds&) {
            departed = true;
        }

        if (!departed) {
            const auto y = residual_target(x, u, x_next, cfg.vehicle, dt, cfg.gate,
                                           &log.outliers_rejected);
            const VehicleState nominal = ode_step(x, u, cfg.vehicle, dt);
            rec.residual = {x_next.v - nominal.v, x_next.beta - nominal.beta,
                            x_next.r - nominal.r};
            if (y && have_xi) {
                if (mode == ControllerMode::gp_recursive) model->update(xi, *y);
                if (collect) collect->append(xi, *y);
            }
        }
        log.records.push_back(rec);

        if (departed) {
            log.departed = true;
            break;
        }

        const double s_next = track.nearest_arclength({x_next.px, x_next.py});
        double delta_s = s_next - s_prev;
        if (track.closed()) {
            delta_s = std::remainder(delta_s, total_len);
        }
        progress += delta_s;
        s_prev = s_next;
        x = x_next;

        if (std::abs(cross_track_error({x.px, x.py}, track)) > cfg.corridor_halfwidth) {
            log.departed = true;
            break;
        }
        if (track.closed() && progress >= total_len &&
            (Eigen::Vector2d{x.px, x.py} - start_pos).norm() < 1.0) {
            log.lap_completed = true;
            break;
        }
    }
    log.progress = progress;
    return log;
}

} // namespace nptrack
