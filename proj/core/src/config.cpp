#include "nptrack/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "nptrack/errors.hpp"
#include "nptrack/util.hpp"

namespace nptrack {

namespace {

void reject_unknown_keys(const YAML::Node& node, const std::string& section,
                         const std::set<std::string>& allowed) {
    if (!node) return;
    if (!node.IsMap()) throw ConfigError("section '" + section + "' must be a mapping");
    for (const auto& kv : node) {
        const std::string key = kv.first.as<std::string>();
        if (!allowed.count(key)) {
            throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
        }
    }
}

double require_double(const YAML::Node& node, const std::string& section, const std::string& key) {
    if (!node || !node[key]) {
        throw ConfigError("missing mandatory key '" + key + "' in section '" + section + "'");
    }
    return node[key].as<double>();
}

template <typename T>
T get_or(const YAML::Node& node, const std::string& key, T fallback) {
    if (!node || !node[key]) return fallback;
    return node[key].as<T>();
}

template <int N>
Eigen::Matrix<double, N, 1> get_vec(const YAML::Node& node, const std::string& section,
                                    const std::string& key,
                                    const Eigen::Matrix<double, N, 1>& fallback) {
    if (!node || !node[key]) return fallback;
    const YAML::Node v = node[key];
    Eigen::Matrix<double, N, 1> out;
    if (v.IsScalar()) {
        out.setConstant(v.as<double>());
        return out;
    }
    if (!v.IsSequence() || v.size() != N) {
        throw ConfigError("key '" + key + "' in section '" + section + "' must be a scalar or a " +
                          std::to_string(N) + "-element list");
    }
    for (int i = 0; i < N; ++i) out[i] = v[i].as<double>();
    return out;
}

} // namespace

RunConfig RunConfig::load(const std::filesystem::path& path) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
        throw ConfigError("cannot parse '" + path.string() + "': " + e.what());
    }
    reject_unknown_keys(root, "(top level)", {"vehicle", "track", "mppi", "gp", "plant", "run"});

    RunConfig cfg;

    const YAML::Node veh = root["vehicle"];
    if (!veh) throw ConfigError("missing mandatory section 'vehicle'");
    reject_unknown_keys(veh, "vehicle",
                        {"mass", "inertia_z", "lf", "lr", "h_cg", "c_f", "c_r", "mu", "delta_min",
                         "delta_max", "v_min", "v_max", "a_min", "a_max", "v_delta_min",
                         "v_delta_max"});
    cfg.vehicle.mass = require_double(veh, "vehicle", "mass");
    cfg.vehicle.inertia_z = require_double(veh, "vehicle", "inertia_z");
    cfg.vehicle.lf = require_double(veh, "vehicle", "lf");
    cfg.vehicle.lr = require_double(veh, "vehicle", "lr");
    cfg.vehicle.h_cg = require_double(veh, "vehicle", "h_cg");
    cfg.vehicle.c_f = require_double(veh, "vehicle", "c_f");
    cfg.vehicle.c_r = require_double(veh, "vehicle", "c_r");
    cfg.vehicle.mu = require_double(veh, "vehicle", "mu");
    cfg.vehicle.delta_min = require_double(veh, "vehicle", "delta_min");
    cfg.vehicle.delta_max = require_double(veh, "vehicle", "delta_max");
    cfg.vehicle.v_min = require_double(veh, "vehicle", "v_min");
    cfg.vehicle.v_max = require_double(veh, "vehicle", "v_max");
    cfg.vehicle.a_min = require_double(veh, "vehicle", "a_min");
    cfg.vehicle.a_max = require_double(veh, "vehicle", "a_max");
    cfg.vehicle.v_delta_min = require_double(veh, "vehicle", "v_delta_min");
    cfg.vehicle.v_delta_max = require_double(veh, "vehicle", "v_delta_max");
    validate(cfg.vehicle);

    const YAML::Node trk = root["track"];
    reject_unknown_keys(trk, "track",
                        {"shape", "profile", "profile_params", "scale", "margin", "grid_spacing",
                         "waypoint_spacing", "v_max", "a_lat_frac", "a_lon_max"});
    if (trk) {
        cfg.track.shape = get_or<std::string>(trk, "shape", cfg.track.shape);
        cfg.track.profile = get_or<std::string>(trk, "profile", cfg.track.profile);
        if (trk["profile_params"]) {
            for (const auto& kv : trk["profile_params"]) {
                cfg.track.profile_params[kv.first.as<std::string>()] = kv.second.as<double>();
            }
        }
        cfg.track.gen.scale = get_or(trk, "scale", cfg.track.gen.scale);
        cfg.track.gen.margin = get_or(trk, "margin", cfg.track.gen.margin);
        const double sp = get_or(trk, "grid_spacing", cfg.track.gen.grid_spacing.x());
        cfg.track.gen.grid_spacing = {sp, sp};
        cfg.track.gen.waypoint_spacing =
            get_or(trk, "waypoint_spacing", cfg.track.gen.waypoint_spacing);
        cfg.track.gen.v_max = get_or(trk, "v_max", cfg.track.gen.v_max);
        cfg.track.gen.a_lat_frac = get_or(trk, "a_lat_frac", cfg.track.gen.a_lat_frac);
        cfg.track.gen.a_lon_max = get_or(trk, "a_lon_max", cfg.track.gen.a_lon_max);
        cfg.track.gen.mu = cfg.vehicle.mu;
    }

    const YAML::Node mp = root["mppi"];
    reject_unknown_keys(mp, "mppi",
                        {"horizon", "samples", "temperature", "sigma_a", "sigma_v_delta", "q_px",
                         "q_py", "q_v", "q_psi", "r_a", "r_v_delta", "rd_a", "rd_v_delta",
                         "qh_scale", "dt", "fail_cost", "workers"});
    if (mp) {
        cfg.mppi.horizon = get_or(mp, "horizon", cfg.mppi.horizon);
        cfg.mppi.samples = get_or(mp, "samples", cfg.mppi.samples);
        cfg.mppi.temperature = get_or(mp, "temperature", cfg.mppi.temperature);
        cfg.mppi.sigma_a = get_or(mp, "sigma_a", cfg.mppi.sigma_a);
        cfg.mppi.sigma_v_delta = get_or(mp, "sigma_v_delta", cfg.mppi.sigma_v_delta);
        cfg.mppi.q_px = get_or(mp, "q_px", cfg.mppi.q_px);
        cfg.mppi.q_py = get_or(mp, "q_py", cfg.mppi.q_py);
        cfg.mppi.q_v = get_or(mp, "q_v", cfg.mppi.q_v);
        cfg.mppi.q_psi = get_or(mp, "q_psi", cfg.mppi.q_psi);
        cfg.mppi.r_a = get_or(mp, "r_a", cfg.mppi.r_a);
        cfg.mppi.r_v_delta = get_or(mp, "r_v_delta", cfg.mppi.r_v_delta);
        cfg.mppi.rd_a = get_or(mp, "rd_a", cfg.mppi.rd_a);
        cfg.mppi.rd_v_delta = get_or(mp, "rd_v_delta", cfg.mppi.rd_v_delta);
        cfg.mppi.qh_scale = get_or(mp, "qh_scale", cfg.mppi.qh_scale);
        cfg.mppi.dt = get_or(mp, "dt", cfg.mppi.dt);
        cfg.mppi.fail_cost = get_or(mp, "fail_cost", cfg.mppi.fail_cost);
        cfg.mppi.workers = get_or(mp, "workers", cfg.mppi.workers);
    }
    // The admissible input box comes from the vehicle bounds.
    cfg.mppi.a_min = cfg.vehicle.a_min;
    cfg.mppi.a_max = cfg.vehicle.a_max;
    cfg.mppi.v_delta_min = cfg.vehicle.v_delta_min;
    cfg.mppi.v_delta_max = cfg.vehicle.v_delta_max;
    cfg.mppi.validate();

    const YAML::Node gp = root["gp"];
    reject_unknown_keys(gp, "gp",
                        {"num_inducing", "forgetting", "lengthscale", "sigma_f2", "sigma_eps2",
                         "grid_search", "outlier_gate"});
    if (gp) {
        cfg.gp.num_inducing = get_or(gp, "num_inducing", cfg.gp.num_inducing);
        cfg.gp.forgetting = get_or(gp, "forgetting", cfg.gp.forgetting);
        cfg.gp.lengthscale = get_vec<9>(gp, "gp", "lengthscale", cfg.gp.lengthscale);
        cfg.gp.sigma_f2 = get_vec<3>(gp, "gp", "sigma_f2", cfg.gp.sigma_f2);
        cfg.gp.sigma_eps2 = get_vec<3>(gp, "gp", "sigma_eps2", cfg.gp.sigma_eps2);
        cfg.gp.grid_search = get_or(gp, "grid_search", cfg.gp.grid_search);
        cfg.gp.gate.max_abs = get_vec<3>(gp, "gp", "outlier_gate", cfg.gp.gate.max_abs);
    }
    if (cfg.gp.num_inducing < 1 || !(cfg.gp.forgetting > 0.0) || cfg.gp.forgetting > 1.0) {
        throw ConfigError("gp: num_inducing must be >= 1 and forgetting in (0, 1]");
    }

    const YAML::Node pl = root["plant"];
    reject_unknown_keys(pl, "plant",
                        {"gravity", "k_a", "k_beta", "k_r", "noise_std", "dt"});
    if (pl) {
        cfg.plant.gravity = get_or(pl, "gravity", cfg.plant.gravity);
        cfg.plant.k_a = get_or(pl, "k_a", cfg.plant.k_a);
        cfg.plant.k_beta = get_or(pl, "k_beta", cfg.plant.k_beta);
        cfg.plant.k_r = get_or(pl, "k_r", cfg.plant.k_r);
        cfg.plant.noise_std = get_vec<3>(pl, "plant", "noise_std", cfg.plant.noise_std);
        cfg.plant.dt = get_or(pl, "dt", cfg.plant.dt);
    }
    cfg.plant.validate(cfg.mppi.dt);

    const YAML::Node rn = root["run"];
    reject_unknown_keys(rn, "run",
                        {"modes", "seeds", "max_steps", "corridor_halfwidth", "start_speed",
                         "excitation_frac", "collect_duration_s"});
    if (rn) {
        if (rn["modes"]) {
            cfg.run.modes.clear();
            for (const auto& m : rn["modes"]) {
                const std::string name = m.as<std::string>();
                mode_from_string(name);  // validates
                cfg.run.modes.push_back(name);
            }
        }
        if (rn["seeds"]) {
            cfg.run.seeds.clear();
            for (const auto& s : rn["seeds"]) cfg.run.seeds.push_back(s.as<std::uint64_t>());
        }
        cfg.run.max_steps = get_or(rn, "max_steps", cfg.run.max_steps);
        cfg.run.corridor_halfwidth = get_or(rn, "corridor_halfwidth", cfg.run.corridor_halfwidth);
        cfg.run.start_speed = get_or(rn, "start_speed", cfg.run.start_speed);
        cfg.run.excitation_frac = get_or(rn, "excitation_frac", cfg.run.excitation_frac);
        cfg.run.collect_duration_s = get_or(rn, "collect_duration_s", cfg.run.collect_duration_s);
    }
    if (cfg.run.max_steps < 0 || cfg.run.seeds.empty() || cfg.run.modes.empty()) {
        throw ConfigError("run: need max_steps >= 0 and non-empty modes/seeds");
    }
    return cfg;
}

void RunConfig::dump(const std::filesystem::path& path) const {
    YAML::Emitter em;
    em.SetDoublePrecision(17);
    em << YAML::BeginMap;

    em << YAML::Key << "vehicle" << YAML::Value << YAML::BeginMap;
    em << YAML::Key << "mass" << YAML::Value << vehicle.mass;
    em << YAML::Key << "inertia_z" << YAML::Value << vehicle.inertia_z;
    em << YAML::Key << "lf" << YAML::Value << vehicle.lf;
    em << YAML::Key << "lr" << YAML::Value << vehicle.lr;
    em << YAML::Key << "h_cg" << YAML::Value << vehicle.h_cg;
    em << YAML::Key << "c_f" << YAML::Value << vehicle.c_f;
    em << YAML::Key << "c_r" << YAML::Value << vehicle.c_r;
    em << YAML::Key << "mu" << YAML::Value << vehicle.mu;
    em << YAML::Key << "delta_min" << YAML::Value << vehicle.delta_min;
    em << YAML::Key << "delta_max" << YAML::Value << vehicle.delta_max;
    em << YAML::Key << "v_min" << YAML::Value << vehicle.v_min;
    em << YAML::Key << "v_max" << YAML::Value << vehicle.v_max;
    em << YAML::Key << "a_min" << YAML::Value << vehicle.a_min;
    em << YAML::Key << "a_max" << YAML::Value << vehicle.a_max;
    em << YAML::Key << "v_delta_min" << YAML::Value << vehicle.v_delta_min;
    em << YAML::Key << "v_delta_max" << YAML::Value << vehicle.v_delta_max;
    em << YAML::EndMap;

    em << YAML::Key << "track" << YAML::Value << YAML::BeginMap;
    em << YAML::Key << "shape" << YAML::Value << track.shape;
    em << YAML::Key << "profile" << YAML::Value << track.profile;
    em << YAML::Key << "profile_params" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : track.profile_params) {
        em << YAML::Key << k << YAML::Value << v;
    }
    em << YAML::EndMap;
    em << YAML::Key << "scale" << YAML::Value << track.gen.scale;
    em << YAML::Key << "margin" << YAML::Value << track.gen.margin;
    em << YAML::Key << "grid_spacing" << YAML::Value << track.gen.grid_spacing.x();
    em << YAML::Key << "waypoint_spacing" << YAML::Value << track.gen.waypoint_spacing;
    em << YAML::Key << "v_max" << YAML::Value << track.gen.v_max;
    em << YAML::Key << "a_lat_frac" << YAML::Value << track.gen.a_lat_frac;
    em << YAML::Key << "a_lon_max" << YAML::Value << track.gen.a_lon_max;
    em << YAML::EndMap;

    em << YAML::Key << "mppi" << YAML::Value << YAML::BeginMap;
    em << YAML::Key << "horizon" << YAML::Value << mppi.horizon;
    em << YAML::Key << "samples" << YAML::Value << mppi.samples;
    em << YAML::Key << "temperature" << YAML::Value << mppi.temperature;
    em << YAML::Key << "sigma_a" << YAML::Value << mppi.sigma_a;
    em << YAML::Key << "sigma_v_delta" << YAML::Value << mppi.sigma_v_delta;
    em << YAML::Key << "q_px" << YAML::Value << mppi.q_px;
    em << YAML::Key << "q_py" << YAML::Value << mppi.q_py;
    em << YAML::Key << "q_v" << YAML::Value << mppi.q_v;
    em << YAML::Key << "q_psi" << YAML::Value << mppi.q_psi;
    em << YAML::Key << "r_a" << YAML::Value << mppi.r_a;
    em << YAML::Key << "r_v_delta" << YAML::Value << mppi.r_v_delta;
    em << YAML::Key << "rd_a" << YAML::Value << mppi.rd_a;
    em << YAML::Key << "rd_v_delta" << YAML::Value << mppi.rd_v_delta;
    em << YAML::Key << "qh_scale" << YAML::Value << mppi.qh_scale;
    em << YAML::Key << "dt" << YAML::Value << mppi.dt;
    em << YAML::Key << "fail_cost" << YAML::Value << mppi.fail_cost;
    em << YAML::Key << "workers" << YAML::Value << mppi.workers;
    em << YAML::EndMap;

    auto emit_vec = [&em](const char* key, const auto& v) {
        em << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
        for (Eigen::Index i = 0; i < v.size(); ++i) em << v[i];
        em << YAML::EndSeq;
    };
    em << YAML::Key << "gp" << YAML::Value << YAML::BeginMap;
    em << YAML::Key << "num_inducing" << YAML::Value << gp.num_inducing;
    em << YAML::Key << "forgetting" << YAML::Value << gp.forgetting;
    emit_vec("lengthscale", gp.lengthscale);
    emit_vec("sigma_f2", gp.sigma_f2);
    emit_vec("sigma_eps2", gp.sigma_eps2);
    em << YAML::Key << "grid_search" << YAML::Value << gp.grid_search;
    emit_vec("outlier_gate", gp.gate.max_abs);
    em << YAML::EndMap;

    em << YAML::Key << "plant" << YAML::Value << YAML::BeginMap;
    em << YAML::Key << "gravity" << YAML::Value << plant.gravity;
    em << YAML::Key << "k_a" << YAML::Value << plant.k_a;
    em << YAML::Key << "k_beta" << YAML::Value << plant.k_beta;
    em << YAML::Key << "k_r" << YAML::Value << plant.k_r;
    emit_vec("noise_std", plant.noise_std);
    em << YAML::Key << "dt" << YAML::Value << plant.dt;
    em << YAML::EndMap;

    em << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
    em << YAML::Key << "modes" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& m : run.modes) em << m;
    em << YAML::EndSeq;
    em << YAML::Key << "seeds" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (auto s : run.seeds) em << s;
    em << YAML::EndSeq;
    em << YAML::Key << "max_steps" << YAML::Value << run.max_steps;
    em << YAML::Key << "corridor_halfwidth" << YAML::Value << run.corridor_halfwidth;
    em << YAML::Key << "start_speed" << YAML::Value << run.start_speed;
    em << YAML::Key << "excitation_frac" << YAML::Value << run.excitation_frac;
    em << YAML::Key << "collect_duration_s" << YAML::Value << run.collect_duration_s;
    em << YAML::EndMap;

    em << YAML::EndMap;
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << em.c_str() << '\n';
}

ClosedLoopConfig RunConfig::closed_loop(std::uint64_t seed) const {
    ClosedLoopConfig cl;
    cl.vehicle = vehicle;
    cl.mppi = mppi;
    cl.mppi.seed = seed;
    cl.plant = plant;
    cl.gate = gp.gate;
    cl.max_steps = run.max_steps;
    cl.corridor_halfwidth = run.corridor_halfwidth;
    cl.start_speed = run.start_speed;
    cl.seed = seed;
    return cl;
}

} // namespace nptrack
