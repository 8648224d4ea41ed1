#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nptrack/mppi.hpp"
#include "nptrack/plant.hpp"
#include "nptrack/sparse_gp.hpp"
#include "nptrack/track.hpp"

namespace nptrack {

struct GPConfig {
    int num_inducing = 30;
    double forgetting = 0.999;
    GPInput lengthscale = default_lengthscale();
    Eigen::Vector3d sigma_f2{0.25, 0.04, 0.25};
    Eigen::Vector3d sigma_eps2{4e-4, 1e-4, 4e-4};
    bool grid_search = false;
    OutlierGate gate;

    static GPInput default_lengthscale() {
        GPInput l;
        // xi = [psi, delta, v, beta, r, a, v_delta, roll, pitch]
        l << 3.14, 0.3, 2.0, 0.15, 1.0, 2.0, 2.0, 0.25, 0.25;
        return l;
    }
    std::array<KernelHyper, 3> hyper() const {
        std::array<KernelHyper, 3> h;
        for (int i = 0; i < 3; ++i) {
            h[i].lengthscale = lengthscale;
            h[i].sigma_f2 = sigma_f2[i];
            h[i].sigma_eps2 = sigma_eps2[i];
        }
        return h;
    }
};

struct TrackConfig {
    std::string shape = "oval";
    std::string profile = "flat";
    std::map<std::string, double> profile_params;
    TrackGenConfig gen;
};

struct RunSection {
    std::vector<std::string> modes{"baseline", "gp_recursive"};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    int max_steps = 2000;
    double corridor_halfwidth = 2.5;
    double start_speed = 0.0;
    double excitation_frac = 0.3;     // collect only
    double collect_duration_s = 30.0; // collect only
};

// Full run configuration. The vehicle section has no defaults: every
// physical field must be present in the file. Unknown keys anywhere are
// rejected.
struct RunConfig {
    VehicleParams vehicle;
    TrackConfig track;
    MPPIConfig mppi;
    GPConfig gp;
    PlantConfig plant;
    RunSection run;

    static RunConfig load(const std::filesystem::path& path);
    void dump(const std::filesystem::path& path) const;

    // Assemble the closed-loop bundle for one seed (controller sampling and
    // plant noise both keyed by it).
    ClosedLoopConfig closed_loop(std::uint64_t seed) const;
};

} // namespace nptrack
