#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nptrack/terrain.hpp"

namespace nptrack {

// Reference state sample along the path: position, target speed, heading.
struct RefPoint {
    double px = 0.0;
    double py = 0.0;
    double v = 0.0;
    double psi = 0.0;
};

// Polyline reference with arc-length parameterization and a per-vertex
// speed profile. Closed tracks carry the closure explicitly: the last
// vertex equals the first.
class ReferenceTrajectory {
public:
    ReferenceTrajectory() = default;
    ReferenceTrajectory(std::vector<Eigen::Vector2d> points, std::vector<double> speeds,
                        bool closed);

    double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
    bool closed() const { return closed_; }
    std::size_t size() const { return points_.size(); }
    const std::vector<Eigen::Vector2d>& points() const { return points_; }
    const std::vector<double>& speeds() const { return speeds_; }

    // Sample at arc length s (wrapped when closed, clamped when open).
    RefPoint at(double s) const;

    // Arc length of the point on the path nearest to p.
    double nearest_arclength(const Eigen::Vector2d& p) const;

    // count samples starting at s0, advancing by progress_speed * dt each.
    std::vector<RefPoint> slice(double s0, double progress_speed, double dt, int count) const;

    void save_csv(const std::filesystem::path& path) const;
    static ReferenceTrajectory load_csv(const std::filesystem::path& path);

private:
    std::vector<Eigen::Vector2d> points_;
    std::vector<double> speeds_;
    std::vector<double> cumulative_;
    bool closed_ = false;
};

// Signed perpendicular distance to the nearest point of the path; positive
// when p lies left of the local path direction.
double cross_track_error(const Eigen::Vector2d& p, const ReferenceTrajectory& path);

struct TrackGenConfig {
    double scale = 1.0;
    double margin = 6.0;                      // terrain border around the track bbox [m]
    Eigen::Vector2d grid_spacing{0.25, 0.25};
    double waypoint_spacing = 0.25;
    double v_max = 4.0;                       // reference speed cap [m/s]
    double a_lat_frac = 0.6;                  // lateral budget as a fraction of mu*g
    double a_lon_max = 2.0;                   // accel feasibility for the profile [m/s^2]
    double mu = 1.0;
};

struct GeneratedTrack {
    ReferenceTrajectory reference;
    TerrainGrid terrain;
};

// Closed centerline (kidney, l_shape or oval) with a curvature-capped speed
// profile, paired with catalog terrain over the track's bounding box.
// Ring/crater profiles without explicit centers are fitted to the track.
GeneratedTrack generate_track(const std::string& shape, const std::string& profile,
                              std::map<std::string, double> profile_params,
                              const TrackGenConfig& cfg = {});

// Key-value map-statistics report (the same metrics as the map table:
// min/max elevation, elevation range, max and median slope in degrees).
void write_map_stats(const std::filesystem::path& path, const TerrainGrid::MapStats& stats);

} // namespace nptrack
