#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nptrack/errors.hpp"

namespace nptrack {

// Sample of a surface with an outward (upward) unit normal.
struct OrientedPoint {
    Eigen::Vector3d position;
    Eigen::Vector3d normal;
};

// Angles rotating the global frame onto the local tangent frame.
struct RollPitch {
    double roll = 0.0;   // alpha, (-pi, pi]
    double pitch = 0.0;  // gamma, [-pi/2, pi/2]
};

// roll = atan2(n_y, n_z), pitch = atan2(-n_x, sqrt(n_y^2 + n_z^2)).
// Requires |n| = 1 within 1e-6 and n_z >= 0; throws NonUnitNormal otherwise.
RollPitch roll_pitch_from_normal(const Eigen::Vector3d& n);

struct TerrainSample {
    double height = 0.0;
    Eigen::Vector3d normal{0.0, 0.0, 1.0};
    double slope = 0.0;        // arccos(|n_z|), [0, pi/2]
    double orientation = 0.0;  // atan2(n_y, n_x), (-pi, pi]; 0 on flat cells
};

// Analytic height profile h(x, y) with its gradient; the catalog replaces
// the mesh pipeline when terrain is generated rather than measured.
struct AnalyticSurface {
    std::string name;
    std::function<double(double, double)> height;
    std::function<Eigen::Vector2d(double, double)> gradient;
};

// Known profiles: flat, tilted_plane, sinusoidal_hills, banked_ring, crater.
// Unknown profile names or parameter keys throw UnknownProfile.
AnalyticSurface make_surface(const std::string& profile,
                             const std::map<std::string, double>& params);

// Regular planar grid of height, unit normal, slope and orientation with
// bilinear queries. Immutable after construction; concurrent read-only
// queries are safe.
class TerrainGrid {
public:
    TerrainGrid() = default;

    // Scattered oriented points -> grid, by barycentric interpolation on a
    // Delaunay triangulation of the planar positions. Grid nodes outside the
    // convex hull take the value at the nearest hull point and are flagged.
    // The bounding box equals the points' planar bounding box exactly; the
    // requested spacing is snapped down so the box is covered by whole cells.
    static TerrainGrid from_points(std::span<const OrientedPoint> points,
                                   const Eigen::Vector2d& spacing);

    // Analytic catalog profile sampled over [min, max] with exact normals
    // derived from the gradient.
    static TerrainGrid from_catalog(const AnalyticSurface& surface, const Eigen::Vector2d& min,
                                    const Eigen::Vector2d& max, const Eigen::Vector2d& spacing);

    // Bilinear height/normal at p; the normal is renormalized and slope and
    // orientation are recomputed from it. Throws OutOfBounds outside the box.
    TerrainSample query(const Eigen::Vector2d& p) const;
    bool contains(const Eigen::Vector2d& p) const;
    RollPitch roll_pitch(const Eigen::Vector2d& p) const;

    const Eigen::Vector2d& origin() const { return origin_; }
    const Eigen::Vector2d& spacing() const { return spacing_; }
    Eigen::Vector2d max_corner() const {
        return origin_ + Eigen::Vector2d((nx_ - 1) * spacing_.x(), (ny_ - 1) * spacing_.y());
    }
    int nx() const { return nx_; }
    int ny() const { return ny_; }

    double height_at(int i, int j) const { return height_[idx(i, j)]; }
    Eigen::Vector3d normal_at(int i, int j) const {
        return {normal_x_[idx(i, j)], normal_y_[idx(i, j)], normal_z_[idx(i, j)]};
    }
    double slope_at(int i, int j) const { return slope_[idx(i, j)]; }
    double orientation_at(int i, int j) const { return orientation_[idx(i, j)]; }
    bool extrapolated_at(int i, int j) const { return extrapolated_[idx(i, j)] != 0; }

    // Number of queries that landed in hull-extrapolated cells (diagnostics).
    std::uint64_t extrapolated_query_count() const { return counter_->load(); }

    struct MapStats {
        double min_elevation = 0.0;
        double max_elevation = 0.0;
        double elevation_range = 0.0;
        double max_slope_deg = 0.0;
        double median_slope_deg = 0.0;
    };
    MapStats stats() const;

    // Binary "NPTG" container: 64-byte header (magic, version, origin,
    // spacing, dims) + row-major f64 height, n_x, n_y, n_z.
    void save(const std::filesystem::path& path) const;
    static TerrainGrid load(const std::filesystem::path& path);

private:
    std::size_t idx(int i, int j) const { return static_cast<std::size_t>(j) * nx_ + i; }
    void derive_angles();
    static TerrainGrid allocate(const Eigen::Vector2d& min, const Eigen::Vector2d& max,
                                const Eigen::Vector2d& spacing);

    Eigen::Vector2d origin_{0.0, 0.0};
    Eigen::Vector2d spacing_{1.0, 1.0};
    int nx_ = 0, ny_ = 0;
    std::vector<double> height_, normal_x_, normal_y_, normal_z_, slope_, orientation_;
    std::vector<std::uint8_t> extrapolated_;
    std::shared_ptr<std::atomic<std::uint64_t>> counter_ =
        std::make_shared<std::atomic<std::uint64_t>>(0);
};

// Plain-text point cloud: rows "x y z nx ny nz", '#' comments ignored.
std::vector<OrientedPoint> load_point_cloud(const std::filesystem::path& path);
void save_point_cloud(const std::filesystem::path& path, std::span<const OrientedPoint> points);

} // namespace nptrack
