#include "nptrack/track.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "nptrack/errors.hpp"
#include "nptrack/util.hpp"

namespace nptrack {

namespace {

constexpr double kGravity = 9.81;

Eigen::Vector2d rotate90ccw(const Eigen::Vector2d& v) { return {-v.y(), v.x()}; }

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() * b.y() - a.y() * b.x();
}

// Menger curvature of three consecutive waypoints.
double curvature(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
    const double area2 = std::abs(cross2(b - a, c - a));
    const double d = (b - a).norm() * (c - b).norm() * (c - a).norm();
    return d > 1e-12 ? 2.0 * area2 / d : 0.0;
}

// Rounded closed polygon: straight segments joined by arcs of radius rc at
// each vertex (reflex corners arc the other way). Emits samples every ds.
std::vector<Eigen::Vector2d> rounded_polygon(const std::vector<Eigen::Vector2d>& verts, double rc,
                                             double ds) {
    const int n = static_cast<int>(verts.size());
    std::vector<Eigen::Vector2d> out;
    std::vector<Eigen::Vector2d> arc_in(n), arc_out(n), centers(n);
    std::vector<double> turns(n);
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector2d& prev = verts[(i + n - 1) % n];
        const Eigen::Vector2d& cur = verts[i];
        const Eigen::Vector2d& next = verts[(i + 1) % n];
        const Eigen::Vector2d din = (cur - prev).normalized();
        const Eigen::Vector2d dout = (next - cur).normalized();
        const double turn = std::atan2(cross2(din, dout), din.dot(dout));
        const double setback = rc * std::tan(std::abs(turn) / 2.0);
        arc_in[i] = cur - setback * din;
        arc_out[i] = cur + setback * dout;
        const double side = turn >= 0.0 ? 1.0 : -1.0;
        centers[i] = arc_in[i] + side * rc * rotate90ccw(din);
        turns[i] = turn;
    }
    for (int i = 0; i < n; ++i) {
        // straight run into corner i's arc
        const Eigen::Vector2d start = arc_out[(i + n - 1) % n];
        const Eigen::Vector2d end = arc_in[i];
        const double len = (end - start).norm();
        const int steps = std::max(1, static_cast<int>(std::floor(len / ds)));
        for (int k = 0; k < steps; ++k) {
            out.push_back(start + (static_cast<double>(k) / steps) * (end - start));
        }
        // arc around corner i
        const double a0 = std::atan2(arc_in[i].y() - centers[i].y(), arc_in[i].x() - centers[i].x());
        const double sweep = turns[i];
        const int asteps = std::max(1, static_cast<int>(std::ceil(std::abs(sweep) * rc / ds)));
        for (int k = 0; k < asteps; ++k) {
            const double ang = a0 + sweep * static_cast<double>(k) / asteps;
            out.push_back(centers[i] + rc * Eigen::Vector2d(std::cos(ang), std::sin(ang)));
        }
    }
    out.push_back(out.front());  // explicit closure
    return out;
}

std::vector<Eigen::Vector2d> shape_centerline(const std::string& shape, double scale, double ds) {
    std::vector<Eigen::Vector2d> pts;
    if (shape == "oval") {
        // Stadium: two straights of length 2a joined by semicircles of radius rc.
        const double a = 5.0 * scale;
        const double rc = 3.5 * scale;
        const int arc_steps = std::max(4, static_cast<int>(std::ceil(M_PI * rc / ds)));
        const int straight_steps = std::max(2, static_cast<int>(std::ceil(2.0 * a / ds)));
        for (int k = 0; k < straight_steps; ++k) {
            pts.emplace_back(-a + 2.0 * a * k / straight_steps, -rc);
        }
        for (int k = 0; k < arc_steps; ++k) {
            const double ang = -M_PI / 2.0 + M_PI * k / arc_steps;
            pts.emplace_back(a + rc * std::cos(ang), rc * std::sin(ang));
        }
        for (int k = 0; k < straight_steps; ++k) {
            pts.emplace_back(a - 2.0 * a * k / straight_steps, rc);
        }
        for (int k = 0; k < arc_steps; ++k) {
            const double ang = M_PI / 2.0 + M_PI * k / arc_steps;
            pts.emplace_back(-a + rc * std::cos(ang), rc * std::sin(ang));
        }
        pts.push_back(pts.front());
    } else if (shape == "kidney") {
        const double base = 4.5 * scale;
        const int steps = std::max(64, static_cast<int>(std::ceil(2.0 * M_PI * base * 1.3 / ds)));
        for (int k = 0; k < steps; ++k) {
            const double th = 2.0 * M_PI * k / steps;
            const double r = base * (1.0 + 0.35 * std::sin(th) - 0.22 * std::cos(2.0 * th));
            pts.emplace_back(r * std::cos(th), r * std::sin(th));
        }
        pts.push_back(pts.front());
    } else if (shape == "l_shape") {
        const std::vector<Eigen::Vector2d> skeleton = {
            {0.0, 0.0}, {14.0 * scale, 0.0},        {14.0 * scale, 5.0 * scale},
            {5.0 * scale, 5.0 * scale}, {5.0 * scale, 12.0 * scale}, {0.0, 12.0 * scale}};
        pts = rounded_polygon(skeleton, 1.8 * scale, ds);
    } else {
        throw UnknownShape("unknown track shape '" + shape + "' (known: kidney, l_shape, oval)");
    }
    return pts;
}

} // namespace

ReferenceTrajectory::ReferenceTrajectory(std::vector<Eigen::Vector2d> points,
                                         std::vector<double> speeds, bool closed)
    : points_(std::move(points)), speeds_(std::move(speeds)), closed_(closed) {
    if (points_.size() < 2 || speeds_.size() != points_.size()) {
        throw Error("reference trajectory needs >= 2 points with matching speeds");
    }
    if (closed_ && (points_.front() - points_.back()).norm() > 1e-9) {
        throw Error("closed reference trajectory must end at its start point");
    }
    cumulative_.resize(points_.size());
    cumulative_[0] = 0.0;
    for (std::size_t i = 1; i < points_.size(); ++i) {
        cumulative_[i] = cumulative_[i - 1] + (points_[i] - points_[i - 1]).norm();
    }
    if (!(length() > 0.0)) throw Error("reference trajectory has zero length");
}

RefPoint ReferenceTrajectory::at(double s) const {
    const double total = length();
    if (closed_) {
        s = std::fmod(s, total);
        if (s < 0.0) s += total;
    } else {
        s = std::clamp(s, 0.0, total);
    }
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
    std::size_t seg = it == cumulative_.begin()
                          ? 0
                          : std::min(points_.size() - 2,
                                     static_cast<std::size_t>(it - cumulative_.begin()) - 1);
    const double seg_len = cumulative_[seg + 1] - cumulative_[seg];
    const double t = seg_len > 0.0 ? (s - cumulative_[seg]) / seg_len : 0.0;
    const Eigen::Vector2d p = points_[seg] + t * (points_[seg + 1] - points_[seg]);
    const Eigen::Vector2d d = points_[seg + 1] - points_[seg];
    RefPoint ref;
    ref.px = p.x();
    ref.py = p.y();
    ref.v = speeds_[seg] + t * (speeds_[seg + 1] - speeds_[seg]);
    ref.psi = std::atan2(d.y(), d.x());
    return ref;
}

double ReferenceTrajectory::nearest_arclength(const Eigen::Vector2d& p) const {
    double best_d2 = std::numeric_limits<double>::infinity();
    double best_s = 0.0;
    for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
        const Eigen::Vector2d a = points_[i];
        const Eigen::Vector2d d = points_[i + 1] - a;
        const double len2 = d.squaredNorm();
        const double t = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
        const Eigen::Vector2d q = a + t * d;
        const double d2 = (p - q).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best_s = cumulative_[i] + t * std::sqrt(len2);
        }
    }
    return best_s;
}

std::vector<RefPoint> ReferenceTrajectory::slice(double s0, double progress_speed, double dt,
                                                 int count) const {
    std::vector<RefPoint> out;
    out.reserve(count);
    for (int k = 0; k < count; ++k) {
        out.push_back(at(s0 + progress_speed * dt * k));
    }
    return out;
}

void ReferenceTrajectory::save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "x,y,v,closed\n";
    for (std::size_t i = 0; i < points_.size(); ++i) {
        out << format_double(points_[i].x()) << ',' << format_double(points_[i].y()) << ','
            << format_double(speeds_[i]) << ',' << (closed_ ? 1 : 0) << '\n';
    }
}

ReferenceTrajectory ReferenceTrajectory::load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty reference file '" + path.string() + "'");
    std::vector<Eigen::Vector2d> pts;
    std::vector<double> speeds;
    bool closed = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        double vals[3];
        for (int c = 0; c < 3; ++c) {
            if (!std::getline(ss, cell, ',')) throw IoError("malformed reference row");
            vals[c] = std::strtod(cell.c_str(), nullptr);
        }
        if (std::getline(ss, cell, ',')) closed = cell == "1";
        pts.emplace_back(vals[0], vals[1]);
        speeds.push_back(vals[2]);
    }
    return ReferenceTrajectory(std::move(pts), std::move(speeds), closed);
}

double cross_track_error(const Eigen::Vector2d& p, const ReferenceTrajectory& path) {
    const auto& pts = path.points();
    double best_d2 = std::numeric_limits<double>::infinity();
    double signed_d = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const Eigen::Vector2d a = pts[i];
        const Eigen::Vector2d d = pts[i + 1] - a;
        const double len2 = d.squaredNorm();
        if (len2 == 0.0) continue;
        const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
        const Eigen::Vector2d q = a + t * d;
        const double d2 = (p - q).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            const double side = cross2(d, p - q);
            signed_d = (side >= 0.0 ? 1.0 : -1.0) * std::sqrt(d2);
        }
    }
    return signed_d;
}

GeneratedTrack generate_track(const std::string& shape, const std::string& profile,
                              std::map<std::string, double> profile_params,
                              const TrackGenConfig& cfg) {
    if (!(cfg.scale > 0.0)) throw Error("track scale must be positive");
    const auto pts = shape_centerline(shape, cfg.scale, cfg.waypoint_spacing);
    const std::size_t n = pts.size();

    // Curvature-capped speed, then an accel-feasibility forward/backward pass.
    const double a_lat = cfg.a_lat_frac * cfg.mu * kGravity;
    std::vector<double> speeds(n);
    for (std::size_t i = 0; i < n; ++i) {
        // closed polyline: last point duplicates the first
        const Eigen::Vector2d& prev = pts[(i + n - 2) % (n - 1)];
        const Eigen::Vector2d& cur = pts[i % (n - 1)];
        const Eigen::Vector2d& next = pts[(i + 1) % (n - 1)];
        const double kappa = curvature(prev, cur, next);
        speeds[i] = std::min(cfg.v_max, std::sqrt(a_lat / std::max(kappa, 1e-6)));
    }
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 1; i < n; ++i) {  // forward
            const double ds = (pts[i] - pts[i - 1]).norm();
            speeds[i] = std::min(speeds[i],
                                 std::sqrt(speeds[i - 1] * speeds[i - 1] + 2.0 * cfg.a_lon_max * ds));
        }
        for (std::size_t i = n - 1; i > 0; --i) {  // backward
            const double ds = (pts[i] - pts[i - 1]).norm();
            speeds[i - 1] = std::min(
                speeds[i - 1], std::sqrt(speeds[i] * speeds[i] + 2.0 * cfg.a_lon_max * ds));
        }
        speeds[0] = speeds[n - 1] = std::min(speeds[0], speeds[n - 1]);
    }

    Eigen::Vector2d lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Eigen::Vector2d center = 0.5 * (lo + hi);

    // Center ring/crater profiles on the track when not given explicitly.
    if (profile == "banked_ring" || profile == "crater") {
        if (!profile_params.count("cx")) profile_params["cx"] = center.x();
        if (!profile_params.count("cy")) profile_params["cy"] = center.y();
        if (profile == "banked_ring" && !profile_params.count("radius")) {
            double mean_r = 0.0;
            for (const auto& p : pts) mean_r += (p - center).norm();
            profile_params["radius"] = mean_r / static_cast<double>(n);
        }
    }

    GeneratedTrack track;
    track.reference = ReferenceTrajectory(pts, speeds, /*closed=*/true);
    const Eigen::Vector2d margin{cfg.margin, cfg.margin};
    track.terrain = TerrainGrid::from_catalog(make_surface(profile, profile_params), lo - margin,
                                              hi + margin, cfg.grid_spacing);
    return track;
}

void write_map_stats(const std::filesystem::path& path, const TerrainGrid::MapStats& stats) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "min_elevation_m = " << format_double(stats.min_elevation) << '\n'
        << "max_elevation_m = " << format_double(stats.max_elevation) << '\n'
        << "elevation_range_m = " << format_double(stats.elevation_range) << '\n'
        << "max_slope_deg = " << format_double(stats.max_slope_deg) << '\n'
        << "median_slope_deg = " << format_double(stats.median_slope_deg) << '\n';
}

} // namespace nptrack
