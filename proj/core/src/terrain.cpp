#include "nptrack/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "nptrack/delaunay.hpp"

namespace nptrack {

namespace {

constexpr char kMagic[4] = {'N', 'P', 'T', 'G'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 64;

double maybe(const std::map<std::string, double>& params, const std::string& key, double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

void check_param_keys(const std::string& profile, const std::map<std::string, double>& params,
                      std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : params) {
        (void)value;
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* k) { return key == k; }) == allowed.end()) {
            throw UnknownProfile("profile '" + profile + "': unknown parameter '" + key + "'");
        }
    }
}

// Closest point to p on segment [a, b], as interpolation parameter t.
double segment_param(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                     const Eigen::Vector2d& p) {
    const Eigen::Vector2d d = b - a;
    const double len2 = d.squaredNorm();
    if (len2 == 0.0) return 0.0;
    return std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
}

} // namespace

RollPitch roll_pitch_from_normal(const Eigen::Vector3d& n) {
    if (!n.allFinite() || std::abs(n.norm() - 1.0) > 1e-6 || n.z() < 0.0) {
        throw NonUnitNormal("roll_pitch_from_normal: need a unit normal with n_z >= 0");
    }
    return {std::atan2(n.y(), n.z()),
            std::atan2(-n.x(), std::sqrt(n.y() * n.y() + n.z() * n.z()))};
}

AnalyticSurface make_surface(const std::string& profile,
                             const std::map<std::string, double>& params) {
    AnalyticSurface s;
    s.name = profile;
    if (profile == "flat") {
        check_param_keys(profile, params, {});
        s.height = [](double, double) { return 0.0; };
        s.gradient = [](double, double) { return Eigen::Vector2d::Zero().eval(); };
    } else if (profile == "tilted_plane") {
        check_param_keys(profile, params, {"slope_deg", "direction_deg"});
        const double slope = maybe(params, "slope_deg", 10.0) * M_PI / 180.0;
        const double dir = maybe(params, "direction_deg", 0.0) * M_PI / 180.0;
        const double gx = std::tan(slope) * std::cos(dir);
        const double gy = std::tan(slope) * std::sin(dir);
        s.height = [gx, gy](double x, double y) { return gx * x + gy * y; };
        s.gradient = [gx, gy](double, double) { return Eigen::Vector2d(gx, gy); };
    } else if (profile == "sinusoidal_hills") {
        check_param_keys(profile, params, {"amp", "kx", "ky"});
        const double amp = maybe(params, "amp", 1.0);
        const double kx = maybe(params, "kx", 0.5);
        const double ky = maybe(params, "ky", 0.0);
        s.height = [=](double x, double y) { return amp * std::sin(kx * x) * std::cos(ky * y); };
        s.gradient = [=](double x, double y) {
            return Eigen::Vector2d(amp * kx * std::cos(kx * x) * std::cos(ky * y),
                                   -amp * ky * std::sin(kx * x) * std::sin(ky * y));
        };
    } else if (profile == "banked_ring") {
        check_param_keys(profile, params, {"bank_deg", "radius", "width", "cx", "cy"});
        const double bank = maybe(params, "bank_deg", 15.0) * M_PI / 180.0;
        const double r0 = maybe(params, "radius", 10.0);
        const double w = maybe(params, "width", 3.0);
        const double cx = maybe(params, "cx", 0.0);
        const double cy = maybe(params, "cy", 0.0);
        const double t = std::tan(bank);
        // h rises at tan(bank) across the ring r = r0 and levels off within
        // a few widths, so the slope peaks at exactly the bank angle.
        s.height = [=](double x, double y) {
            const double r = std::hypot(x - cx, y - cy);
            return t * w * std::tanh((r - r0) / w);
        };
        s.gradient = [=](double x, double y) {
            const double dx = x - cx, dy = y - cy;
            const double r = std::hypot(dx, dy);
            if (r < 1e-12) return Eigen::Vector2d::Zero().eval();
            const double sech = 1.0 / std::cosh((r - r0) / w);
            const double dh_dr = t * sech * sech;
            return Eigen::Vector2d(dh_dr * dx / r, dh_dr * dy / r);
        };
    } else if (profile == "crater") {
        check_param_keys(profile, params, {"depth", "sigma", "cx", "cy"});
        const double depth = maybe(params, "depth", 2.0);
        const double sigma = maybe(params, "sigma", 5.0);
        const double cx = maybe(params, "cx", 0.0);
        const double cy = maybe(params, "cy", 0.0);
        s.height = [=](double x, double y) {
            const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            return -depth * std::exp(-r2 / (2.0 * sigma * sigma));
        };
        s.gradient = [=](double x, double y) {
            const double dx = x - cx, dy = y - cy;
            const double e = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            const double k = depth * e / (sigma * sigma);
            return Eigen::Vector2d(k * dx, k * dy);
        };
    } else {
        throw UnknownProfile("unknown terrain profile '" + profile +
                             "' (known: flat, tilted_plane, sinusoidal_hills, banked_ring, crater)");
    }
    return s;
}

TerrainGrid TerrainGrid::allocate(const Eigen::Vector2d& min, const Eigen::Vector2d& max,
                                  const Eigen::Vector2d& spacing) {
    if (!min.allFinite() || !max.allFinite() || !(max.x() > min.x()) || !(max.y() > min.y())) {
        throw InvalidBounds("terrain bounds must be finite with max > min");
    }
    if (!(spacing.x() > 0.0) || !(spacing.y() > 0.0)) {
        throw InvalidBounds("terrain spacing must be positive");
    }
    TerrainGrid g;
    g.nx_ = std::max(2, static_cast<int>(std::ceil((max.x() - min.x()) / spacing.x() - 1e-9)) + 1);
    g.ny_ = std::max(2, static_cast<int>(std::ceil((max.y() - min.y()) / spacing.y() - 1e-9)) + 1);
    g.origin_ = min;
    g.spacing_ = {(max.x() - min.x()) / (g.nx_ - 1), (max.y() - min.y()) / (g.ny_ - 1)};
    const std::size_t n = static_cast<std::size_t>(g.nx_) * g.ny_;
    g.height_.assign(n, 0.0);
    g.normal_x_.assign(n, 0.0);
    g.normal_y_.assign(n, 0.0);
    g.normal_z_.assign(n, 1.0);
    g.slope_.assign(n, 0.0);
    g.orientation_.assign(n, 0.0);
    g.extrapolated_.assign(n, 0);
    return g;
}

void TerrainGrid::derive_angles() {
    const std::size_t n = height_.size();
    for (std::size_t k = 0; k < n; ++k) {
        Eigen::Vector3d nv{normal_x_[k], normal_y_[k], normal_z_[k]};
        const double norm = nv.norm();
        if (!(norm > 0.0) || !nv.allFinite()) {
            throw NonFiniteInput("terrain grid: degenerate normal at node " + std::to_string(k));
        }
        nv /= norm;
        if (nv.z() < 0.0) nv = -nv;
        normal_x_[k] = nv.x();
        normal_y_[k] = nv.y();
        normal_z_[k] = nv.z();
        slope_[k] = std::acos(std::clamp(std::abs(nv.z()), 0.0, 1.0));
        orientation_[k] = std::atan2(nv.y(), nv.x());
    }
}

TerrainGrid TerrainGrid::from_points(std::span<const OrientedPoint> points,
                                     const Eigen::Vector2d& spacing) {
    if (points.size() < 3) {
        throw DegenerateCloud("need at least 3 points");
    }
    std::vector<Eigen::Vector2d> plan;
    plan.reserve(points.size());
    for (const auto& pt : points) {
        if (!pt.position.allFinite() || !pt.normal.allFinite()) {
            throw NonFiniteInput("point cloud contains non-finite values");
        }
        plan.emplace_back(pt.position.x(), pt.position.y());
    }

    // Ingested normals: renormalize and flip so n_z >= 0.
    std::vector<Eigen::Vector3d> normals(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        Eigen::Vector3d nv = points[i].normal;
        const double norm = nv.norm();
        if (!(norm > 1e-12)) throw NonFiniteInput("point cloud contains a zero normal");
        nv /= norm;
        normals[i] = nv.z() < 0.0 ? Eigen::Vector3d(-nv) : nv;
    }

    Delaunay tri(plan);
    if (tri.triangles().empty()) {
        throw DegenerateCloud("planar positions are collinear");
    }

    Eigen::Vector2d lo = plan[0], hi = plan[0];
    for (const auto& p : plan) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    TerrainGrid g = allocate(lo, hi, spacing);

    // Index from the deduplicated triangulation points back to the inputs.
    const auto& tp = tri.points();
    std::vector<std::size_t> src(tp.size());
    for (std::size_t i = 0; i < tp.size(); ++i) {
        for (std::size_t j = 0; j < plan.size(); ++j) {
            if ((tp[i] - plan[j]).squaredNorm() < 1e-18) {
                src[i] = j;
                break;
            }
        }
    }
    auto value_at = [&](int vtx, int field) -> double {
        const std::size_t j = src[vtx];
        switch (field) {
            case 0: return points[j].position.z();
            case 1: return normals[j].x();
            case 2: return normals[j].y();
            default: return normals[j].z();
        }
    };

    std::vector<std::uint8_t> filled(g.height_.size(), 0);

    // Rasterize each triangle over the grid nodes its bbox covers.
    for (const auto& t : tri.triangles()) {
        const Eigen::Vector2d& a = tp[t.a];
        const Eigen::Vector2d& b = tp[t.b];
        const Eigen::Vector2d& c = tp[t.c];
        const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
        if (area == 0.0) continue;
        const double xmin = std::min({a.x(), b.x(), c.x()}), xmax = std::max({a.x(), b.x(), c.x()});
        const double ymin = std::min({a.y(), b.y(), c.y()}), ymax = std::max({a.y(), b.y(), c.y()});
        const int i0 = std::max(0, static_cast<int>(std::floor((xmin - g.origin_.x()) / g.spacing_.x())));
        const int i1 = std::min(g.nx_ - 1, static_cast<int>(std::ceil((xmax - g.origin_.x()) / g.spacing_.x())));
        const int j0 = std::max(0, static_cast<int>(std::floor((ymin - g.origin_.y()) / g.spacing_.y())));
        const int j1 = std::min(g.ny_ - 1, static_cast<int>(std::ceil((ymax - g.origin_.y()) / g.spacing_.y())));
        for (int j = j0; j <= j1; ++j) {
            for (int i = i0; i <= i1; ++i) {
                const Eigen::Vector2d p = g.origin_ + Eigen::Vector2d(i * g.spacing_.x(), j * g.spacing_.y());
                const double wa = ((b.x() - p.x()) * (c.y() - p.y()) - (b.y() - p.y()) * (c.x() - p.x())) / area;
                const double wb = ((c.x() - p.x()) * (a.y() - p.y()) - (c.y() - p.y()) * (a.x() - p.x())) / area;
                const double wc = 1.0 - wa - wb;
                if (wa < -1e-10 || wb < -1e-10 || wc < -1e-10) continue;
                const std::size_t k = g.idx(i, j);
                g.height_[k] = wa * value_at(t.a, 0) + wb * value_at(t.b, 0) + wc * value_at(t.c, 0);
                g.normal_x_[k] = wa * value_at(t.a, 1) + wb * value_at(t.b, 1) + wc * value_at(t.c, 1);
                g.normal_y_[k] = wa * value_at(t.a, 2) + wb * value_at(t.b, 2) + wc * value_at(t.c, 2);
                g.normal_z_[k] = wa * value_at(t.a, 3) + wb * value_at(t.b, 3) + wc * value_at(t.c, 3);
                filled[k] = 1;
            }
        }
    }

    // Nodes outside the hull: take the nearest point on the hull boundary
    // (linear along the hull edge) and flag the node.
    const auto& hull = tri.hull();
    for (int j = 0; j < g.ny_; ++j) {
        for (int i = 0; i < g.nx_; ++i) {
            const std::size_t k = g.idx(i, j);
            if (filled[k]) continue;
            const Eigen::Vector2d p = g.origin_ + Eigen::Vector2d(i * g.spacing_.x(), j * g.spacing_.y());
            double best = std::numeric_limits<double>::infinity();
            int best_u = hull[0], best_v = hull[0];
            double best_t = 0.0;
            for (std::size_t e = 0; e < hull.size(); ++e) {
                const int u = hull[e];
                const int v = hull[(e + 1) % hull.size()];
                const double tpar = segment_param(tp[u], tp[v], p);
                const Eigen::Vector2d q = tp[u] + tpar * (tp[v] - tp[u]);
                const double d2 = (p - q).squaredNorm();
                if (d2 < best) {
                    best = d2;
                    best_u = u;
                    best_v = v;
                    best_t = tpar;
                }
            }
            for (int f = 0; f < 4; ++f) {
                const double val = (1.0 - best_t) * value_at(best_u, f) + best_t * value_at(best_v, f);
                (f == 0 ? g.height_ : f == 1 ? g.normal_x_ : f == 2 ? g.normal_y_ : g.normal_z_)[k] = val;
            }
            g.extrapolated_[k] = 1;
        }
    }

    g.derive_angles();
    return g;
}

TerrainGrid TerrainGrid::from_catalog(const AnalyticSurface& surface, const Eigen::Vector2d& min,
                                      const Eigen::Vector2d& max, const Eigen::Vector2d& spacing) {
    TerrainGrid g = allocate(min, max, spacing);
    for (int j = 0; j < g.ny_; ++j) {
        for (int i = 0; i < g.nx_; ++i) {
            const double x = g.origin_.x() + i * g.spacing_.x();
            const double y = g.origin_.y() + j * g.spacing_.y();
            const std::size_t k = g.idx(i, j);
            g.height_[k] = surface.height(x, y);
            const Eigen::Vector2d grad = surface.gradient(x, y);
            g.normal_x_[k] = -grad.x();
            g.normal_y_[k] = -grad.y();
            g.normal_z_[k] = 1.0;
        }
    }
    g.derive_angles();
    return g;
}

bool TerrainGrid::contains(const Eigen::Vector2d& p) const {
    if (nx_ < 2 || ny_ < 2) return false;
    const Eigen::Vector2d hi = max_corner();
    return p.x() >= origin_.x() && p.x() <= hi.x() && p.y() >= origin_.y() && p.y() <= hi.y();
}

TerrainSample TerrainGrid::query(const Eigen::Vector2d& p) const {
    if (!contains(p)) {
        throw OutOfBounds("terrain query outside grid bounds");
    }
    const double fx = (p.x() - origin_.x()) / spacing_.x();
    const double fy = (p.y() - origin_.y()) / spacing_.y();
    const int i0 = std::min(static_cast<int>(fx), nx_ - 2);
    const int j0 = std::min(static_cast<int>(fy), ny_ - 2);
    const double tx = fx - i0;
    const double ty = fy - j0;
    const double w00 = (1.0 - tx) * (1.0 - ty);
    const double w10 = tx * (1.0 - ty);
    const double w01 = (1.0 - tx) * ty;
    const double w11 = tx * ty;
    const std::size_t k00 = idx(i0, j0), k10 = idx(i0 + 1, j0);
    const std::size_t k01 = idx(i0, j0 + 1), k11 = idx(i0 + 1, j0 + 1);

    TerrainSample s;
    s.height = w00 * height_[k00] + w10 * height_[k10] + w01 * height_[k01] + w11 * height_[k11];
    Eigen::Vector3d nv{
        w00 * normal_x_[k00] + w10 * normal_x_[k10] + w01 * normal_x_[k01] + w11 * normal_x_[k11],
        w00 * normal_y_[k00] + w10 * normal_y_[k10] + w01 * normal_y_[k01] + w11 * normal_y_[k11],
        w00 * normal_z_[k00] + w10 * normal_z_[k10] + w01 * normal_z_[k01] + w11 * normal_z_[k11]};
    nv /= nv.norm();
    s.normal = nv;
    s.slope = std::acos(std::clamp(std::abs(nv.z()), 0.0, 1.0));
    s.orientation = std::atan2(nv.y(), nv.x());

    if (extrapolated_[k00] || extrapolated_[k10] || extrapolated_[k01] || extrapolated_[k11]) {
        counter_->fetch_add(1, std::memory_order_relaxed);
    }
    return s;
}

RollPitch TerrainGrid::roll_pitch(const Eigen::Vector2d& p) const {
    return roll_pitch_from_normal(query(p).normal);
}

TerrainGrid::MapStats TerrainGrid::stats() const {
    MapStats st;
    st.min_elevation = *std::min_element(height_.begin(), height_.end());
    st.max_elevation = *std::max_element(height_.begin(), height_.end());
    st.elevation_range = st.max_elevation - st.min_elevation;
    st.max_slope_deg = *std::max_element(slope_.begin(), slope_.end()) * 180.0 / M_PI;
    std::vector<double> s = slope_;
    const std::size_t mid = s.size() / 2;
    std::nth_element(s.begin(), s.begin() + mid, s.end());
    double median = s[mid];
    if (s.size() % 2 == 0) {
        median = 0.5 * (median + *std::max_element(s.begin(), s.begin() + mid));
    }
    st.median_slope_deg = median * 180.0 / M_PI;
    return st;
}

void TerrainGrid::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    char header[kHeaderBytes] = {};
    std::memcpy(header, kMagic, 4);
    std::memcpy(header + 4, &kVersion, 4);
    double geo[4] = {origin_.x(), origin_.y(), spacing_.x(), spacing_.y()};
    std::memcpy(header + 8, geo, sizeof(geo));
    std::uint32_t dims[2] = {static_cast<std::uint32_t>(nx_), static_cast<std::uint32_t>(ny_)};
    std::memcpy(header + 40, dims, sizeof(dims));
    out.write(header, kHeaderBytes);
    auto write_array = [&](const std::vector<double>& a) {
        out.write(reinterpret_cast<const char*>(a.data()),
                  static_cast<std::streamsize>(a.size() * sizeof(double)));
    };
    write_array(height_);
    write_array(normal_x_);
    write_array(normal_y_);
    write_array(normal_z_);
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

TerrainGrid TerrainGrid::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    char header[kHeaderBytes];
    in.read(header, kHeaderBytes);
    if (!in || std::memcmp(header, kMagic, 4) != 0) {
        throw IoError("'" + path.string() + "' is not a terrain (NPTG) file");
    }
    std::uint32_t version;
    std::memcpy(&version, header + 4, 4);
    if (version != kVersion) throw IoError("unsupported NPTG version");
    double geo[4];
    std::memcpy(geo, header + 8, sizeof(geo));
    std::uint32_t dims[2];
    std::memcpy(dims, header + 40, sizeof(dims));

    TerrainGrid g;
    g.origin_ = {geo[0], geo[1]};
    g.spacing_ = {geo[2], geo[3]};
    g.nx_ = static_cast<int>(dims[0]);
    g.ny_ = static_cast<int>(dims[1]);
    if (g.nx_ < 2 || g.ny_ < 2 || !(g.spacing_.x() > 0.0) || !(g.spacing_.y() > 0.0)) {
        throw IoError("NPTG header has invalid dims or spacing");
    }
    const std::size_t n = static_cast<std::size_t>(g.nx_) * g.ny_;
    auto read_array = [&](std::vector<double>& a) {
        a.resize(n);
        in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(n * sizeof(double)));
    };
    read_array(g.height_);
    read_array(g.normal_x_);
    read_array(g.normal_y_);
    read_array(g.normal_z_);
    if (!in) throw IoError("truncated NPTG file '" + path.string() + "'");
    g.slope_.assign(n, 0.0);
    g.orientation_.assign(n, 0.0);
    g.extrapolated_.assign(n, 0);
    g.derive_angles();
    return g;
}

std::vector<OrientedPoint> load_point_cloud(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<OrientedPoint> points;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        OrientedPoint pt;
        if (!(ss >> pt.position.x())) continue;  // blank / comment-only line
        if (!(ss >> pt.position.y() >> pt.position.z() >> pt.normal.x() >> pt.normal.y() >>
              pt.normal.z())) {
            throw IoError("malformed point cloud row at " + path.string() + ":" +
                          std::to_string(lineno));
        }
        points.push_back(pt);
    }
    return points;
}

void save_point_cloud(const std::filesystem::path& path, std::span<const OrientedPoint> points) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "# x y z nx ny nz\n";
    out.precision(17);
    for (const auto& p : points) {
        out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' '
            << p.normal.x() << ' ' << p.normal.y() << ' ' << p.normal.z() << '\n';
    }
}

} // namespace nptrack
