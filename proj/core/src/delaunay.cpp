#include "nptrack/delaunay.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

namespace nptrack {

namespace {

double cross2(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// > 0 when p lies inside the circumcircle of ccw triangle (a, b, c).
double incircle(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c,
                const Eigen::Vector2d& p) {
    const double ax = a.x() - p.x(), ay = a.y() - p.y();
    const double bx = b.x() - p.x(), by = b.y() - p.y();
    const double cx = c.x() - p.x(), cy = c.y() - p.y();
    const double a2 = ax * ax + ay * ay;
    const double b2 = bx * bx + by * by;
    const double c2 = cx * cx + cy * cy;
    return ax * (by * c2 - b2 * cy) - ay * (bx * c2 - b2 * cx) + a2 * (bx * cy - by * cx);
}

} // namespace

std::vector<int> convex_hull(const std::vector<Eigen::Vector2d>& points) {
    const int n = static_cast<int>(points.size());
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int i, int j) {
        if (points[i].x() != points[j].x()) return points[i].x() < points[j].x();
        return points[i].y() < points[j].y();
    });

    std::vector<int> hull(2 * n);
    int k = 0;
    for (int ii = 0; ii < n; ++ii) {  // lower chain
        const int i = order[ii];
        while (k >= 2 && cross2(points[hull[k - 2]], points[hull[k - 1]], points[i]) <= 0.0) --k;
        hull[k++] = i;
    }
    for (int ii = n - 2, lower = k + 1; ii >= 0; --ii) {  // upper chain
        const int i = order[ii];
        while (k >= lower && cross2(points[hull[k - 2]], points[hull[k - 1]], points[i]) <= 0.0) --k;
        hull[k++] = i;
    }
    hull.resize(k > 1 ? k - 1 : k);
    return hull;
}

Delaunay::Delaunay(std::vector<Eigen::Vector2d> points) {
    points_.reserve(points.size());
    for (const auto& p : points) {
        bool dup = false;
        for (const auto& q : points_) {
            if ((p - q).squaredNorm() < 1e-18) {
                dup = true;
                break;
            }
        }
        if (!dup) points_.push_back(p);
    }

    hull_ = convex_hull(points_);
    if (hull_.size() < 3) return;  // collinear; caller decides how to fail

    // Super-triangle comfortably containing the data.
    Eigen::Vector2d lo = points_[0], hi = points_[0];
    for (const auto& p : points_) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Eigen::Vector2d mid = 0.5 * (lo + hi);
    const double span = std::max((hi - lo).maxCoeff(), 1.0) * 64.0;
    const int n = static_cast<int>(points_.size());
    std::vector<Eigen::Vector2d> verts = points_;
    verts.push_back(mid + Eigen::Vector2d(-span, -span));
    verts.push_back(mid + Eigen::Vector2d(span, -span));
    verts.push_back(mid + Eigen::Vector2d(0.0, span));

    struct Tri {
        int a, b, c;
        bool alive = true;
    };
    std::vector<Tri> tris;
    tris.push_back({n, n + 1, n + 2});

    std::vector<int> bad;
    std::map<std::pair<int, int>, int> edge_count;
    for (int ip = 0; ip < n; ++ip) {
        const Eigen::Vector2d& p = verts[ip];
        bad.clear();
        for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
            if (!tris[t].alive) continue;
            if (incircle(verts[tris[t].a], verts[tris[t].b], verts[tris[t].c], p) > 0.0) {
                bad.push_back(t);
            }
        }
        edge_count.clear();
        auto add_edge = [&](int u, int v) {
            auto key = std::minmax(u, v);
            edge_count[{key.first, key.second}] += 1;
        };
        for (int t : bad) {
            add_edge(tris[t].a, tris[t].b);
            add_edge(tris[t].b, tris[t].c);
            add_edge(tris[t].c, tris[t].a);
            tris[t].alive = false;
        }
        // Boundary edges of the cavity appear exactly once.
        for (const auto& [edge, count] : edge_count) {
            if (count != 1) continue;
            int u = edge.first, v = edge.second;
            if (cross2(verts[u], verts[v], p) < 0.0) std::swap(u, v);
            tris.push_back({u, v, ip});
        }
    }

    for (const auto& t : tris) {
        if (!t.alive) continue;
        if (t.a >= n || t.b >= n || t.c >= n) continue;  // touches the super-triangle
        triangles_.push_back({t.a, t.b, t.c});
    }
}

int Delaunay::locate(const Eigen::Vector2d& p, Eigen::Vector3d* barycentric) const {
    constexpr double tol = -1e-10;
    for (int t = 0; t < static_cast<int>(triangles_.size()); ++t) {
        const auto& tri = triangles_[t];
        const Eigen::Vector2d& a = points_[tri.a];
        const Eigen::Vector2d& b = points_[tri.b];
        const Eigen::Vector2d& c = points_[tri.c];
        const double area = cross2(a, b, c);
        if (area == 0.0) continue;
        const double wa = cross2(b, c, p) / area;
        const double wb = cross2(c, a, p) / area;
        const double wc = cross2(a, b, p) / area;
        if (wa >= tol && wb >= tol && wc >= tol) {
            if (barycentric) *barycentric = {wa, wb, wc};
            return t;
        }
    }
    return -1;
}

} // namespace nptrack
