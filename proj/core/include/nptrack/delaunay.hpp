#pragma once

#include <vector>

#include <Eigen/Core>

namespace nptrack {

// Planar Delaunay triangulation (Bowyer-Watson). Built once, then queried;
// sized for the point-cloud ingestion path (hundreds to a few thousand
// points), not for bulk meshing.
class Delaunay {
public:
    struct Triangle {
        int a, b, c;  // ccw vertex indices into points()
    };

    // Duplicate positions (within 1e-9) are dropped; the kept index order
    // follows first occurrence, so identical input yields identical output.
    explicit Delaunay(std::vector<Eigen::Vector2d> points);

    const std::vector<Eigen::Vector2d>& points() const { return points_; }
    const std::vector<Triangle>& triangles() const { return triangles_; }

    // Triangle containing p (barycentric tolerance 1e-10), with its
    // barycentric coordinates; -1 if p is outside the hull.
    int locate(const Eigen::Vector2d& p, Eigen::Vector3d* barycentric = nullptr) const;

    // Convex hull vertex indices in ccw order.
    const std::vector<int>& hull() const { return hull_; }

private:
    std::vector<Eigen::Vector2d> points_;
    std::vector<Triangle> triangles_;
    std::vector<int> hull_;
};

// Andrew's monotone chain; returns indices of hull vertices in ccw order.
// Collinear inputs yield a hull with fewer than 3 vertices.
std::vector<int> convex_hull(const std::vector<Eigen::Vector2d>& points);

} // namespace nptrack
