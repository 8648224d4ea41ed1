#include "nptrack/terrain.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include "nptrack/delaunay.hpp"

namespace nptrack {
namespace {

Eigen::Vector3d plane_normal(double gx, double gy) {
    return Eigen::Vector3d(-gx, -gy, 1.0).normalized();
}

TEST(Terrain, TiltedPlaneFromCornerPoints) {
    // z = 0.1 x: linear interpolation reproduces linear fields exactly
    const double g = std::atan(0.1);
    const Eigen::Vector3d n{-std::sin(g), 0.0, std::cos(g)};
    std::vector<OrientedPoint> pts;
    for (double x : {0.0, 10.0}) {
        for (double y : {0.0, 10.0}) {
            pts.push_back({{x, y, 0.1 * x}, n});
        }
    }
    const TerrainGrid grid = TerrainGrid::from_points(pts, {1.0, 1.0});
    for (int j = 0; j < grid.ny(); ++j) {
        for (int i = 0; i < grid.nx(); ++i) {
            EXPECT_NEAR((grid.normal_at(i, j) - n).norm(), 0.0, 1e-12);
            EXPECT_NEAR(grid.slope_at(i, j), g, 1e-12);
        }
    }
}

TEST(Terrain, DownwardNormalsAreFlippedOnIngestion) {
    std::vector<OrientedPoint> pts = {
        {{0, 0, 0}, {0, 0, -1}}, {{1, 0, 0}, {0, 0, -1}},
        {{0, 1, 0}, {0, 0, -1}}, {{1, 1, 0}, {0, 0, -1}},
    };
    const TerrainGrid grid = TerrainGrid::from_points(pts, {0.5, 0.5});
    EXPECT_EQ(grid.normal_at(0, 0), Eigen::Vector3d(0, 0, 1));
}

// Oracle: exact barycentric interpolation on the same triangulation.
TEST(Terrain, ScatteredCloudMatchesTriangulationOracle) {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> coord(0.0, 10.0);
    std::vector<OrientedPoint> pts;
    std::vector<Eigen::Vector2d> plan;
    for (int k = 0; k < 500; ++k) {
        const double x = coord(rng), y = coord(rng);
        const Eigen::Vector3d n = plane_normal(std::cos(x) * std::cos(y), -std::sin(x) * std::sin(y));
        pts.push_back({{x, y, std::sin(x) * std::cos(y)}, n});
        plan.emplace_back(x, y);
    }
    const TerrainGrid grid = TerrainGrid::from_points(pts, {0.25, 0.25});

    const Delaunay tri(plan);
    auto oracle_height = [&](const Eigen::Vector2d& p) -> std::pair<bool, double> {
        Eigen::Vector3d w;
        const int t = tri.locate(p, &w);
        if (t < 0) return {false, 0.0};
        const auto& tr = tri.triangles()[t];
        auto z = [&](int v) {
            const auto& q = tri.points()[v];
            return std::sin(q.x()) * std::cos(q.y());
        };
        return {true, w[0] * z(tr.a) + w[1] * z(tr.b) + w[2] * z(tr.c)};
    };

    double max_grid_err = 0.0, max_oracle_err = 0.0, max_diff = 0.0;
    int centers = 0;
    for (int j = 0; j + 1 < grid.ny(); ++j) {
        for (int i = 0; i + 1 < grid.nx(); ++i) {
            const Eigen::Vector2d c = grid.origin() +
                Eigen::Vector2d((i + 0.5) * grid.spacing().x(), (j + 0.5) * grid.spacing().y());
            const auto [inside, oracle] = oracle_height(c);
            if (!inside) continue;
            ++centers;
            const double queried = grid.query(c).height;
            const double analytic = std::sin(c.x()) * std::cos(c.y());
            max_grid_err = std::max(max_grid_err, std::abs(queried - analytic));
            max_oracle_err = std::max(max_oracle_err, std::abs(oracle - analytic));
            max_diff = std::max(max_diff, std::abs(queried - oracle));
        }
    }
    EXPECT_GT(centers, 1000);
    // bilinear-of-PL differs from PL only across triangle edges
    EXPECT_LT(max_diff, 0.05);
    EXPECT_LT(max_grid_err, max_oracle_err + 0.05);
}

TEST(Terrain, DegenerateCloudAndBadInputs) {
    std::vector<OrientedPoint> collinear;
    for (int k = 0; k < 5; ++k) {
        collinear.push_back({{static_cast<double>(k), 2.0 * k, 0.0}, {0, 0, 1}});
    }
    EXPECT_THROW(TerrainGrid::from_points(collinear, {0.5, 0.5}), DegenerateCloud);
    const std::vector<OrientedPoint> single = {collinear[0]};
    EXPECT_THROW(TerrainGrid::from_points(single, {0.5, 0.5}), DegenerateCloud);

    std::vector<OrientedPoint> bad = {
        {{0, 0, 0}, {0, 0, 1}}, {{1, 0, 0}, {0, 0, 1}}, {{0, 1, std::nan("")}, {0, 0, 1}}};
    EXPECT_THROW(TerrainGrid::from_points(bad, {0.5, 0.5}), NonFiniteInput);
}

TEST(Terrain, CatalogFlat) {
    const TerrainGrid g =
        TerrainGrid::from_catalog(make_surface("flat", {}), {-5, -5}, {5, 5}, {0.5, 0.5});
    const TerrainSample s = g.query({0.37, -2.11});
    EXPECT_EQ(s.height, 0.0);
    EXPECT_EQ(s.normal, Eigen::Vector3d(0, 0, 1));
    EXPECT_EQ(s.slope, 0.0);
    EXPECT_EQ(s.orientation, 0.0);  // atan2(0, 0) convention
}

TEST(Terrain, CatalogTiltedPlane) {
    const TerrainGrid g = TerrainGrid::from_catalog(
        make_surface("tilted_plane", {{"slope_deg", 10.0}}), {-5, -5}, {5, 5}, {0.5, 0.5});
    const double expected = 10.0 * M_PI / 180.0;
    for (int j = 0; j < g.ny(); ++j) {
        for (int i = 0; i < g.nx(); ++i) {
            EXPECT_NEAR(g.slope_at(i, j), expected, 1e-12);
            EXPECT_NEAR(g.orientation_at(i, j), M_PI, 1e-12);
        }
    }
    // bilinear is exact on affine fields: mid-cell height matches the plane
    const double h = g.query({0.62, 1.13}).height;
    EXPECT_NEAR(h, std::tan(expected) * 0.62, 1e-12);
}

// Oracle: dense scan of the analytic slope over x.
TEST(Terrain, CatalogSinusoidalMaxSlope) {
    const double amp = 1.0, k = 0.5;
    const TerrainGrid g = TerrainGrid::from_catalog(
        make_surface("sinusoidal_hills", {{"amp", amp}, {"kx", k}}), {0, 0}, {30, 4}, {0.05, 0.5});
    double grid_max = 0.0;
    for (int j = 0; j < g.ny(); ++j) {
        for (int i = 0; i < g.nx(); ++i) grid_max = std::max(grid_max, g.slope_at(i, j));
    }
    double oracle_max = 0.0;
    for (double x = 0.0; x <= 30.0; x += 1e-4) {
        oracle_max = std::max(oracle_max, std::atan(amp * k * std::abs(std::cos(k * x))));
    }
    EXPECT_NEAR(oracle_max, std::atan(amp * k), 1e-7);
    EXPECT_NEAR(grid_max, std::atan(amp * k), 1e-3);
    EXPECT_NEAR(std::atan(amp * k), 0.4636, 1e-4);
    EXPECT_LE(grid_max, std::atan(amp * k) + 1e-12);
}

TEST(Terrain, CatalogErrors) {
    EXPECT_THROW(make_surface("volcano", {}), UnknownProfile);
    EXPECT_THROW(make_surface("flat", {{"amp", 1.0}}), UnknownProfile);
    EXPECT_THROW(
        TerrainGrid::from_catalog(make_surface("flat", {}), {0, 0}, {0, 5}, {0.5, 0.5}),
        InvalidBounds);
    EXPECT_THROW(
        TerrainGrid::from_catalog(make_surface("flat", {}), {0, 0}, {5, 5}, {-0.5, 0.5}),
        InvalidBounds);
}

TEST(Terrain, QueryAtNodeReturnsStoredValues) {
    const TerrainGrid g = TerrainGrid::from_catalog(
        make_surface("sinusoidal_hills", {{"amp", 2.0}, {"kx", 0.7}, {"ky", 0.4}}), {0, 0},
        {10, 10}, {0.5, 0.5});
    for (int j : {0, 3, 20}) {
        for (int i : {0, 7, 20}) {
            const Eigen::Vector2d p =
                g.origin() + Eigen::Vector2d(i * g.spacing().x(), j * g.spacing().y());
            const TerrainSample s = g.query(p);
            EXPECT_EQ(s.height, g.height_at(i, j));
            EXPECT_EQ(s.normal, g.normal_at(i, j));
            EXPECT_EQ(s.slope, g.slope_at(i, j));
        }
    }
}

TEST(Terrain, QueryInvariantsOnRandomPoints) {
    const TerrainGrid g = TerrainGrid::from_catalog(
        make_surface("banked_ring", {{"bank_deg", 18.0}, {"radius", 6.0}}), {-12, -12}, {12, 12},
        {0.25, 0.25});
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> coord(-12.0, 12.0);
    for (int k = 0; k < 5000; ++k) {
        const Eigen::Vector2d p{coord(rng), coord(rng)};
        const TerrainSample s = g.query(p);
        EXPECT_NEAR(s.normal.norm(), 1.0, 1e-9);
        EXPECT_GE(s.normal.z(), 0.0);
        EXPECT_NEAR(s.slope, std::acos(std::abs(s.normal.z())), 1e-15);
        EXPECT_NEAR(s.orientation, std::atan2(s.normal.y(), s.normal.x()), 1e-15);
    }
    EXPECT_THROW(g.query({12.5, 0.0}), OutOfBounds);
    EXPECT_THROW(g.query({0.0, -12.0000001}), OutOfBounds);
}

TEST(Terrain, BankedRingPeaksAtBankAngle) {
    const TerrainGrid g = TerrainGrid::from_catalog(
        make_surface("banked_ring", {{"bank_deg", 15.0}, {"radius", 8.0}}), {-14, -14}, {14, 14},
        {0.25, 0.25});
    const auto st = g.stats();
    EXPECT_NEAR(st.max_slope_deg, 15.0, 0.5);
    EXPECT_LE(st.max_slope_deg, 15.0 + 1e-9);
}

TEST(Terrain, RollPitchFromNormalExamples) {
    const RollPitch flat = roll_pitch_from_normal({0, 0, 1});
    EXPECT_EQ(flat.roll, 0.0);
    EXPECT_EQ(flat.pitch, 0.0);
    const RollPitch r = roll_pitch_from_normal({0.0, std::sin(0.2), std::cos(0.2)});
    EXPECT_NEAR(r.roll, 0.2, 1e-15);
    EXPECT_NEAR(r.pitch, 0.0, 1e-15);
    const RollPitch p = roll_pitch_from_normal({-std::sin(0.3), 0.0, std::cos(0.3)});
    EXPECT_NEAR(p.roll, 0.0, 1e-15);
    EXPECT_NEAR(p.pitch, 0.3, 1e-15);

    EXPECT_THROW(roll_pitch_from_normal({0, 0, 2}), NonUnitNormal);
    EXPECT_THROW(roll_pitch_from_normal({0, 0, -1}), NonUnitNormal);
}

// Brute-force round trip: the angles must invert the rotation taking e_z to
// the normal (roll about x composed with pitch about y).
TEST(Terrain, RollPitchRotationRoundTrip) {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double theta_max = 80.0 * M_PI / 180.0;
    for (int k = 0; k < 10000; ++k) {
        const double theta = theta_max * u01(rng);
        const double phi = 2.0 * M_PI * u01(rng) - M_PI;
        const Eigen::Vector3d n{std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                                std::cos(theta)};
        const RollPitch rp = roll_pitch_from_normal(n);
        const Eigen::Vector3d round_trip =
            (Eigen::AngleAxisd(-rp.roll, Eigen::Vector3d::UnitX()) *
             Eigen::AngleAxisd(-rp.pitch, Eigen::Vector3d::UnitY())) *
            Eigen::Vector3d::UnitZ();
        ASSERT_NEAR((round_trip - n).norm(), 0.0, 1e-9);
    }
}

TEST(Terrain, ExtrapolatedCellsFlaggedAndCounted) {
    // A diamond of points inside a square bbox leaves the corners outside
    // the hull.
    std::vector<OrientedPoint> pts = {
        {{0, -5, 0}, {0, 0, 1}}, {{5, 0, 1}, {0, 0, 1}},
        {{0, 5, 0}, {0, 0, 1}},  {{-5, 0, -1}, {0, 0, 1}},
    };
    const TerrainGrid g = TerrainGrid::from_points(pts, {0.5, 0.5});
    EXPECT_TRUE(g.extrapolated_at(0, 0));      // bbox corner, outside hull
    EXPECT_FALSE(g.extrapolated_at(g.nx() / 2, g.ny() / 2));
    EXPECT_EQ(g.extrapolated_query_count(), 0u);
    (void)g.query({-4.9, -4.9});
    EXPECT_EQ(g.extrapolated_query_count(), 1u);
    (void)g.query({0.0, 0.0});
    EXPECT_EQ(g.extrapolated_query_count(), 1u);
}

TEST(Terrain, NptgSaveLoadRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "nptrack_test_terrain";
    std::filesystem::create_directories(dir);
    const TerrainGrid g = TerrainGrid::from_catalog(
        make_surface("crater", {{"depth", 2.0}, {"sigma", 3.0}}), {-8, -6}, {7, 9}, {0.25, 0.25});
    g.save(dir / "t.nptg");
    const TerrainGrid r = TerrainGrid::load(dir / "t.nptg");
    ASSERT_EQ(r.nx(), g.nx());
    ASSERT_EQ(r.ny(), g.ny());
    EXPECT_EQ(r.origin(), g.origin());
    EXPECT_EQ(r.spacing(), g.spacing());
    for (int j = 0; j < g.ny(); j += 3) {
        for (int i = 0; i < g.nx(); i += 3) {
            EXPECT_EQ(r.height_at(i, j), g.height_at(i, j));
            EXPECT_EQ(r.normal_at(i, j), g.normal_at(i, j));
            EXPECT_EQ(r.slope_at(i, j), g.slope_at(i, j));  // recomputed on load
        }
    }
    EXPECT_THROW(TerrainGrid::load(dir / "missing.nptg"), IoError);
}

TEST(Terrain, PointCloudTextRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "nptrack_test_terrain";
    std::filesystem::create_directories(dir);
    std::vector<OrientedPoint> pts = {
        {{0.5, -1.25, 2.0}, plane_normal(0.3, -0.1)},
        {{3.0, 4.0, -1.0}, plane_normal(0.0, 0.2)},
    };
    save_point_cloud(dir / "cloud.txt", pts);
    const auto loaded = load_point_cloud(dir / "cloud.txt");
    ASSERT_EQ(loaded.size(), pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        EXPECT_EQ(loaded[i].position, pts[i].position);
        EXPECT_EQ(loaded[i].normal, pts[i].normal);
    }
    {
        std::ofstream f(dir / "bad.txt");
        f << "# comment line\n1 2 3 0 0 1\n4 5\n";
    }
    EXPECT_THROW(load_point_cloud(dir / "bad.txt"), IoError);
}

} // namespace
} // namespace nptrack
