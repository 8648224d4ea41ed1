#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace nptrack {

// Minimal static SVG chart writer for the plot command: polylines over a
// data-space viewport, bar histograms, axis ticks and a legend. Output is
// deterministic for identical inputs.
class SvgPlot {
public:
    SvgPlot(double width_px, double height_px, const std::string& title);

    void set_view(double xmin, double xmax, double ymin, double ymax, bool equal_aspect = false);
    void polyline(const std::vector<Eigen::Vector2d>& pts, const std::string& color,
                  double stroke_width = 1.5, bool dashed = false);
    void bars(const std::vector<double>& edges, const std::vector<double>& counts,
              const std::string& color);
    void vline(double x, const std::string& color, bool dashed = true);
    void legend_entry(const std::string& label, const std::string& color);
    void axis_labels(const std::string& xlabel, const std::string& ylabel);
    void save(const std::filesystem::path& path) const;

private:
    Eigen::Vector2d to_px(double x, double y) const;
    double width_, height_;
    double xmin_ = 0, xmax_ = 1, ymin_ = 0, ymax_ = 1;
    std::string title_, xlabel_, ylabel_;
    std::string body_;
    std::vector<std::pair<std::string, std::string>> legend_;
};

} // namespace nptrack
