#include "svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "nptrack/errors.hpp"
#include "nptrack/util.hpp"

namespace nptrack {

namespace {
constexpr double kMarginLeft = 64.0;
constexpr double kMarginRight = 18.0;
constexpr double kMarginTop = 34.0;
constexpr double kMarginBottom = 46.0;

std::string num(double v) { return format_double(v); }

// round to 1/2/5 * 10^k for tick spacing
double nice_step(double span) {
    if (!(span > 0.0)) return 1.0;
    const double raw = span / 6.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double r = raw / mag;
    if (r < 1.5) return mag;
    if (r < 3.5) return 2.0 * mag;
    if (r < 7.5) return 5.0 * mag;
    return 10.0 * mag;
}
} // namespace

SvgPlot::SvgPlot(double width_px, double height_px, const std::string& title)
    : width_(width_px), height_(height_px), title_(title) {}

void SvgPlot::set_view(double xmin, double xmax, double ymin, double ymax, bool equal_aspect) {
    if (!(xmax > xmin)) xmax = xmin + 1.0;
    if (!(ymax > ymin)) ymax = ymin + 1.0;
    if (equal_aspect) {
        const double pw = width_ - kMarginLeft - kMarginRight;
        const double ph = height_ - kMarginTop - kMarginBottom;
        const double sx = (xmax - xmin) / pw;
        const double sy = (ymax - ymin) / ph;
        const double s = std::max(sx, sy);
        const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
        xmin = cx - 0.5 * s * pw;
        xmax = cx + 0.5 * s * pw;
        ymin = cy - 0.5 * s * ph;
        ymax = cy + 0.5 * s * ph;
    }
    xmin_ = xmin;
    xmax_ = xmax;
    ymin_ = ymin;
    ymax_ = ymax;
}

Eigen::Vector2d SvgPlot::to_px(double x, double y) const {
    const double px = kMarginLeft +
                      (x - xmin_) / (xmax_ - xmin_) * (width_ - kMarginLeft - kMarginRight);
    const double py = height_ - kMarginBottom -
                      (y - ymin_) / (ymax_ - ymin_) * (height_ - kMarginTop - kMarginBottom);
    return {px, py};
}

void SvgPlot::polyline(const std::vector<Eigen::Vector2d>& pts, const std::string& color,
                       double stroke_width, bool dashed) {
    if (pts.size() < 2) return;
    body_ += "<path d=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Eigen::Vector2d p = to_px(pts[i].x(), pts[i].y());
        body_ += (i == 0 ? "M" : "L") + num(p.x()) + " " + num(p.y());
    }
    body_ += "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" + num(stroke_width) +
             "\"";
    if (dashed) body_ += " stroke-dasharray=\"6 4\"";
    body_ += "/>\n";
}

void SvgPlot::bars(const std::vector<double>& edges, const std::vector<double>& counts,
                   const std::string& color) {
    for (std::size_t i = 0; i < counts.size() && i + 1 < edges.size(); ++i) {
        const Eigen::Vector2d lo = to_px(edges[i], 0.0);
        const Eigen::Vector2d hi = to_px(edges[i + 1], counts[i]);
        const double x = lo.x();
        const double w = std::max(1.0, hi.x() - lo.x() - 1.0);
        const double y = hi.y();
        const double h = std::max(0.0, lo.y() - hi.y());
        body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
                 "\" height=\"" + num(h) + "\" fill=\"" + color + "\" fill-opacity=\"0.65\"/>\n";
    }
}

void SvgPlot::vline(double x, const std::string& color, bool dashed) {
    const Eigen::Vector2d a = to_px(x, ymin_);
    const Eigen::Vector2d b = to_px(x, ymax_);
    body_ += "<line x1=\"" + num(a.x()) + "\" y1=\"" + num(a.y()) + "\" x2=\"" + num(b.x()) +
             "\" y2=\"" + num(b.y()) + "\" stroke=\"" + color + "\" stroke-width=\"1.5\"";
    if (dashed) body_ += " stroke-dasharray=\"5 4\"";
    body_ += "/>\n";
}

void SvgPlot::legend_entry(const std::string& label, const std::string& color) {
    legend_.emplace_back(label, color);
}

void SvgPlot::axis_labels(const std::string& xlabel, const std::string& ylabel) {
    xlabel_ = xlabel;
    ylabel_ = ylabel;
}

void SvgPlot::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width_) << "\" height=\""
        << num(height_) << "\" viewBox=\"0 0 " << num(width_) << " " << num(height_) << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << num(width_ / 2) << "\" y=\"20\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"14\">" << title_ << "</text>\n";

    // frame
    const Eigen::Vector2d bl = to_px(xmin_, ymin_);
    const Eigen::Vector2d tr = to_px(xmax_, ymax_);
    out << "<rect x=\"" << num(tr.y() < bl.y() ? bl.x() : tr.x()) << "\" y=\"" << num(tr.y())
        << "\" width=\"" << num(tr.x() - bl.x()) << "\" height=\"" << num(bl.y() - tr.y())
        << "\" fill=\"none\" stroke=\"#444\"/>\n";

    // ticks
    const double xstep = nice_step(xmax_ - xmin_);
    for (double x = std::ceil(xmin_ / xstep) * xstep; x <= xmax_ + 1e-12; x += xstep) {
        const Eigen::Vector2d p = to_px(x, ymin_);
        out << "<line x1=\"" << num(p.x()) << "\" y1=\"" << num(p.y()) << "\" x2=\"" << num(p.x())
            << "\" y2=\"" << num(p.y() + 4) << "\" stroke=\"#444\"/>\n";
        out << "<text x=\"" << num(p.x()) << "\" y=\"" << num(p.y() + 17)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
            << num(std::abs(x) < 1e-12 ? 0.0 : x) << "</text>\n";
    }
    const double ystep = nice_step(ymax_ - ymin_);
    for (double y = std::ceil(ymin_ / ystep) * ystep; y <= ymax_ + 1e-12; y += ystep) {
        const Eigen::Vector2d p = to_px(xmin_, y);
        out << "<line x1=\"" << num(p.x() - 4) << "\" y1=\"" << num(p.y()) << "\" x2=\""
            << num(p.x()) << "\" y2=\"" << num(p.y()) << "\" stroke=\"#444\"/>\n";
        out << "<text x=\"" << num(p.x() - 7) << "\" y=\"" << num(p.y() + 3)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
            << num(std::abs(y) < 1e-12 ? 0.0 : y) << "</text>\n";
    }
    if (!xlabel_.empty()) {
        out << "<text x=\"" << num(width_ / 2) << "\" y=\"" << num(height_ - 8)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xlabel_
            << "</text>\n";
    }
    if (!ylabel_.empty()) {
        out << "<text x=\"14\" y=\"" << num(height_ / 2)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
               "transform=\"rotate(-90 14 " << num(height_ / 2) << ")\">" << ylabel_
            << "</text>\n";
    }

    out << body_;

    double ly = kMarginTop + 6.0;
    for (const auto& [label, color] : legend_) {
        const double lx = width_ - kMarginRight - 150.0;
        out << "<rect x=\"" << num(lx) << "\" y=\"" << num(ly - 9) << "\" width=\"18\" "
            << "height=\"4\" fill=\"" << color << "\"/>\n";
        out << "<text x=\"" << num(lx + 24) << "\" y=\"" << num(ly - 3)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << label << "</text>\n";
        ly += 16.0;
    }
    out << "</svg>\n";
}

} // namespace nptrack
