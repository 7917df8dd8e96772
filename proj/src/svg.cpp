#include "dualplan/svg.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace dualplan {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

SvgCanvas::SvgCanvas(double min_x, double min_y, double max_x, double max_y, int pixels)
    : min_x_(min_x), min_y_(min_y), max_x_(max_x), max_y_(max_y), pixels_(pixels) {}

void SvgCanvas::polyline(const std::vector<Vec2>& pts, const std::string& color, double width,
                         bool dashed) {
  if (pts.empty()) return;
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << fmt(width)
     << "\" vector-effect=\"non-scaling-stroke\"";
  if (dashed) os << " stroke-dasharray=\"2,1\"";
  os << " points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) os << " ";
    os << fmt(pts[i].x) << "," << fmt(pts[i].y);
  }
  os << "\"/>\n";
  body_ += os.str();
}

void SvgCanvas::box(const OrientedBox& b, const std::string& color) {
  const auto c = b.corners();
  std::vector<Vec2> pts(c.begin(), c.end());
  pts.push_back(c[0]);
  polyline(pts, color, 1.2);
}

void SvgCanvas::circle(const Vec2& center, double radius, const std::string& color) {
  body_ += "<circle cx=\"" + fmt(center.x) + "\" cy=\"" + fmt(center.y) + "\" r=\"" + fmt(radius) +
           "\" fill=\"" + color + "\"/>\n";
}

void SvgCanvas::legend(const std::vector<std::pair<std::string, std::string>>& entries) {
  double y = 18.0;
  for (const auto& [label, color] : entries) {
    overlay_ += "<rect x=\"12\" y=\"" + fmt(y - 9) + "\" width=\"18\" height=\"9\" fill=\"" + color +
                "\"/>\n";
    overlay_ += "<text x=\"36\" y=\"" + fmt(y) + "\" font-size=\"12\" font-family=\"monospace\">" +
                label + "</text>\n";
    y += 16.0;
  }
}

void SvgCanvas::bar_chart(const std::vector<std::pair<std::string, double>>& bars,
                          const std::string& title) {
  overlay_ += "<text x=\"12\" y=\"16\" font-size=\"13\" font-family=\"monospace\">" + title +
              "</text>\n";
  if (bars.empty()) return;
  double vmax = 0.0;
  for (const auto& [_, v] : bars) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;
  const double w = (pixels_ - 60.0) / bars.size();
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double h = (pixels_ - 120.0) * bars[i].second / vmax;
    const double x = 40.0 + i * w;
    const double y = pixels_ - 60.0 - h;
    overlay_ += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(w * 0.7) +
                "\" height=\"" + fmt(h) + "\" fill=\"#4477aa\"/>\n";
    overlay_ += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(pixels_ - 42.0) +
                "\" font-size=\"11\" font-family=\"monospace\">" + bars[i].first + "</text>\n";
    overlay_ += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y - 4.0) +
                "\" font-size=\"11\" font-family=\"monospace\">" + fmt(bars[i].second) + "</text>\n";
  }
}

std::string SvgCanvas::finish() const {
  const double span_x = std::max(1e-6, max_x_ - min_x_);
  const double span_y = std::max(1e-6, max_y_ - min_y_);
  const double scale = pixels_ / std::max(span_x, span_y);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << pixels_ << "\" height=\"" << pixels_
     << "\" viewBox=\"0 0 " << pixels_ << " " << pixels_ << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << pixels_ << "\" height=\"" << pixels_
     << "\" fill=\"white\"/>\n";
  // Axes frame.
  os << "<rect x=\"0.5\" y=\"0.5\" width=\"" << pixels_ - 1 << "\" height=\"" << pixels_ - 1
     << "\" fill=\"none\" stroke=\"#888888\"/>\n";
  // World layer: y up, origin at (min_x, min_y).
  os << "<g transform=\"translate(" << fmt(-min_x_ * scale) << "," << fmt(max_y_ * scale)
     << ") scale(" << fmt(scale) << "," << fmt(-scale) << ")\">\n";
  os << body_;
  os << "</g>\n";
  os << overlay_;
  os << "</svg>\n";
  return os.str();
}

std::string plot_scenario_svg(const Scenario& scenario, int tick,
                              const std::vector<std::pair<std::string, Trajectory>>& world_plans) {
  const Pose2 ego = scenario.ego_pose[tick];
  const double R = 45.0;
  SvgCanvas canvas(ego.x - R, ego.y - R, ego.x + R, ego.y + R);
  for (const auto& lane : scenario.lanes) canvas.polyline(lane, "#bbbbbb", 1.0, true);

  std::vector<Vec2> gt;
  for (int t = tick; t < scenario.ticks(); ++t) gt.push_back({scenario.ego_pose[t].x, scenario.ego_pose[t].y});
  canvas.polyline(gt, "#2ca02c", 1.6);
  canvas.box(OrientedBox{ego, 4.08, 1.85}, "#2ca02c");
  for (const auto& ag : scenario.agents[tick])
    canvas.box(ag.box, ag.cls == 0 ? "#555555" : "#aa44aa");

  std::vector<std::pair<std::string, std::string>> legend{{"expert", "#2ca02c"}};
  const std::vector<std::pair<std::string, std::string>> palette{
      {"chain", "#d62728"}, {"e2e", "#e6b417"}, {"e2e_async", "#1f77b4"}};
  for (const auto& [prov, traj] : world_plans) {
    std::string color = "#777777";
    for (const auto& [name, c] : palette)
      if (name == prov) color = c;
    canvas.polyline(traj.waypoints, color, 1.6);
    legend.emplace_back(prov, color);
  }
  canvas.legend(legend);
  return canvas.finish();
}

std::string plot_report_svg(const BenchmarkReport& report) {
  SvgCanvas canvas(0, 0, 1, 1);
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& [name, st] : report.by_provenance) bars.emplace_back(name, st.l2_avg);
  canvas.bar_chart(bars, "average L2 (m) by planner");
  canvas.legend({});
  return canvas.finish();
}

}  // namespace dualplan
