#pragma once

#include <string>
#include <vector>

#include "dualplan/evaluation.hpp"
#include "dualplan/geometry.hpp"
#include "dualplan/scenario.hpp"

namespace dualplan {

// Minimal static-SVG writer. Geometry is emitted in world coordinates inside
// a flipped-y transform group, so emitted point lists can be parsed back
// directly in world units.
class SvgCanvas {
 public:
  SvgCanvas(double min_x, double min_y, double max_x, double max_y, int pixels = 640);

  void polyline(const std::vector<Vec2>& pts, const std::string& color, double width,
                bool dashed = false);
  void box(const OrientedBox& b, const std::string& color);
  void circle(const Vec2& center, double radius, const std::string& color);
  void legend(const std::vector<std::pair<std::string, std::string>>& entries);  // (label, color)
  void bar_chart(const std::vector<std::pair<std::string, double>>& bars, const std::string& title);

  std::string finish() const;

 private:
  double min_x_, min_y_, max_x_, max_y_;
  int pixels_;
  std::string body_;
  std::string overlay_;  // unflipped layer for text
};

// Top-down overlay of one scenario frame: lanes, agent boxes, ground truth,
// and per-provenance plans.
std::string plot_scenario_svg(const Scenario& scenario, int tick,
                              const std::vector<std::pair<std::string, Trajectory>>& world_plans);

std::string plot_report_svg(const BenchmarkReport& report);

}  // namespace dualplan
