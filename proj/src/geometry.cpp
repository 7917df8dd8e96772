#include "dualplan/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace dualplan {

void Trajectory::validate(const std::string& ctx) const {
  if (waypoints.empty()) throw InvalidGeometry("core_types", ctx + ": trajectory needs >= 1 waypoint");
  if (!(dt > 0.0) || !std::isfinite(dt) || !std::isfinite(start_time))
    throw InvalidGeometry("core_types", ctx + ": bad time grid");
  if (!frame.finite()) throw InvalidGeometry("core_types", ctx + ": non-finite frame");
  for (const auto& w : waypoints)
    if (!std::isfinite(w.x) || !std::isfinite(w.y))
      throw InvalidGeometry("core_types", ctx + ": non-finite waypoint");
}

const char* to_string(Command c) {
  switch (c) {
    case Command::Forward: return "forward";
    case Command::LeftTurn: return "left_turn";
    case Command::RightTurn: return "right_turn";
  }
  return "forward";
}

Command command_from_string(const std::string& s) {
  if (s == "forward") return Command::Forward;
  if (s == "left_turn") return Command::LeftTurn;
  if (s == "right_turn") return Command::RightTurn;
  throw InvalidCommand("core_types", "unknown command '" + s + "'");
}

std::array<Vec2, 4> OrientedBox::corners() const {
  const double hl = 0.5 * length, hw = 0.5 * width;
  return {center.apply({hl, hw}), center.apply({hl, -hw}),
          center.apply({-hl, -hw}), center.apply({-hl, hw})};
}

double box_separation(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const Vec2 axes[4] = {{std::cos(a.center.yaw), std::sin(a.center.yaw)},
                        {-std::sin(a.center.yaw), std::cos(a.center.yaw)},
                        {std::cos(b.center.yaw), std::sin(b.center.yaw)},
                        {-std::sin(b.center.yaw), std::cos(b.center.yaw)}};
  double max_gap = -INFINITY;     // positive on any axis => separated
  double min_overlap = INFINITY;  // penetration depth when intersecting
  for (const Vec2& ax : axes) {
    double alo = INFINITY, ahi = -INFINITY, blo = INFINITY, bhi = -INFINITY;
    for (const Vec2& c : ca) {
      const double p = c.x * ax.x + c.y * ax.y;
      alo = std::min(alo, p);
      ahi = std::max(ahi, p);
    }
    for (const Vec2& c : cb) {
      const double p = c.x * ax.x + c.y * ax.y;
      blo = std::min(blo, p);
      bhi = std::max(bhi, p);
    }
    const double gap = std::max(blo - ahi, alo - bhi);
    max_gap = std::max(max_gap, gap);
    min_overlap = std::min(min_overlap, -gap);
  }
  return max_gap > 0.0 ? max_gap : -min_overlap;
}

Trajectory transform_trajectory(const Trajectory& traj, const Pose2& from, const Pose2& to) {
  if (!from.finite() || !to.finite()) throw InvalidGeometry("core_types", "transform: non-finite pose");
  traj.validate("transform");
  Trajectory out = traj;
  out.frame = to;
  if (from.x == to.x && from.y == to.y && from.yaw == to.yaw) return out;  // exact identity
  const Pose2 rel = to.inverse().compose(from);  // maps from-frame coords into to-frame
  for (auto& w : out.waypoints) w = rel.apply(w);
  return out;
}

Vec2 position_at(const Trajectory& traj, double t) {
  traj.validate("position_at");
  const double span_lo = traj.start_time, span_hi = traj.end_time();
  const double eps = 1e-9 * std::max(1.0, traj.dt);
  if (t < span_lo - eps || t > span_hi + eps)
    throw HorizonExceeded("core_types", "time " + std::to_string(t) + " outside trajectory span [" +
                                            std::to_string(span_lo) + ", " + std::to_string(span_hi) + "]");
  double u = (t - traj.start_time) / traj.dt;
  u = std::clamp(u, 0.0, static_cast<double>(traj.waypoints.size() - 1));
  auto lo = static_cast<std::size_t>(std::floor(u));
  double frac = u - static_cast<double>(lo);
  if (frac > 1.0 - 1e-12 && lo + 1 < traj.waypoints.size()) {
    ++lo;
    frac = 0.0;
  }
  if (frac < 1e-12 || lo + 1 >= traj.waypoints.size()) return traj.waypoints[lo];
  const Vec2 a = traj.waypoints[lo], b = traj.waypoints[lo + 1];
  return {a.x + (b.x - a.x) * frac, a.y + (b.y - a.y) * frac};
}

Trajectory resample(const Trajectory& traj, double new_start, double new_dt, std::size_t n) {
  traj.validate("resample");
  if (n == 0 || !(new_dt > 0.0))
    throw InvalidGeometry("core_types", "resample: need n >= 1 and dt > 0");
  Trajectory out;
  out.start_time = new_start;
  out.dt = new_dt;
  out.frame = traj.frame;
  out.waypoints.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.waypoints.push_back(position_at(traj, new_start + static_cast<double>(i) * new_dt));
  return out;
}

double l2_at(const Trajectory& traj, const Trajectory& gt, double t) {
  const Vec2 a = position_at(traj, t);
  const Vec2 b = position_at(gt, t);
  return (a - b).norm();
}

}  // namespace dualplan
