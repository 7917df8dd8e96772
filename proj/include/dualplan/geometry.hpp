#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dualplan/errors.hpp"

namespace dualplan {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double norm() const { return std::hypot(x, y); }
};

inline double wrap_angle(double a) {
  // Normalize into (-pi, pi].
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

// SE(2) pose; composition follows the usual world_from_local convention.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Pose2() = default;
  Pose2(double px, double py, double pyaw) : x(px), y(py), yaw(wrap_angle(pyaw)) {}

  Vec2 apply(const Vec2& p) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {x + c * p.x - s * p.y, y + s * p.x + c * p.y};
  }

  Pose2 compose(const Pose2& o) const {
    const Vec2 t = apply({o.x, o.y});
    return Pose2(t.x, t.y, yaw + o.yaw);
  }

  Pose2 inverse() const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return Pose2(-(c * x + s * y), -(-s * x + c * y), -yaw);
  }

  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(yaw); }
};

// Uniformly sampled 2D path. Waypoint i sits at start_time + i * dt, expressed
// in the ego frame given by `frame` (pose of that frame in world coordinates).
struct Trajectory {
  double start_time = 0.0;
  double dt = 0.5;
  std::vector<Vec2> waypoints;
  Pose2 frame;

  std::size_t size() const { return waypoints.size(); }
  double time_at(std::size_t i) const { return start_time + static_cast<double>(i) * dt; }
  double end_time() const { return waypoints.empty() ? start_time : time_at(waypoints.size() - 1); }

  void validate(const std::string& ctx) const;
};

enum class Command : std::uint8_t { Forward = 0, LeftTurn = 1, RightTurn = 2 };

const char* to_string(Command c);
Command command_from_string(const std::string& s);

struct EgoStatus {
  double speed = 0.0;     // m/s, >= 0
  double accel = 0.0;     // m/s^2
  double yaw_rate = 0.0;  // rad/s
  Command command = Command::Forward;
  Trajectory history;  // past waypoints in the current ego frame, most recent last
};

struct OrientedBox {
  Pose2 center;
  double length = 1.0;  // extent along heading
  double width = 1.0;

  std::array<Vec2, 4> corners() const;
};

// Signed separation between oriented rectangles from the four SAT axes:
// positive = largest separating gap, negative = -(minimum penetration depth).
double box_separation(const OrientedBox& a, const OrientedBox& b);
inline bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  return box_separation(a, b) <= 0.0;
}

Trajectory transform_trajectory(const Trajectory& traj, const Pose2& from, const Pose2& to);

Trajectory resample(const Trajectory& traj, double new_start, double new_dt, std::size_t n);

Vec2 position_at(const Trajectory& traj, double t);

double l2_at(const Trajectory& traj, const Trajectory& gt, double t);

}  // namespace dualplan
