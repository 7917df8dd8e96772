#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dualplan/config.hpp"
#include "dualplan/geometry.hpp"

namespace dualplan {

struct AgentState {
  int id = 0;
  int cls = 0;  // 0 vehicle, 1 pedestrian
  OrientedBox box;
  Vec2 velocity;  // world frame
};

// One synthetic drive: ego kinematics, agents, lane polylines, static tags.
// Everything is sampled on the tick grid (tick i at time i * tick).
struct Scenario {
  std::string id;
  double tick = 0.5;
  double duration = 12.0;
  int weather = 0;    // 0 clear, 1 rain, 2 fog
  int timeofday = 0;  // 0 day, 1 night
  std::vector<Pose2> ego_pose;
  std::vector<double> ego_speed;
  std::vector<double> ego_accel;
  std::vector<double> ego_yaw_rate;
  std::vector<Command> command;
  std::vector<std::vector<AgentState>> agents;  // per tick
  std::vector<std::vector<Vec2>> lanes;         // world-frame polylines

  int ticks() const { return static_cast<int>(ego_pose.size()); }
  double time_at(int t) const { return t * tick; }
};

struct DatasetSplit {
  std::vector<std::string> train, val, test;
  std::uint64_t seed = 0;
  std::uint64_t cfg_hash = 0;
};

struct Dataset {
  DatasetSplit split;
  std::vector<Scenario> scenarios;
  std::map<std::string, int> index;

  const Scenario& by_id(const std::string& id) const;
};

// Rendered analogue of a multi-view feature map: channel grid around the ego
// plus per-cell ego-frame coordinates feeding the position embedding.
struct SceneFeatures {
  int hw = 0;
  int channels = 0;
  double cell_m = 2.0;
  std::vector<double> grid;     // [channels][hw][hw], row-major
  std::vector<double> cell_xy;  // [hw*hw][2] ego-frame centers

  double at(int c, int r, int col) const {
    return grid[(static_cast<std::size_t>(c) * hw + r) * hw + col];
  }
};

// Ground-truth regression targets for the compressor's alignment heads.
struct PerceptionTargets {
  struct Box {
    double x, y, yaw, length, width;
    int cls;
  };
  std::vector<Box> boxes;                     // ego frame, within grid range
  std::vector<std::vector<Vec2>> lane_ctrl;   // ego frame control points per visible lane
  int weather = 0;
  int timeofday = 0;
  double agent_count = 0.0;
  double nearest_dist = 0.0;  // clipped to grid range when no agent visible
};

// Per-tick training/eval view of a scenario.
struct FrameSample {
  const Scenario* scenario = nullptr;
  int tick_index = 0;
  double time = 0.0;
  Pose2 ego_pose;  // world
  EgoStatus status;
  Trajectory future_long;  // ego frame, long_horizon points from +dt
  Trajectory future_fast;  // prefix of future_long
};

Dataset generate_dataset(const RunConfig& cfg, std::uint64_t seed);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
void export_expert_csv(const Dataset& ds, const std::filesystem::path& path);

SceneFeatures render_features(const Scenario& s, int tick, const CompressorConfig& cc);
PerceptionTargets make_targets(const Scenario& s, int tick, const CompressorConfig& cc);

std::vector<int> eligible_ticks(const Scenario& s, const GridConfig& g);
FrameSample make_frame(const Scenario& s, int tick, const GridConfig& g);

OrientedBox ego_box_at(const Scenario& s, int tick, const EvalConfig& e);

}  // namespace dualplan
