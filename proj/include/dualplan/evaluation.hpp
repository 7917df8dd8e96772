#pragma once

#include <map>
#include <string>
#include <vector>

#include "dualplan/config.hpp"
#include "dualplan/geometry.hpp"
#include "dualplan/scenario.hpp"

namespace dualplan {

enum class Provenance { Chain = 0, E2E = 1, E2EAsync = 2 };

const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

// One planner decision as persisted to the trace log.
struct PlanTrace {
  std::string scenario_id;
  int tick_index = 0;
  double tick_time = 0.0;
  Provenance prov = Provenance::E2E;
  bool used_synergy = false;
  double record_age = 0.0;
  Pose2 ego_pose;    // world pose at the tick (the plan's frame)
  Trajectory plan;   // ego frame, relative times
};

void save_traces(const std::vector<PlanTrace>& traces, const std::filesystem::path& path);
std::vector<PlanTrace> load_traces(const std::filesystem::path& path);

struct FrameResult {
  std::string scenario_id;
  double tick_time = 0.0;
  Provenance prov = Provenance::E2E;
  double l2_1s = 0.0, l2_2s = 0.0, l2_3s = 0.0;
  bool col_1s = false, col_2s = false, col_3s = false;
};

// True iff the ego box swept along the plan overlaps any agent box at any
// step with time <= horizon. Headings are interpolated from waypoint
// differences; stationary segments inherit the previous heading.
bool collision_at(const Trajectory& plan_world, double ego_length, double ego_width,
                  const std::vector<std::vector<OrientedBox>>& agents_per_step, double horizon,
                  double initial_heading);

FrameResult evaluate_frame(const Scenario& scenario, const PlanTrace& trace, const EvalConfig& ec,
                           const GridConfig& gc);

struct ProvenanceStats {
  double l2_1s = 0.0, l2_2s = 0.0, l2_3s = 0.0, l2_avg = 0.0;
  double col_1s = 0.0, col_2s = 0.0, col_3s = 0.0, col_avg = 0.0;  // percent
  std::size_t frames = 0;
};

struct BenchmarkReport {
  std::map<std::string, ProvenanceStats> by_provenance;
  std::size_t scenario_count = 0;
  std::uint64_t cfg_hash = 0;
  std::vector<std::uint64_t> seeds;

  std::string to_text() const;
  std::string to_csv() const;
  std::string to_json() const;
};

BenchmarkReport aggregate(const std::vector<FrameResult>& frames);

BenchmarkReport evaluate(const std::vector<PlanTrace>& traces, const Dataset& ds,
                         const EvalConfig& ec, const GridConfig& gc,
                         std::vector<FrameResult>* frames_out = nullptr);

void save_frame_results(const std::vector<FrameResult>& frames, const std::filesystem::path& path);
std::vector<FrameResult> load_frame_results(const std::filesystem::path& path);

BenchmarkReport report_from_json(const std::string& text);

}  // namespace dualplan
