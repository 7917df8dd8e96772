#pragma once

#include <atomic>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "dualplan/config.hpp"
#include "dualplan/geometry.hpp"
#include "dualplan/scenario.hpp"

namespace dualplan {

struct SynergyRecord {
  double produced_at = 0.0;  // capture time of the planning input
  Pose2 ego_pose;            // world pose at capture; frame of the trajectory
  Trajectory trajectory;     // long horizon, relative times from capture
};

// Single-writer / single-reader trajectory mailbox. Slots hold fixed-size
// atomic payloads behind a per-slot version counter, so a reader never blocks
// the writer and never observes a torn record: a slot overwritten mid-read
// fails version validation and is treated as evicted.
class SynergyMemory {
 public:
  static constexpr int kMaxWaypoints = 32;

  explicit SynergyMemory(int capacity = 8);

  void publish(const SynergyRecord& record);
  std::optional<SynergyRecord> fetch_latest(double now, double latency) const;

  int capacity() const { return static_cast<int>(slots_.size()); }
  std::uint64_t published_count() const { return published_.load(std::memory_order_acquire); }

 private:
  struct Slot {
    std::atomic<std::uint64_t> version{0};
    std::atomic<double> produced_at{0.0};
    std::atomic<double> pose_x{0.0}, pose_y{0.0}, pose_yaw{0.0};
    std::atomic<double> start_time{0.0}, dt{0.0};
    std::atomic<std::uint32_t> count{0};
    std::atomic<double> pts[2 * kMaxWaypoints];
  };

  bool read_slot(std::uint64_t record_index, SynergyRecord& out) const;

  std::vector<Slot> slots_;
  std::atomic<std::uint64_t> published_{0};
  double last_produced_at_ = -std::numeric_limits<double>::infinity();
};

// Re-expresses a stale record in the current ego frame and resamples the
// not-yet-elapsed remainder onto the fast-planner grid.
Trajectory align_to_now(const SynergyRecord& record, double now, const Pose2& current_pose,
                        const GridConfig& grid);

struct SynergyTick {
  double tick_time = 0.0;
  bool used_synergy = false;
  double record_age = 0.0;  // seconds; 0 when unused
  Trajectory plan;          // ego frame at the tick
  Pose2 ego_pose;
  int tick_index = 0;
};

struct SlowTick {
  double tick_time = 0.0;
  int tick_index = 0;
  Pose2 ego_pose;
  Trajectory plan;  // long horizon, ego frame at the tick
};

struct SynergyLoopResult {
  std::vector<SynergyTick> fast_ticks;
  std::vector<SlowTick> slow_ticks;
};

using SlowPlanFn = std::function<Trajectory(const FrameSample&)>;
using FastPlanFn = std::function<Trajectory(const FrameSample&, const std::optional<Trajectory>&)>;

// Virtual-clock cooperation loop over one scenario. The slow planner is
// invoked every `period` seconds on the tick grid; its record becomes
// fetchable once the (possibly jittered) processing delay has elapsed. The
// fast planner runs every tick and never waits.
SynergyLoopResult run_synergy_loop(const Scenario& scenario, const SlowPlanFn& slow_plan,
                                   const FastPlanFn& fast_plan, const SynergyConfig& sc,
                                   const GridConfig& grid, std::uint64_t seed);

}  // namespace dualplan
