#include "dualplan/synergy.hpp"

#include <cmath>

#include "dualplan/nn.hpp"

namespace dualplan {

namespace {

constexpr const char* kModule = "synergy";

}  // namespace

SynergyMemory::SynergyMemory(int capacity) : slots_(std::max(1, capacity)) {}

void SynergyMemory::publish(const SynergyRecord& record) {
  if (record.produced_at < last_produced_at_)
    throw ClockError(kModule, "publish time went backwards");
  record.trajectory.validate("publish");
  const auto n = record.trajectory.waypoints.size();
  if (n > kMaxWaypoints)
    throw InvalidGeometry(kModule, "record exceeds the memory waypoint capacity");
  last_produced_at_ = record.produced_at;

  const std::uint64_t idx = published_.load(std::memory_order_relaxed);
  Slot& slot = slots_[idx % slots_.size()];
  // Odd version marks the slot as mid-write.
  slot.version.store(2 * idx + 1, std::memory_order_release);
  slot.produced_at.store(record.produced_at, std::memory_order_relaxed);
  slot.pose_x.store(record.ego_pose.x, std::memory_order_relaxed);
  slot.pose_y.store(record.ego_pose.y, std::memory_order_relaxed);
  slot.pose_yaw.store(record.ego_pose.yaw, std::memory_order_relaxed);
  slot.start_time.store(record.trajectory.start_time, std::memory_order_relaxed);
  slot.dt.store(record.trajectory.dt, std::memory_order_relaxed);
  slot.count.store(static_cast<std::uint32_t>(n), std::memory_order_relaxed);
  for (std::size_t i = 0; i < n; ++i) {
    slot.pts[2 * i].store(record.trajectory.waypoints[i].x, std::memory_order_relaxed);
    slot.pts[2 * i + 1].store(record.trajectory.waypoints[i].y, std::memory_order_relaxed);
  }
  slot.version.store(2 * idx + 2, std::memory_order_release);
  published_.store(idx + 1, std::memory_order_release);
}

bool SynergyMemory::read_slot(std::uint64_t record_index, SynergyRecord& out) const {
  const Slot& slot = slots_[record_index % slots_.size()];
  const std::uint64_t expect = 2 * record_index + 2;
  if (slot.version.load(std::memory_order_acquire) != expect) return false;
  SynergyRecord rec;
  rec.produced_at = slot.produced_at.load(std::memory_order_relaxed);
  rec.ego_pose = Pose2(slot.pose_x.load(std::memory_order_relaxed),
                       slot.pose_y.load(std::memory_order_relaxed),
                       slot.pose_yaw.load(std::memory_order_relaxed));
  rec.trajectory.start_time = slot.start_time.load(std::memory_order_relaxed);
  rec.trajectory.dt = slot.dt.load(std::memory_order_relaxed);
  const std::uint32_t n = slot.count.load(std::memory_order_relaxed);
  if (n > kMaxWaypoints) return false;
  rec.trajectory.waypoints.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    rec.trajectory.waypoints[i].x = slot.pts[2 * i].load(std::memory_order_relaxed);
    rec.trajectory.waypoints[i].y = slot.pts[2 * i + 1].load(std::memory_order_relaxed);
  }
  // Re-validate: an overwrite that began mid-read bumps the version. The
  // fence keeps the payload loads from sinking past the check.
  std::atomic_thread_fence(std::memory_order_acquire);
  if (slot.version.load(std::memory_order_relaxed) != expect) return false;
  out = std::move(rec);
  return true;
}

std::optional<SynergyRecord> SynergyMemory::fetch_latest(double now, double latency) const {
  if (latency < 0.0) throw ClockError(kModule, "latency must be >= 0");
  const std::uint64_t count = published_.load(std::memory_order_acquire);
  const std::uint64_t window = std::min<std::uint64_t>(count, slots_.size());
  const double cutoff = now - latency;
  for (std::uint64_t back = 0; back < window; ++back) {
    const std::uint64_t idx = count - 1 - back;
    SynergyRecord rec;
    if (!read_slot(idx, rec)) continue;  // torn or evicted underneath us
    if (rec.produced_at <= cutoff) return rec;
  }
  return std::nullopt;
}

Trajectory align_to_now(const SynergyRecord& record, double now, const Pose2& current_pose,
                        const GridConfig& grid) {
  const double elapsed = now - record.produced_at;
  if (elapsed < 0.0) throw ClockError(kModule, "record produced in the future");
  const Trajectory& traj = record.trajectory;
  const double need_end = elapsed + grid.fast_span();
  const double have_end = traj.end_time();
  if (need_end > have_end + 1e-9)
    throw HorizonExceeded(kModule, "record covers " + std::to_string(have_end - elapsed) +
                                       " s from now, need " + std::to_string(grid.fast_span()) + " s");
  const Trajectory in_current = transform_trajectory(traj, record.ego_pose, current_pose);
  Trajectory out = resample(in_current, elapsed + grid.dt, grid.dt, grid.fast_horizon);
  // Times are relative to `now` for the consumer.
  out.start_time = grid.dt;
  return out;
}

SynergyLoopResult run_synergy_loop(const Scenario& scenario, const SlowPlanFn& slow_plan,
                                   const FastPlanFn& fast_plan, const SynergyConfig& sc,
                                   const GridConfig& grid, std::uint64_t seed) {
  if (sc.period <= 0.0) throw ConfigError(kModule, "synergy.period must be > 0");
  SynergyLoopResult out;
  SynergyMemory memory(sc.capacity);
  std::mt19937_64 rng(derive_seed(seed, 0x5ce7));
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  struct Pending {
    double available_at;
    SynergyRecord record;
  };
  std::vector<Pending> pending;

  const auto ticks = eligible_ticks(scenario, grid);
  const int period_ticks = std::max(1, static_cast<int>(std::llround(sc.period / grid.dt)));
  for (std::size_t i = 0; i < ticks.size(); ++i) {
    const int tick = ticks[i];
    const double now = scenario.time_at(tick);
    const FrameSample frame = make_frame(scenario, tick, grid);

    // Publish any slow-planner results whose processing delay has elapsed.
    for (auto it = pending.begin(); it != pending.end();) {
      if (it->available_at <= now) {
        memory.publish(it->record);
        it = pending.erase(it);
      } else {
        ++it;
      }
    }

    // Kick off the slow planner on its own period.
    if (i % period_ticks == 0) {
      SynergyRecord rec;
      rec.produced_at = now;
      rec.ego_pose = frame.ego_pose;
      rec.trajectory = slow_plan(frame);
      out.slow_ticks.push_back({now, tick, frame.ego_pose, rec.trajectory});
      double delay = sc.delay + sc.jitter * jitter(rng);
      delay = std::max(0.0, delay);
      if (std::isfinite(delay)) pending.push_back({now + delay, std::move(rec)});
    }

    // The fast planner never waits: it uses whatever is fetchable right now.
    std::optional<Trajectory> synergy_traj;
    double age = 0.0;
    const auto rec = memory.fetch_latest(now, 0.0);
    if (rec.has_value()) {
      try {
        synergy_traj = align_to_now(*rec, now, frame.ego_pose, grid);
        age = now - rec->produced_at;
      } catch (const HorizonExceeded&) {
        synergy_traj.reset();  // too stale; plan without it
      }
    }
    SynergyTick st;
    st.tick_time = now;
    st.tick_index = tick;
    st.ego_pose = frame.ego_pose;
    st.used_synergy = synergy_traj.has_value();
    st.record_age = synergy_traj.has_value() ? age : 0.0;
    st.plan = fast_plan(frame, synergy_traj);
    out.fast_ticks.push_back(std::move(st));
  }
  return out;
}

}  // namespace dualplan
