#include "dualplan/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "dualplan/nn.hpp"
#include "json.hpp"

namespace dualplan {

namespace {

constexpr const char* kModule = "scenario";
constexpr int kDatasetVersion = 1;
using json = nlohmann::json;

constexpr int kSubsteps = 10;  // integration substeps per tick

struct EgoState {
  double x = 0, y = 0, yaw = 0, v = 0;
};

struct SimAgent {
  int id;
  int cls;
  double length, width;
  // positions per substep are produced by a per-agent update closure
  Pose2 pose;
  Vec2 vel;
};

enum Archetype { kCruise = 0, kCurve, kLeftTurn, kRightTurn, kLeadBrake, kCrossingPed };

double urand(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int irand(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Arclength-parameterized polyline lookup with linear interpolation and
// straight extrapolation beyond both ends.
struct PathRef {
  std::vector<Vec2> pts;
  std::vector<double> s;

  void build(const std::vector<Vec2>& raw) {
    pts = raw;
    s.resize(pts.size());
    s[0] = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) s[i] = s[i - 1] + (pts[i] - pts[i - 1]).norm();
  }

  double total() const { return s.back(); }

  Vec2 tangent_at(std::size_t i) const {
    const std::size_t j = std::min(i + 1, pts.size() - 1);
    const std::size_t k = j == i ? i - 1 : i;
    Vec2 d = pts[j] - pts[k];
    const double n = d.norm();
    return n > 1e-12 ? Vec2{d.x / n, d.y / n} : Vec2{1, 0};
  }

  Vec2 point(double arc, double lateral) const {
    std::size_t i = 0;
    if (arc <= 0.0) {
      const Vec2 t = tangent_at(0);
      const Vec2 base = pts[0] + t * arc;
      return {base.x - t.y * lateral, base.y + t.x * lateral};
    }
    if (arc >= total()) {
      const Vec2 t = tangent_at(pts.size() - 1);
      const Vec2 base = pts.back() + t * (arc - total());
      return {base.x - t.y * lateral, base.y + t.x * lateral};
    }
    while (i + 1 < s.size() && s[i + 1] < arc) ++i;
    const double seg = s[i + 1] - s[i];
    const double u = seg > 1e-12 ? (arc - s[i]) / seg : 0.0;
    const Vec2 base = pts[i] + (pts[i + 1] - pts[i]) * u;
    const Vec2 t = tangent_at(i);
    return {base.x - t.y * lateral, base.y + t.x * lateral};
  }
};

struct GenResult {
  Scenario scenario;
  bool collision_free = true;
};

GenResult simulate_once(const RunConfig& cfg, std::mt19937_64& rng, int archetype,
                        const std::string& id) {
  const double tick = cfg.grid.dt;
  const int n_ticks = static_cast<int>(std::llround(cfg.scenario.duration / tick)) + 1;
  const double h = tick / kSubsteps;
  const double a_lim = cfg.scenario.accel_limit;
  const double w_lim = cfg.scenario.yaw_rate_limit;

  Scenario sc;
  sc.id = id;
  sc.tick = tick;
  sc.duration = cfg.scenario.duration;
  sc.weather = irand(rng, 0, 2);
  sc.timeofday = irand(rng, 0, 1);

  EgoState ego;
  ego.x = urand(rng, -60.0, 60.0);
  ego.y = urand(rng, -60.0, 60.0);
  ego.yaw = urand(rng, -M_PI, M_PI);
  const double v0 = urand(rng, 5.0, 13.0);
  ego.v = v0;

  // Archetype control programs.
  double cruise_a0 = urand(rng, -0.6, 0.6), cruise_a1 = urand(rng, -0.6, 0.6);
  double curve_w = (irand(rng, 0, 1) ? 1.0 : -1.0) * urand(rng, 0.02, 0.06);
  double turn_t0 = urand(rng, 1.5, 3.0);
  double turn_tau = urand(rng, 1.5, 2.5);
  double turn_w = urand(rng, 0.28, 0.5) * (archetype == kRightTurn ? -1.0 : 1.0);
  double turn_speed = std::min(v0, urand(rng, 4.0, 7.0));
  double lead_gap = urand(rng, 18.0, 30.0);
  double lead_brake_t = urand(rng, 2.0, 4.0);
  double lead_decel = urand(rng, 2.5, 3.5);
  double lead_vstop = urand(rng, 0.0, 1.5);
  double ped_dist = urand(rng, 18.0, 30.0);
  double ped_speed = urand(rng, 0.9, 1.5);
  double ped_side = irand(rng, 0, 1) ? 1.0 : -1.0;

  // Interacting agents live along the ego's initial heading (straight lane
  // archetypes only).
  const Vec2 fwd{std::cos(ego.yaw), std::sin(ego.yaw)};
  const Vec2 left{-fwd.y, fwd.x};
  const Vec2 start{ego.x, ego.y};

  double lead_s = lead_gap;  // arclength position of lead vehicle along lane
  double lead_v = v0;
  Vec2 ped_pos = start + fwd * ped_dist + left * (ped_side * 7.5);
  const Vec2 ped_vel = left * (-ped_side * ped_speed);

  std::vector<Vec2> ego_path_fine;  // for lane construction
  ego_path_fine.push_back(start);

  sc.ego_pose.reserve(n_ticks);
  auto record_tick = [&](double a_cmd, double w_cmd) {
    sc.ego_pose.emplace_back(ego.x, ego.y, ego.yaw);
    sc.ego_speed.push_back(ego.v);
    sc.ego_accel.push_back(a_cmd);
    sc.ego_yaw_rate.push_back(w_cmd);
  };

  std::vector<Vec2> lead_positions, ped_positions;
  std::vector<double> lead_speeds;

  double t = 0.0;
  for (int ti = 0; ti < n_ticks; ++ti) {
    // Controls for this tick.
    double a_cmd = 0.0, w_cmd = 0.0;
    switch (archetype) {
      case kCruise:
        a_cmd = t < cfg.scenario.duration / 2 ? cruise_a0 : cruise_a1;
        break;
      case kCurve:
        a_cmd = 0.15 * (v0 - ego.v);
        w_cmd = curve_w;
        break;
      case kLeftTurn:
      case kRightTurn: {
        const bool turning = t >= turn_t0 && t < turn_t0 + turn_tau;
        const bool before = t < turn_t0;
        w_cmd = turning ? turn_w : 0.0;
        const double target = (turning || before) ? turn_speed : v0;
        a_cmd = std::clamp(1.2 * (target - ego.v), -3.0, 1.5);
        break;
      }
      case kLeadBrake: {
        const double gap = lead_s - ((Vec2{ego.x, ego.y} - start).x * fwd.x +
                                     (Vec2{ego.x, ego.y} - start).y * fwd.y);
        const double desired = 6.0 + 1.4 * ego.v;
        a_cmd = std::clamp(0.5 * (gap - desired) + 1.2 * (lead_v - ego.v), -a_lim, 1.2);
        break;
      }
      case kCrossingPed: {
        const Vec2 rel = ped_pos - Vec2{ego.x, ego.y};
        const double lon = rel.x * fwd.x + rel.y * fwd.y;
        const double lat = rel.x * left.x + rel.y * left.y;
        const bool threat = lon > 2.0 && std::abs(lat) < 4.0;
        if (threat) {
          const double desired = 7.0;
          a_cmd = std::clamp(0.6 * (lon - 4.0 - desired) + 1.2 * (0.0 - ego.v), -a_lim, 1.2);
        } else {
          a_cmd = std::clamp(0.5 * (v0 - ego.v), -1.0, 1.2);
        }
        break;
      }
    }
    a_cmd = std::clamp(a_cmd, -a_lim, a_lim);
    w_cmd = std::clamp(w_cmd, -w_lim, w_lim);
    record_tick(a_cmd, w_cmd);
    lead_positions.push_back(start + fwd * lead_s);
    lead_speeds.push_back(lead_v);
    ped_positions.push_back(ped_pos);

    if (ti + 1 == n_ticks) break;

    for (int k = 0; k < kSubsteps; ++k) {
      ego.x += ego.v * std::cos(ego.yaw) * h;
      ego.y += ego.v * std::sin(ego.yaw) * h;
      ego.yaw = wrap_angle(ego.yaw + w_cmd * h);
      ego.v = std::max(0.0, ego.v + a_cmd * h);
      // Agents.
      if (archetype == kLeadBrake) {
        if (t + (k + 1) * h >= lead_brake_t && lead_v > lead_vstop)
          lead_v = std::max(lead_vstop, lead_v - lead_decel * h);
        lead_s += lead_v * h;
      }
      if (archetype == kCrossingPed) ped_pos = ped_pos + ped_vel * h;
    }
    ego_path_fine.push_back({ego.x, ego.y});
    t += tick;
  }

  // Lanes: the driven centerline, extended straight at both ends, plus a
  // parallel neighbor lane 3.5 m to the left.
  PathRef path;
  {
    std::vector<Vec2> raw;
    const Vec2 head0{std::cos(sc.ego_pose.front().yaw), std::sin(sc.ego_pose.front().yaw)};
    raw.push_back(start - head0 * 30.0);
    for (const auto& p : ego_path_fine) raw.push_back(p);
    const double yawN = sc.ego_pose.back().yaw;
    const Vec2 headN{std::cos(yawN), std::sin(yawN)};
    raw.push_back(ego_path_fine.back() + headN * 60.0);
    path.build(raw);
  }
  auto sample_lane = [&](double lateral) {
    std::vector<Vec2> lane;
    for (double arc = 0.0; arc <= path.total(); arc += 2.0) lane.push_back(path.point(arc, lateral));
    return lane;
  };
  sc.lanes.push_back(sample_lane(0.0));
  sc.lanes.push_back(sample_lane(3.5));

  // Ambient agents: parked vehicles off the right shoulder and an oncoming
  // vehicle in the neighbor lane. Lateral offsets keep them clear of the ego.
  struct Ambient {
    double arc0, lateral, speed, length, width;
    int cls;
  };
  std::vector<Ambient> ambients;
  const int n_parked = irand(rng, 1, 2);
  for (int i = 0; i < n_parked; ++i)
    ambients.push_back({urand(rng, 35.0, 30.0 + path.total() * 0.6), -urand(rng, 5.5, 8.0), 0.0,
                        urand(rng, 4.0, 5.0), urand(rng, 1.7, 2.0), 0});
  if (irand(rng, 0, 1) == 1)
    ambients.push_back({30.0 + path.total() * urand(rng, 0.5, 0.9), 3.5, -urand(rng, 4.0, 8.0),
                        urand(rng, 4.0, 5.0), urand(rng, 1.7, 2.0), 0});

  sc.agents.assign(n_ticks, {});
  for (int ti = 0; ti < n_ticks; ++ti) {
    int next_id = 1;
    auto& frame = sc.agents[ti];
    const double tt = sc.time_at(ti);
    if (archetype == kLeadBrake) {
      const Vec2 p = lead_positions[ti];
      frame.push_back({next_id++, 0,
                       OrientedBox{Pose2(p.x, p.y, sc.ego_pose.front().yaw), 4.6, 1.9},
                       fwd * lead_speeds[ti]});
    }
    if (archetype == kCrossingPed) {
      const Vec2 p = ped_positions[ti];
      frame.push_back({next_id++, 1,
                       OrientedBox{Pose2(p.x, p.y, std::atan2(ped_vel.y, ped_vel.x)), 0.7, 0.7},
                       ped_vel});
    }
    for (const auto& amb : ambients) {
      const double arc = amb.arc0 + amb.speed * tt;
      const Vec2 p = path.point(arc, amb.lateral);
      const Vec2 p2 = path.point(arc + (amb.speed < 0 ? -1.0 : 1.0), amb.lateral);
      const double yaw = std::atan2(p2.y - p.y, p2.x - p.x);
      const Vec2 tangent{std::cos(yaw), std::sin(yaw)};
      frame.push_back({next_id++, amb.cls, OrientedBox{Pose2(p.x, p.y, yaw), amb.length, amb.width},
                       tangent * std::abs(amb.speed)});
    }
  }

  // Command labels from net yaw change over the forward window.
  const int w_ticks = static_cast<int>(std::llround(cfg.scenario.command_window / tick));
  sc.command.resize(n_ticks);
  for (int ti = 0; ti < n_ticks; ++ti) {
    const int t2 = std::min(ti + w_ticks, n_ticks - 1);
    const double net = wrap_angle(sc.ego_pose[t2].yaw - sc.ego_pose[ti].yaw);
    sc.command[ti] = net > cfg.scenario.command_yaw_threshold    ? Command::LeftTurn
                     : net < -cfg.scenario.command_yaw_threshold ? Command::RightTurn
                                                                 : Command::Forward;
  }

  GenResult out;
  out.scenario = std::move(sc);
  // Expert path must be collision free against its own agents.
  for (int ti = 0; ti < n_ticks && out.collision_free; ++ti) {
    const OrientedBox ego_box{out.scenario.ego_pose[ti], cfg.eval.ego_length, cfg.eval.ego_width};
    for (const auto& ag : out.scenario.agents[ti])
      if (boxes_overlap(ego_box, ag.box)) {
        out.collision_free = false;
        break;
      }
  }
  return out;
}

}  // namespace

const Scenario& Dataset::by_id(const std::string& id) const {
  auto it = index.find(id);
  if (it == index.end()) throw DataError(kModule, "unknown scenario id '" + id + "'");
  return scenarios[it->second];
}

Dataset generate_dataset(const RunConfig& cfg, std::uint64_t seed) {
  const int total = cfg.scenario.count_train + cfg.scenario.count_val + cfg.scenario.count_test;
  if (total <= 0) throw ConfigError(kModule, "scenario counts must be positive");
  double wsum = 0.0;
  for (double w : cfg.scenario.archetype_weights) wsum += w;
  if (wsum <= 0.0) throw ConfigError(kModule, "archetype weights must sum to > 0");

  Dataset ds;
  ds.split.seed = seed;
  ds.split.cfg_hash = config_hash(cfg);
  ds.scenarios.reserve(total);
  for (int i = 0; i < total; ++i) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    // Weighted archetype choice.
    double u = urand(rng, 0.0, wsum);
    int archetype = 0;
    for (int a = 0; a < 6; ++a) {
      u -= cfg.scenario.archetype_weights[a];
      if (u <= 0.0) {
        archetype = a;
        break;
      }
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scn-%06d", i);
    GenResult res = simulate_once(cfg, rng, archetype, buf);
    for (int attempt = 0; attempt < 20 && !res.collision_free; ++attempt)
      res = simulate_once(cfg, rng, archetype, buf);
    if (!res.collision_free)
      throw ConfigError(kModule, std::string("could not generate collision-free scenario ") + buf);
    ds.index[res.scenario.id] = static_cast<int>(ds.scenarios.size());
    const std::string sid = res.scenario.id;
    ds.scenarios.push_back(std::move(res.scenario));
    if (i < cfg.scenario.count_train)
      ds.split.train.push_back(sid);
    else if (i < cfg.scenario.count_train + cfg.scenario.count_val)
      ds.split.val.push_back(sid);
    else
      ds.split.test.push_back(sid);
  }
  return ds;
}

namespace {

json scenario_to_json(const Scenario& s) {
  json j;
  j["id"] = s.id;
  j["tick"] = s.tick;
  j["duration"] = s.duration;
  j["weather"] = s.weather;
  j["timeofday"] = s.timeofday;
  json ego = json::array();
  for (const auto& p : s.ego_pose) ego.push_back(json::array({p.x, p.y, p.yaw}));
  j["ego"] = std::move(ego);
  j["speed"] = s.ego_speed;
  j["accel"] = s.ego_accel;
  j["yaw_rate"] = s.ego_yaw_rate;
  json cmd = json::array();
  for (Command c : s.command) cmd.push_back(static_cast<int>(c));
  j["command"] = std::move(cmd);
  json lanes = json::array();
  for (const auto& lane : s.lanes) {
    json pl = json::array();
    for (const auto& p : lane) pl.push_back(json::array({p.x, p.y}));
    lanes.push_back(std::move(pl));
  }
  j["lanes"] = std::move(lanes);
  json agents = json::array();
  for (const auto& frame : s.agents) {
    json fr = json::array();
    for (const auto& a : frame)
      fr.push_back(json::array({a.id, a.cls, a.box.center.x, a.box.center.y, a.box.center.yaw,
                                a.box.length, a.box.width, a.velocity.x, a.velocity.y}));
    agents.push_back(std::move(fr));
  }
  j["agents"] = std::move(agents);
  return j;
}

Scenario scenario_from_json(const json& j) {
  Scenario s;
  s.id = j.at("id").get<std::string>();
  s.tick = j.at("tick").get<double>();
  s.duration = j.at("duration").get<double>();
  s.weather = j.at("weather").get<int>();
  s.timeofday = j.at("timeofday").get<int>();
  for (const auto& p : j.at("ego")) s.ego_pose.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
  s.ego_speed = j.at("speed").get<std::vector<double>>();
  s.ego_accel = j.at("accel").get<std::vector<double>>();
  s.ego_yaw_rate = j.at("yaw_rate").get<std::vector<double>>();
  for (const auto& c : j.at("command")) s.command.push_back(static_cast<Command>(c.get<int>()));
  for (const auto& pl : j.at("lanes")) {
    std::vector<Vec2> lane;
    for (const auto& p : pl) lane.push_back({p[0].get<double>(), p[1].get<double>()});
    s.lanes.push_back(std::move(lane));
  }
  for (const auto& fr : j.at("agents")) {
    std::vector<AgentState> frame;
    for (const auto& a : fr) {
      AgentState ag;
      ag.id = a[0].get<int>();
      ag.cls = a[1].get<int>();
      ag.box = OrientedBox{Pose2(a[2].get<double>(), a[3].get<double>(), a[4].get<double>()),
                           a[5].get<double>(), a[6].get<double>()};
      ag.velocity = {a[7].get<double>(), a[8].get<double>()};
      frame.push_back(ag);
    }
    s.agents.push_back(std::move(frame));
  }
  const std::size_t n = s.ego_pose.size();
  if (s.ego_speed.size() != n || s.ego_accel.size() != n || s.ego_yaw_rate.size() != n ||
      s.command.size() != n || s.agents.size() != n)
    throw FormatError(kModule, "scenario '" + s.id + "' has inconsistent per-tick arrays");
  return s;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError(kModule, "cannot write dataset '" + path.string() + "'");
  json header;
  header["format_version"] = kDatasetVersion;
  header["kind"] = "dualplan.dataset";
  header["seed"] = ds.split.seed;
  header["config_hash"] = ds.split.cfg_hash;
  header["splits"] = json{{"train", ds.split.train}, {"val", ds.split.val}, {"test", ds.split.test}};
  f << header.dump() << "\n";
  for (const auto& s : ds.scenarios) f << scenario_to_json(s).dump() << "\n";
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError(kModule, "cannot open dataset '" + path.string() + "'");
  std::string line;
  int line_no = 0;
  Dataset ds;
  std::size_t expected = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(kModule, "dataset parse error at line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (line_no == 1) {
        const int version = j.at("format_version").get<int>();
        if (version != kDatasetVersion)
          throw FormatError(kModule, "dataset format_version mismatch: expected " +
                                         std::to_string(kDatasetVersion) + ", got " + std::to_string(version));
        ds.split.seed = j.at("seed").get<std::uint64_t>();
        ds.split.cfg_hash = j.at("config_hash").get<std::uint64_t>();
        ds.split.train = j.at("splits").at("train").get<std::vector<std::string>>();
        ds.split.val = j.at("splits").at("val").get<std::vector<std::string>>();
        ds.split.test = j.at("splits").at("test").get<std::vector<std::string>>();
        expected = ds.split.train.size() + ds.split.val.size() + ds.split.test.size();
      } else {
        Scenario s = scenario_from_json(j);
        ds.index[s.id] = static_cast<int>(ds.scenarios.size());
        ds.scenarios.push_back(std::move(s));
      }
    } catch (const json::exception& e) {
      throw FormatError(kModule, "dataset schema error at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (line_no == 0) throw FormatError(kModule, "dataset file is empty");
  if (ds.scenarios.size() != expected)
    throw FormatError(kModule, "dataset truncated at line " + std::to_string(line_no) + ": header lists " +
                                   std::to_string(expected) + " scenarios, found " +
                                   std::to_string(ds.scenarios.size()));
  return ds;
}

void export_expert_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError(kModule, "cannot write csv '" + path.string() + "'");
  f << "scenario_id,tick,time_s,x,y,yaw,speed,accel,yaw_rate,command\n";
  char buf[256];
  for (const auto& s : ds.scenarios)
    for (int t = 0; t < s.ticks(); ++t) {
      std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s\n",
                    s.id.c_str(), t, s.time_at(t), s.ego_pose[t].x, s.ego_pose[t].y,
                    s.ego_pose[t].yaw, s.ego_speed[t], s.ego_accel[t], s.ego_yaw_rate[t],
                    to_string(s.command[t]));
      f << buf;
    }
}

SceneFeatures render_features(const Scenario& s, int tick, const CompressorConfig& cc) {
  if (tick < 0 || tick >= s.ticks()) throw OutOfRange(kModule, "render tick out of range");
  SceneFeatures sf;
  sf.hw = cc.grid_hw;
  sf.channels = cc.channels;
  sf.cell_m = cc.cell_m;
  const int hw = cc.grid_hw;
  sf.grid.assign(static_cast<std::size_t>(cc.channels) * hw * hw, 0.0);
  sf.cell_xy.assign(static_cast<std::size_t>(hw) * hw * 2, 0.0);
  const double range = hw * cc.cell_m * 0.5;
  const Pose2 ego = s.ego_pose[tick];
  const Pose2 world_from_ego = ego;

  auto grid_at = [&](int c, int r, int col) -> double& {
    return sf.grid[(static_cast<std::size_t>(c) * hw + r) * hw + col];
  };

  // Channels: 0 drivable, 1 lane centerline, 2 agent occupancy,
  // 3|4 agent velocity (ego frame), 5 static-cue broadcast.
  const double static_cue = (s.weather * 2 + s.timeofday + 1) / 6.0;
  for (int r = 0; r < hw; ++r)
    for (int col = 0; col < hw; ++col) {
      const double cx = (col + 0.5) * cc.cell_m - range;  // ego-frame x (forward)
      const double cy = (r + 0.5) * cc.cell_m - range;    // ego-frame y (left)
      sf.cell_xy[(static_cast<std::size_t>(r) * hw + col) * 2 + 0] = cx;
      sf.cell_xy[(static_cast<std::size_t>(r) * hw + col) * 2 + 1] = cy;
      const Vec2 world = world_from_ego.apply({cx, cy});
      double lane_dist = INFINITY;
      for (const auto& lane : s.lanes)
        for (std::size_t i = 0; i + 1 < lane.size(); ++i) {
          const Vec2 a = lane[i], b = lane[i + 1];
          const Vec2 ab = b - a;
          const double len2 = ab.x * ab.x + ab.y * ab.y;
          double u = len2 > 1e-12 ? ((world.x - a.x) * ab.x + (world.y - a.y) * ab.y) / len2 : 0.0;
          u = std::clamp(u, 0.0, 1.0);
          lane_dist = std::min(lane_dist, (world - (a + ab * u)).norm());
        }
      if (lane_dist < 4.0) grid_at(0, r, col) = 1.0;
      if (lane_dist < 1.0) grid_at(1, r, col) = 1.0;
      grid_at(5, r, col) = static_cue;
    }

  for (const auto& ag : s.agents[tick]) {
    // Cell-center containment; box test in the agent's own frame.
    const Pose2 box_from_world = ag.box.center.inverse();
    const Vec2 v_ego = {std::cos(-ego.yaw) * ag.velocity.x - std::sin(-ego.yaw) * ag.velocity.y,
                        std::sin(-ego.yaw) * ag.velocity.x + std::cos(-ego.yaw) * ag.velocity.y};
    for (int r = 0; r < hw; ++r)
      for (int col = 0; col < hw; ++col) {
        const double cx = sf.cell_xy[(static_cast<std::size_t>(r) * hw + col) * 2 + 0];
        const double cy = sf.cell_xy[(static_cast<std::size_t>(r) * hw + col) * 2 + 1];
        const Vec2 world = world_from_ego.apply({cx, cy});
        const Vec2 local = box_from_world.apply(world);
        if (std::abs(local.x) <= ag.box.length * 0.5 && std::abs(local.y) <= ag.box.width * 0.5) {
          grid_at(2, r, col) = 1.0;
          grid_at(3, r, col) = v_ego.x;
          grid_at(4, r, col) = v_ego.y;
        }
      }
  }
  return sf;
}

PerceptionTargets make_targets(const Scenario& s, int tick, const CompressorConfig& cc) {
  if (tick < 0 || tick >= s.ticks()) throw OutOfRange(kModule, "target tick out of range");
  PerceptionTargets tg;
  tg.weather = s.weather;
  tg.timeofday = s.timeofday;
  const double range = cc.grid_hw * cc.cell_m * 0.5;
  const Pose2 ego_from_world = s.ego_pose[tick].inverse();
  double nearest = range;
  for (const auto& ag : s.agents[tick]) {
    const Vec2 local = ego_from_world.apply({ag.box.center.x, ag.box.center.y});
    if (std::abs(local.x) > range || std::abs(local.y) > range) continue;
    const double yaw_local = wrap_angle(ag.box.center.yaw - s.ego_pose[tick].yaw);
    tg.boxes.push_back({local.x, local.y, yaw_local, ag.box.length, ag.box.width, ag.cls});
    nearest = std::min(nearest, local.norm());
  }
  tg.agent_count = static_cast<double>(tg.boxes.size());
  tg.nearest_dist = nearest;

  for (const auto& lane : s.lanes) {
    // Clip the polyline to the grid window, then resample to control points.
    std::vector<Vec2> local_pts;
    for (const auto& p : lane) {
      const Vec2 q = ego_from_world.apply(p);
      if (std::abs(q.x) <= range && std::abs(q.y) <= range) local_pts.push_back(q);
    }
    if (local_pts.size() < 2) continue;
    std::vector<double> arc(local_pts.size(), 0.0);
    for (std::size_t i = 1; i < local_pts.size(); ++i)
      arc[i] = arc[i - 1] + (local_pts[i] - local_pts[i - 1]).norm();
    std::vector<Vec2> ctrl;
    for (int k = 0; k < cc.lane_ctrl_points; ++k) {
      const double target = arc.back() * k / (cc.lane_ctrl_points - 1);
      std::size_t i = 0;
      while (i + 1 < arc.size() && arc[i + 1] < target) ++i;
      const double seg = arc[i + 1 >= arc.size() ? i : i + 1] - arc[i];
      const double u = seg > 1e-12 ? (target - arc[i]) / seg : 0.0;
      const std::size_t j = std::min(i + 1, local_pts.size() - 1);
      ctrl.push_back(local_pts[i] + (local_pts[j] - local_pts[i]) * u);
    }
    tg.lane_ctrl.push_back(std::move(ctrl));
  }
  return tg;
}

std::vector<int> eligible_ticks(const Scenario& s, const GridConfig& g) {
  std::vector<int> out;
  const int lo = g.history - 1;
  const int hi = s.ticks() - 1 - g.long_horizon;
  for (int t = lo; t <= hi; ++t) out.push_back(t);
  return out;
}

FrameSample make_frame(const Scenario& s, int tick, const GridConfig& g) {
  const int lo = g.history - 1;
  const int hi = s.ticks() - 1 - g.long_horizon;
  if (tick < lo || tick > hi)
    throw OutOfRange(kModule, "tick " + std::to_string(tick) + " lacks history or future context");
  FrameSample fr;
  fr.scenario = &s;
  fr.tick_index = tick;
  fr.time = s.time_at(tick);
  fr.ego_pose = s.ego_pose[tick];
  const Pose2 ego_from_world = fr.ego_pose.inverse();

  Trajectory hist;
  hist.start_time = -g.dt * (g.history - 1);
  hist.dt = g.dt;
  hist.frame = fr.ego_pose;
  for (int i = tick - (g.history - 1); i <= tick; ++i)
    hist.waypoints.push_back(ego_from_world.apply({s.ego_pose[i].x, s.ego_pose[i].y}));

  fr.status.speed = s.ego_speed[tick];
  fr.status.accel = s.ego_accel[tick];
  fr.status.yaw_rate = s.ego_yaw_rate[tick];
  fr.status.command = s.command[tick];
  fr.status.history = std::move(hist);

  fr.future_long.start_time = g.dt;
  fr.future_long.dt = g.dt;
  fr.future_long.frame = fr.ego_pose;
  for (int i = tick + 1; i <= tick + g.long_horizon; ++i)
    fr.future_long.waypoints.push_back(ego_from_world.apply({s.ego_pose[i].x, s.ego_pose[i].y}));

  fr.future_fast = fr.future_long;
  fr.future_fast.waypoints.resize(g.fast_horizon);
  return fr;
}

OrientedBox ego_box_at(const Scenario& s, int tick, const EvalConfig& e) {
  return OrientedBox{s.ego_pose[tick], e.ego_length, e.ego_width};
}

}  // namespace dualplan
