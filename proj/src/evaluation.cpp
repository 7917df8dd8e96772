#include "dualplan/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace dualplan {

namespace {

constexpr const char* kModule = "evaluation";
using json = nlohmann::json;

json traj_to_json(const Trajectory& t) {
  json w = json::array();
  for (const auto& p : t.waypoints) w.push_back(json::array({p.x, p.y}));
  return json{{"start_time", t.start_time}, {"dt", t.dt}, {"waypoints", std::move(w)}};
}

Trajectory traj_from_json(const json& j) {
  Trajectory t;
  t.start_time = j.at("start_time").get<double>();
  t.dt = j.at("dt").get<double>();
  for (const auto& p : j.at("waypoints")) t.waypoints.push_back({p[0].get<double>(), p[1].get<double>()});
  return t;
}

}  // namespace

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::Chain: return "chain";
    case Provenance::E2E: return "e2e";
    case Provenance::E2EAsync: return "e2e_async";
  }
  return "e2e";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "chain") return Provenance::Chain;
  if (s == "e2e") return Provenance::E2E;
  if (s == "e2e_async") return Provenance::E2EAsync;
  throw FormatError(kModule, "unknown provenance '" + s + "'");
}

void save_traces(const std::vector<PlanTrace>& traces, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError(kModule, "cannot write traces '" + path.string() + "'");
  for (const auto& tr : traces) {
    json j;
    j["scenario_id"] = tr.scenario_id;
    j["tick_index"] = tr.tick_index;
    j["tick_time"] = tr.tick_time;
    j["provenance"] = to_string(tr.prov);
    j["used_synergy"] = tr.used_synergy;
    j["record_age_s"] = tr.record_age;
    j["ego_pose"] = json::array({tr.ego_pose.x, tr.ego_pose.y, tr.ego_pose.yaw});
    j["plan"] = traj_to_json(tr.plan);
    f << j.dump() << "\n";
  }
}

std::vector<PlanTrace> load_traces(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError(kModule, "cannot open traces '" + path.string() + "'");
  std::vector<PlanTrace> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      PlanTrace tr;
      tr.scenario_id = j.at("scenario_id").get<std::string>();
      tr.tick_index = j.at("tick_index").get<int>();
      tr.tick_time = j.at("tick_time").get<double>();
      tr.prov = provenance_from_string(j.at("provenance").get<std::string>());
      tr.used_synergy = j.at("used_synergy").get<bool>();
      tr.record_age = j.at("record_age_s").get<double>();
      const auto& ep = j.at("ego_pose");
      tr.ego_pose = Pose2(ep[0].get<double>(), ep[1].get<double>(), ep[2].get<double>());
      tr.plan = traj_from_json(j.at("plan"));
      tr.plan.frame = tr.ego_pose;
      out.push_back(std::move(tr));
    } catch (const json::exception& e) {
      throw FormatError(kModule, "trace parse error at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

bool collision_at(const Trajectory& plan_world, double ego_length, double ego_width,
                  const std::vector<std::vector<OrientedBox>>& agents_per_step, double horizon,
                  double initial_heading) {
  plan_world.validate("collision_at");
  double prev_heading = initial_heading;
  Vec2 prev_pos{plan_world.frame.x, plan_world.frame.y};
  for (std::size_t i = 0; i < plan_world.waypoints.size(); ++i) {
    const double t = plan_world.time_at(i);  // offset from the planning instant
    if (t > horizon + 1e-9) break;
    if (i >= agents_per_step.size())
      throw DataError(kModule, "missing agent frames for step " + std::to_string(i));
    const Vec2 pos = plan_world.waypoints[i];
    const Vec2 d = pos - prev_pos;
    const double heading = d.norm() > 1e-6 ? std::atan2(d.y, d.x) : prev_heading;
    const OrientedBox ego{Pose2(pos.x, pos.y, heading), ego_length, ego_width};
    for (const auto& agent : agents_per_step[i])
      if (boxes_overlap(ego, agent)) return true;
    prev_heading = heading;
    prev_pos = pos;
  }
  return false;
}

FrameResult evaluate_frame(const Scenario& scenario, const PlanTrace& trace, const EvalConfig& ec,
                           const GridConfig& gc) {
  FrameResult fr;
  fr.scenario_id = trace.scenario_id;
  fr.tick_time = trace.tick_time;
  fr.prov = trace.prov;

  const int tick = trace.tick_index;
  const int need = static_cast<int>(std::llround(3.0 / gc.dt));
  if (tick < 0 || tick + need >= scenario.ticks())
    throw DataError(kModule, "trace tick " + std::to_string(tick) + " lacks 3 s of ground truth");

  Trajectory plan_world = trace.plan;
  plan_world.frame = trace.ego_pose;
  plan_world = transform_trajectory(plan_world, trace.ego_pose, Pose2());

  Trajectory gt_world;
  gt_world.start_time = gc.dt;
  gt_world.dt = gc.dt;
  const int gt_steps = std::min(scenario.ticks() - 1 - tick, need);
  for (int i = 1; i <= gt_steps; ++i)
    gt_world.waypoints.push_back({scenario.ego_pose[tick + i].x, scenario.ego_pose[tick + i].y});

  fr.l2_1s = l2_at(plan_world, gt_world, 1.0);
  fr.l2_2s = l2_at(plan_world, gt_world, 2.0);
  fr.l2_3s = l2_at(plan_world, gt_world, 3.0);

  std::vector<std::vector<OrientedBox>> agents;
  const int steps = std::min<int>(static_cast<int>(plan_world.waypoints.size()), need);
  for (int i = 1; i <= steps; ++i) {
    std::vector<OrientedBox> frame_boxes;
    for (const auto& ag : scenario.agents[tick + i]) frame_boxes.push_back(ag.box);
    agents.push_back(std::move(frame_boxes));
  }
  fr.col_1s = collision_at(plan_world, ec.ego_length, ec.ego_width, agents, 1.0, trace.ego_pose.yaw);
  fr.col_2s = collision_at(plan_world, ec.ego_length, ec.ego_width, agents, 2.0, trace.ego_pose.yaw);
  fr.col_3s = collision_at(plan_world, ec.ego_length, ec.ego_width, agents, 3.0, trace.ego_pose.yaw);
  return fr;
}

BenchmarkReport aggregate(const std::vector<FrameResult>& frames) {
  BenchmarkReport rep;
  std::map<std::string, std::vector<const FrameResult*>> groups;
  std::map<std::string, bool> seen_scenarios_helper;
  std::vector<std::string> scenario_ids;
  for (const auto& fr : frames) {
    groups[to_string(fr.prov)].push_back(&fr);
    if (!seen_scenarios_helper[fr.scenario_id]) {
      seen_scenarios_helper[fr.scenario_id] = true;
      scenario_ids.push_back(fr.scenario_id);
    }
  }
  rep.scenario_count = scenario_ids.size();
  for (const auto& [name, list] : groups) {
    ProvenanceStats st;
    st.frames = list.size();
    for (const FrameResult* fr : list) {
      st.l2_1s += fr->l2_1s;
      st.l2_2s += fr->l2_2s;
      st.l2_3s += fr->l2_3s;
      st.col_1s += fr->col_1s ? 1.0 : 0.0;
      st.col_2s += fr->col_2s ? 1.0 : 0.0;
      st.col_3s += fr->col_3s ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(st.frames);
    st.l2_1s /= n;
    st.l2_2s /= n;
    st.l2_3s /= n;
    st.l2_avg = (st.l2_1s + st.l2_2s + st.l2_3s) / 3.0;
    st.col_1s = 100.0 * st.col_1s / n;
    st.col_2s = 100.0 * st.col_2s / n;
    st.col_3s = 100.0 * st.col_3s / n;
    st.col_avg = (st.col_1s + st.col_2s + st.col_3s) / 3.0;
    rep.by_provenance[name] = st;
  }
  return rep;
}

BenchmarkReport evaluate(const std::vector<PlanTrace>& traces, const Dataset& ds,
                         const EvalConfig& ec, const GridConfig& gc,
                         std::vector<FrameResult>* frames_out) {
  std::vector<FrameResult> frames;
  frames.reserve(traces.size());
  for (const auto& tr : traces) frames.push_back(evaluate_frame(ds.by_id(tr.scenario_id), tr, ec, gc));
  if (frames_out != nullptr) *frames_out = frames;
  return aggregate(frames);
}

std::string BenchmarkReport::to_text() const {
  std::ostringstream os;
  char buf[256];
  os << "open-loop planning results (" << scenario_count << " scenarios)\n";
  std::snprintf(buf, sizeof(buf), "%-10s | %7s %7s %7s %7s | %7s %7s %7s %7s | %8s\n", "planner",
                "L2@1s", "L2@2s", "L2@3s", "L2 avg", "col@1s", "col@2s", "col@3s", "col avg",
                "frames");
  os << buf;
  os << std::string(98, '-') << "\n";
  for (const auto& [name, st] : by_provenance) {
    std::snprintf(buf, sizeof(buf),
                  "%-10s | %7.3f %7.3f %7.3f %7.3f | %7.3f %7.3f %7.3f %7.3f | %8zu\n", name.c_str(),
                  st.l2_1s, st.l2_2s, st.l2_3s, st.l2_avg, st.col_1s, st.col_2s, st.col_3s,
                  st.col_avg, st.frames);
    os << buf;
  }
  return os.str();
}

std::string BenchmarkReport::to_csv() const {
  std::ostringstream os;
  os << "planner,l2_1s,l2_2s,l2_3s,l2_avg,col_1s,col_2s,col_3s,col_avg,frames\n";
  char buf[256];
  for (const auto& [name, st] : by_provenance) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu\n",
                  name.c_str(), st.l2_1s, st.l2_2s, st.l2_3s, st.l2_avg, st.col_1s, st.col_2s,
                  st.col_3s, st.col_avg, st.frames);
    os << buf;
  }
  return os.str();
}

std::string BenchmarkReport::to_json() const {
  json j;
  j["kind"] = "dualplan.report";
  j["format_version"] = 1;
  j["scenario_count"] = scenario_count;
  j["config_hash"] = cfg_hash;
  j["seeds"] = seeds;
  json by;
  for (const auto& [name, st] : by_provenance)
    by[name] = json{{"l2_1s", st.l2_1s},   {"l2_2s", st.l2_2s},   {"l2_3s", st.l2_3s},
                    {"l2_avg", st.l2_avg}, {"col_1s", st.col_1s}, {"col_2s", st.col_2s},
                    {"col_3s", st.col_3s}, {"col_avg", st.col_avg}, {"frames", st.frames}};
  j["by_provenance"] = std::move(by);
  return j.dump(2);
}

BenchmarkReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != 1)
      throw FormatError(kModule, "report format_version mismatch");
    BenchmarkReport rep;
    rep.scenario_count = j.at("scenario_count").get<std::size_t>();
    rep.cfg_hash = j.at("config_hash").get<std::uint64_t>();
    rep.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (auto it = j.at("by_provenance").begin(); it != j.at("by_provenance").end(); ++it) {
      ProvenanceStats st;
      st.l2_1s = it.value().at("l2_1s").get<double>();
      st.l2_2s = it.value().at("l2_2s").get<double>();
      st.l2_3s = it.value().at("l2_3s").get<double>();
      st.l2_avg = it.value().at("l2_avg").get<double>();
      st.col_1s = it.value().at("col_1s").get<double>();
      st.col_2s = it.value().at("col_2s").get<double>();
      st.col_3s = it.value().at("col_3s").get<double>();
      st.col_avg = it.value().at("col_avg").get<double>();
      st.frames = it.value().at("frames").get<std::size_t>();
      rep.by_provenance[it.key()] = st;
    }
    return rep;
  } catch (const json::exception& e) {
    throw FormatError(kModule, std::string("report parse error: ") + e.what());
  }
}

void save_frame_results(const std::vector<FrameResult>& frames, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError(kModule, "cannot write frame results '" + path.string() + "'");
  for (const auto& fr : frames) {
    json j;
    j["scenario_id"] = fr.scenario_id;
    j["tick_time"] = fr.tick_time;
    j["provenance"] = to_string(fr.prov);
    j["l2_1s"] = fr.l2_1s;
    j["l2_2s"] = fr.l2_2s;
    j["l2_3s"] = fr.l2_3s;
    j["col_1s"] = fr.col_1s;
    j["col_2s"] = fr.col_2s;
    j["col_3s"] = fr.col_3s;
    f << j.dump() << "\n";
  }
}

std::vector<FrameResult> load_frame_results(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError(kModule, "cannot open frame results '" + path.string() + "'");
  std::vector<FrameResult> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      FrameResult fr;
      fr.scenario_id = j.at("scenario_id").get<std::string>();
      fr.tick_time = j.at("tick_time").get<double>();
      fr.prov = provenance_from_string(j.at("provenance").get<std::string>());
      fr.l2_1s = j.at("l2_1s").get<double>();
      fr.l2_2s = j.at("l2_2s").get<double>();
      fr.l2_3s = j.at("l2_3s").get<double>();
      fr.col_1s = j.at("col_1s").get<bool>();
      fr.col_2s = j.at("col_2s").get<bool>();
      fr.col_3s = j.at("col_3s").get<bool>();
      out.push_back(std::move(fr));
    } catch (const json::exception& e) {
      throw FormatError(kModule, "frame result parse error at line " + std::to_string(line_no) + ": " +
                                     e.what());
    }
  }
  return out;
}

}  // namespace dualplan
