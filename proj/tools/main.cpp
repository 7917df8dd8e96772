#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "dualplan/bank.hpp"
#include "dualplan/config.hpp"
#include "dualplan/errors.hpp"
#include "dualplan/evaluation.hpp"
#include "dualplan/scenario.hpp"
#include "dualplan/svg.hpp"
#include "dualplan/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dualplan;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Config JSON path")
      ->envname("DUALPLAN_CONFIG");
  cmd->add_option("--out", args.out_dir, "Output directory")->required();
  cmd->add_option("--seed", args.seed, "Override the config seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? default_config() : load_config(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  return cfg;
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command_line, const RunConfig& cfg,
                    const std::optional<fs::path>& dataset,
                    const std::vector<fs::path>& checkpoints) {
  json j;
  j["kind"] = "dualplan.manifest";
  j["command_line"] = command_line;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;
  if (dataset.has_value()) j["dataset_hash"] = hash_file(*dataset);
  if (!checkpoints.empty()) {
    json h;
    for (const auto& p : checkpoints) h[p.filename().string()] = hash_file(p);
    j["checkpoint_hashes"] = std::move(h);
  }
  j["tool_version"] = tool_version();
  j["timestamp"] = iso_timestamp();
  std::ofstream f(out_dir / "manifest.json", std::ios::trunc);
  f << j.dump(2) << "\n";
}

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += " ";
    s += argv[i];
  }
  return s;
}

std::vector<fs::path> bundle_checkpoints(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const char* name : {"compressor.ckpt", "chain.ckpt", "direct.ckpt", "e2e.ckpt", "ego_mlp.ckpt"})
    if (fs::exists(dir / name)) out.push_back(dir / name);
  return out;
}

double mean_val_l2(const PlannerBundle& bundle, const Dataset& ds, int max_scenarios) {
  double total = 0.0;
  std::size_t count = 0;
  int used = 0;
  for (const auto& id : ds.split.val) {
    if (max_scenarios > 0 && used >= max_scenarios) break;
    ++used;
    const Scenario& s = ds.by_id(id);
    TemporalMemory memory(bundle.cfg.compressor.memory_frames);
    for (int tick : eligible_ticks(s, bundle.cfg.grid)) {
      const FrameSample frame = make_frame(s, tick, bundle.cfg.grid);
      const SceneTokens scene = bundle.scene_for_frame(frame, &memory);
      const Trajectory plan = bundle.plan_fast(frame, scene, std::nullopt);
      for (int i = 0; i < bundle.cfg.grid.fast_horizon; ++i) {
        const Vec2 d = plan.waypoints[i] - frame.future_fast.waypoints[i];
        total += d.norm();
        ++count;
      }
    }
  }
  return count ? total / count : 0.0;
}

int cmd_gen_data(const CommonArgs& args, bool export_csv, const std::string& command_line) {
  const RunConfig cfg = resolve_config(args);
  fs::create_directories(args.out_dir);
  const Dataset ds = generate_dataset(cfg, cfg.seed);
  const fs::path data_path = fs::path(args.out_dir) / "dataset.jsonl";
  save_dataset(ds, data_path);
  save_config(cfg, fs::path(args.out_dir) / "config.json");
  if (export_csv) export_expert_csv(ds, fs::path(args.out_dir) / "expert_trajectories.csv");
  write_manifest(args.out_dir, command_line, cfg, data_path, {});
  std::printf("wrote %zu scenarios (%zu train / %zu val / %zu test) to %s\n", ds.scenarios.size(),
              ds.split.train.size(), ds.split.val.size(), ds.split.test.size(),
              data_path.string().c_str());
  return 0;
}

int cmd_build_bank(const CommonArgs& args, const std::string& data_path, int k_override,
                   const std::string& command_line) {
  RunConfig cfg = resolve_config(args);
  if (k_override > 0) cfg.bank.k = k_override;
  fs::create_directories(args.out_dir);
  const Dataset ds = load_dataset(data_path);
  const TrajectoryBank bank = build_bank(ds, cfg, cfg.seed);
  const fs::path bank_path = fs::path(args.out_dir) / "bank.json";
  save_bank(bank, bank_path);
  write_manifest(args.out_dir, command_line, cfg, fs::path(data_path), {});
  for (int c = 0; c < 3; ++c)
    std::printf("%s: %zu entries\n", to_string(static_cast<Command>(c)),
                bank.entries[c].size());
  std::printf("wrote %s\n", bank_path.string().c_str());
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_path, const std::string& bank_path,
              const std::string& stage_name, const std::string& resume_dir,
              const std::string& variant, bool skip_direct, const std::string& sweep,
              const std::string& command_line) {
  RunConfig cfg = resolve_config(args);
  fs::create_directories(args.out_dir);
  const Dataset ds = load_dataset(data_path);
  const TrajectoryBank bank = load_bank(bank_path);
  const bool detonly = variant == "detonly";

  if (!sweep.empty()) {
    std::vector<int> counts;
    std::stringstream ss(sweep);
    std::string item;
    while (std::getline(ss, item, ',')) counts.push_back(std::stoi(item));
    if (counts.empty()) throw ConfigError("cli", "--sweep-collectors needs a count list");
    std::ostringstream table;
    table << "collector_count,val_l2_mean\n";
    std::printf("%-16s %12s\n", "collectors", "val L2 (m)");
    for (int c : counts) {
      RunConfig swept = cfg;
      swept.compressor.n_collect = c;
      Trainer trainer(swept, ds, bank, swept.seed, detonly);
      trainer.run_stage(TrainStage::CompressorPretrain);
      trainer.run_stage(TrainStage::AdapterTrain);
      trainer.run_stage(TrainStage::E2EHeadTrain);
      const double l2 = mean_val_l2(trainer.bundle(), ds, 0);
      char row[64];
      std::snprintf(row, sizeof(row), "%d,%.17g\n", c, l2);
      table << row;
      std::printf("%-16d %12.4f\n", c, l2);
    }
    std::ofstream f(fs::path(args.out_dir) / "sweep_collectors.csv", std::ios::trunc);
    f << table.str();
    write_manifest(args.out_dir, command_line, cfg, fs::path(data_path), {});
    return 0;
  }

  Trainer trainer(cfg, ds, bank, cfg.seed, detonly);
  TrainReport report;
  report.seed = cfg.seed;
  report.cfg_hash = config_hash(cfg);
  if (!resume_dir.empty()) trainer.mark_loaded(trainer.bundle().load(resume_dir));

  if (stage_name == "all") {
    report = trainer.run_all();
    if (!skip_direct) report.fragments.push_back(trainer.train_direct_baseline());
  } else {
    bool found = false;
    for (int i = 0; i < 5; ++i) {
      const auto st = static_cast<TrainStage>(i);
      if (stage_name == to_string(st)) {
        report.fragments.push_back(trainer.run_stage(st));
        found = true;
      }
    }
    if (stage_name == "direct_baseline") {
      report.fragments.push_back(trainer.train_direct_baseline());
      found = true;
    }
    if (!found) throw ConfigError("cli", "unknown stage '" + stage_name + "'");
  }

  trainer.bundle().save(args.out_dir, trainer.completed());
  report.save_csv(fs::path(args.out_dir) / "train_losses.csv");
  {
    std::ofstream f(fs::path(args.out_dir) / "train_report.json", std::ios::trunc);
    f << report.to_json() << "\n";
  }
  write_manifest(args.out_dir, command_line, cfg, fs::path(data_path),
                 bundle_checkpoints(args.out_dir));
  for (const auto& fr : report.fragments)
    std::printf("stage %-22s epochs=%zu final_loss=%.4f (%.1fs)\n", fr.stage.c_str(),
                fr.epoch_losses.size(), fr.epoch_losses.empty() ? 0.0 : fr.epoch_losses.back(),
                fr.seconds);
  return 0;
}

int cmd_simulate(const CommonArgs& args, const std::string& data_path, const std::string& bank_path,
                 const std::string& ckpt_dir, double latency, double period,
                 const std::string& split, int max_scenarios, const std::string& command_line) {
  RunConfig cfg = resolve_config(args);
  if (latency >= 0.0) cfg.synergy.delay = latency;
  if (period > 0.0) cfg.synergy.period = period;
  fs::create_directories(args.out_dir);
  const Dataset ds = load_dataset(data_path);
  const TrajectoryBank bank = load_bank(bank_path);
  PlannerBundle bundle(cfg, bank, cfg.seed);
  bundle.load(ckpt_dir);

  const std::vector<std::string>* ids = &ds.split.test;
  if (split == "val") ids = &ds.split.val;
  if (split == "train") ids = &ds.split.train;

  std::vector<PlanTrace> chain, e2e, e2e_async;
  std::vector<ChainDecision> decisions;
  int used = 0;
  for (const auto& id : *ids) {
    if (max_scenarios > 0 && used >= max_scenarios) break;
    ++used;
    SimulationResult res = simulate_scenario(bundle, ds.by_id(id), cfg.synergy,
                                             derive_seed(cfg.seed, static_cast<std::uint64_t>(used)));
    chain.insert(chain.end(), res.chain.begin(), res.chain.end());
    e2e.insert(e2e.end(), res.e2e.begin(), res.e2e.end());
    e2e_async.insert(e2e_async.end(), res.e2e_async.begin(), res.e2e_async.end());
    decisions.insert(decisions.end(), res.decisions.begin(), res.decisions.end());
  }
  save_traces(chain, fs::path(args.out_dir) / "chain.jsonl");
  save_traces(e2e, fs::path(args.out_dir) / "e2e.jsonl");
  save_traces(e2e_async, fs::path(args.out_dir) / "e2e_async.jsonl");
  save_chain_decisions(decisions, fs::path(args.out_dir) / "chain_decisions.jsonl");
  write_manifest(args.out_dir, command_line, cfg, fs::path(data_path),
                 bundle_checkpoints(ckpt_dir));
  std::printf("simulated %d scenarios: %zu chain / %zu e2e / %zu async plans\n", used, chain.size(),
              e2e.size(), e2e_async.size());
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& data_path, const std::string& traces_dir,
                 const std::string& command_line) {
  const RunConfig cfg = resolve_config(args);
  fs::create_directories(args.out_dir);
  const Dataset ds = load_dataset(data_path);
  std::vector<PlanTrace> traces;
  for (const char* name : {"chain.jsonl", "e2e.jsonl", "e2e_async.jsonl"}) {
    const fs::path p = fs::path(traces_dir) / name;
    if (!fs::exists(p)) continue;
    const auto part = load_traces(p);
    traces.insert(traces.end(), part.begin(), part.end());
  }
  if (traces.empty()) throw DataError("cli", "no trace files found in '" + traces_dir + "'");
  std::vector<FrameResult> frames;
  BenchmarkReport report = evaluate(traces, ds, cfg.eval, cfg.grid, &frames);
  report.cfg_hash = config_hash(cfg);
  report.seeds = {cfg.seed};
  save_frame_results(frames, fs::path(args.out_dir) / "frames.jsonl");
  {
    std::ofstream f(fs::path(args.out_dir) / "report.json", std::ios::trunc);
    f << report.to_json() << "\n";
  }
  {
    std::ofstream f(fs::path(args.out_dir) / "report.csv", std::ios::trunc);
    f << report.to_csv();
  }
  {
    std::ofstream f(fs::path(args.out_dir) / "report.txt", std::ios::trunc);
    f << report.to_text();
  }
  write_manifest(args.out_dir, command_line, cfg, fs::path(data_path), {});
  std::fputs(report.to_text().c_str(), stdout);
  return 0;
}

int cmd_plot(const CommonArgs& args, const std::string& data_path, const std::string& traces_dir,
             const std::string& report_path, int max_plots, const std::string& command_line) {
  const RunConfig cfg = resolve_config(args);
  fs::create_directories(args.out_dir);
  if (!report_path.empty()) {
    std::ifstream f(report_path);
    if (!f) throw DataError("cli", "cannot open report '" + report_path + "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const BenchmarkReport report = report_from_json(text);
    std::ofstream svg(fs::path(args.out_dir) / "report_bars.svg", std::ios::trunc);
    svg << plot_report_svg(report);
    std::ofstream csv(fs::path(args.out_dir) / "report_mirror.csv", std::ios::trunc);
    csv << report.to_csv();
  }
  if (!traces_dir.empty()) {
    if (data_path.empty()) throw ConfigError("cli", "--traces plotting needs --data");
    const Dataset ds = load_dataset(data_path);
    std::vector<PlanTrace> traces;
    for (const char* name : {"chain.jsonl", "e2e.jsonl", "e2e_async.jsonl"}) {
      const fs::path p = fs::path(traces_dir) / name;
      if (!fs::exists(p)) continue;
      const auto part = load_traces(p);
      traces.insert(traces.end(), part.begin(), part.end());
    }
    // Group by (scenario, tick): one overlay per first frames of scenarios.
    std::map<std::string, std::map<int, std::vector<const PlanTrace*>>> grouped;
    for (const auto& tr : traces) grouped[tr.scenario_id][tr.tick_index].push_back(&tr);
    if (grouped.empty()) {
      const Scenario empty_scenario = [] {
        Scenario s;
        s.id = "empty";
        s.ego_pose.assign(1, Pose2());
        s.ego_speed.assign(1, 0.0);
        s.ego_accel.assign(1, 0.0);
        s.ego_yaw_rate.assign(1, 0.0);
        s.command.assign(1, Command::Forward);
        s.agents.assign(1, {});
        return s;
      }();
      std::ofstream svg(fs::path(args.out_dir) / "overlay_empty.svg", std::ios::trunc);
      svg << plot_scenario_svg(empty_scenario, 0, {});
    }
    int plotted = 0;
    for (const auto& [sid, by_tick] : grouped) {
      if (max_plots > 0 && plotted >= max_plots) break;
      ++plotted;
      const Scenario& s = ds.by_id(sid);
      const auto& [tick, list] = *by_tick.begin();
      std::vector<std::pair<std::string, Trajectory>> plans;
      for (const PlanTrace* tr : list) {
        Trajectory world = tr->plan;
        world.frame = tr->ego_pose;
        plans.emplace_back(to_string(tr->prov), transform_trajectory(world, tr->ego_pose, Pose2()));
      }
      std::ofstream svg(fs::path(args.out_dir) / ("overlay_" + sid + ".svg"), std::ios::trunc);
      svg << plot_scenario_svg(s, tick, plans);
    }
  }
  std::optional<fs::path> data_opt;
  if (!data_path.empty()) data_opt = fs::path(data_path);
  write_manifest(args.out_dir, command_line, cfg, data_opt, {});
  return 0;
}

int cmd_inspect(const std::string& path) {
  json out;
  const fs::path p(path);
  if (!fs::exists(p)) throw DataError("cli", "no such file '" + path + "'");
  if (p.extension() == ".ckpt") {
    const CheckpointInfo info = read_checkpoint_info(p);
    out["kind"] = "checkpoint";
    out["version"] = info.version;
    out["config_hash"] = info.config_hash;
    out["parameter_count"] = info.params.size();
    std::size_t floats = 0;
    for (const auto& [name, shape] : info.params)
      floats += static_cast<std::size_t>(shape.first) * shape.second;
    out["total_values"] = floats;
    json params = json::array();
    for (const auto& [name, shape] : info.params)
      params.push_back(json{{"name", name}, {"rows", shape.first}, {"cols", shape.second}});
    out["parameters"] = std::move(params);
  } else {
    std::ifstream f(p);
    std::string first_line;
    std::getline(f, first_line);
    json j;
    try {
      j = json::parse(first_line);
    } catch (const json::exception&) {
      throw FormatError("cli", "unrecognized artifact '" + path + "'");
    }
    const std::string kind = j.contains("kind") ? j["kind"].get<std::string>() : "";
    if (kind == "dualplan.dataset") {
      out["kind"] = "dataset";
      out["seed"] = j["seed"];
      out["config_hash"] = j["config_hash"];
      out["train"] = j["splits"]["train"].size();
      out["val"] = j["splits"]["val"].size();
      out["test"] = j["splits"]["test"].size();
    } else if (kind == "dualplan.bank") {
      std::ifstream whole(p);
      const json full = json::parse(whole);
      out["kind"] = "bank";
      out["entries_per_command"] = full["entries_per_command"];
      for (auto it = full["commands"].begin(); it != full["commands"].end(); ++it)
        out["commands"][it.key()] = it.value().size();
    } else if (kind == "dualplan.report") {
      std::ifstream whole(p);
      const json full = json::parse(whole);
      out = full;
    } else if (kind == "dualplan.manifest" || kind == "dualplan.train_report") {
      std::ifstream whole(p);
      out = json::parse(whole);
    } else if (j.contains("scenario_id")) {
      // Trace-like JSON lines: count records per provenance / per scenario.
      std::ifstream whole(p);
      std::string line;
      std::size_t lines = 0;
      std::map<std::string, std::size_t> prov;
      while (std::getline(whole, line)) {
        if (line.empty()) continue;
        ++lines;
        const json r = json::parse(line);
        if (r.contains("provenance")) prov[r["provenance"].get<std::string>()]++;
      }
      out["kind"] = "jsonl";
      out["records"] = lines;
      for (const auto& [k, v] : prov) out["provenance"][k] = v;
    } else {
      out["kind"] = "json";
      out["keys"] = json::array();
      for (auto it = j.begin(); it != j.end(); ++it) out["keys"].push_back(it.key());
    }
  }
  std::printf("%s\n", out.dump(2).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dualplan: dual-frequency trajectory planning stack over synthetic driving scenes"};
  app.require_subcommand(1);
  const std::string command_line = join_args(argc, argv);

  CommonArgs gen_args, bank_args, train_args, sim_args, eval_args, plot_args;
  bool gen_export_csv = false;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic scenario dataset");
  add_common(gen, gen_args);
  gen->add_flag("--export-csv", gen_export_csv, "Also export expert trajectories as CSV");

  std::string bank_data;
  int bank_k = 0;
  auto* bankc = app.add_subcommand("build-bank", "Cluster expert trajectories into the bank");
  add_common(bankc, bank_args);
  bankc->add_option("--data", bank_data, "Dataset JSONL path")->required();
  bankc->add_option("--k", bank_k, "Entries per command (default from config)");

  std::string train_data, train_bank, train_stage = "all", train_resume, train_variant = "shared",
              train_sweep;
  bool train_skip_direct = false;
  auto* train = app.add_subcommand("train", "Run the staged training pipeline");
  add_common(train, train_args);
  train->add_option("--data", train_data, "Dataset JSONL path")->required();
  train->add_option("--bank", train_bank, "Bank JSON path")->required();
  train->add_option("--stage", train_stage,
                    "Stage to run: all, compressor_pretrain, adapter_train, e2e_head_train, "
                    "joint_train, synergy_finetune, direct_baseline");
  train->add_option("--resume", train_resume, "Checkpoint directory with prerequisite stages");
  train->add_option("--variant", train_variant, "Compressor supervision: shared or detonly")
      ->check(CLI::IsMember({"shared", "detonly"}));
  train->add_flag("--skip-direct-baseline", train_skip_direct,
                  "Do not train the no-chain regression baseline");
  train->add_option("--sweep-collectors", train_sweep,
                    "Comma-separated collector counts; trains each and tabulates val L2");

  std::string sim_data, sim_bank, sim_ckpt, sim_split = "test";
  double sim_latency = -1.0, sim_period = 0.0;
  int sim_max = 0;
  auto* sim = app.add_subcommand("simulate", "Run the dual-planner cooperation loop");
  add_common(sim, sim_args);
  sim->add_option("--data", sim_data, "Dataset JSONL path")->required();
  sim->add_option("--bank", sim_bank, "Bank JSON path")->required();
  sim->add_option("--ckpt", sim_ckpt, "Checkpoint directory")->required();
  sim->add_option("--latency", sim_latency, "Slow-planner processing delay in seconds");
  sim->add_option("--period", sim_period, "Slow-planner invocation period in seconds");
  sim->add_option("--split", sim_split, "Scenario split: test, val or train")
      ->check(CLI::IsMember({"test", "val", "train"}));
  sim->add_option("--max-scenarios", sim_max, "Limit the number of scenarios (0 = all)");

  std::string eval_data, eval_traces;
  auto* evalc = app.add_subcommand("evaluate", "Compute open-loop metrics from traces");
  add_common(evalc, eval_args);
  evalc->add_option("--data", eval_data, "Dataset JSONL path")->required();
  evalc->add_option("--traces", eval_traces, "Directory with trace JSONL files")->required();

  std::string plot_data, plot_traces, plot_report;
  int plot_max = 8;
  auto* plot = app.add_subcommand("plot", "Emit SVG overlays and metric charts");
  add_common(plot, plot_args);
  plot->add_option("--data", plot_data, "Dataset JSONL path");
  plot->add_option("--traces", plot_traces, "Directory with trace JSONL files");
  plot->add_option("--report", plot_report, "Report JSON path");
  plot->add_option("--max-plots", plot_max, "Maximum scenario overlays");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Summarize an artifact file");
  inspect->add_option("--path", inspect_path, "Artifact path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args, gen_export_csv, command_line);
    if (bankc->parsed()) return cmd_build_bank(bank_args, bank_data, bank_k, command_line);
    if (train->parsed())
      return cmd_train(train_args, train_data, train_bank, train_stage, train_resume, train_variant,
                       train_skip_direct, train_sweep, command_line);
    if (sim->parsed())
      return cmd_simulate(sim_args, sim_data, sim_bank, sim_ckpt, sim_latency, sim_period, sim_split,
                          sim_max, command_line);
    if (evalc->parsed()) return cmd_evaluate(eval_args, eval_data, eval_traces, command_line);
    if (plot->parsed())
      return cmd_plot(plot_args, plot_data, plot_traces, plot_report, plot_max, command_line);
    if (inspect->parsed()) return cmd_inspect(inspect_path);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s/%s]: %s\n", e.module().c_str(), e.variant().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
