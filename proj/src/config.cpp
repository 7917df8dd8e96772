#include "dualplan/config.hpp"

#include <fstream>

#include "dualplan/errors.hpp"
#include "dualplan/nn.hpp"
#include "json.hpp"

namespace dualplan {

namespace {

constexpr const char* kModule = "cli";
using json = nlohmann::json;

// Applies present keys onto defaults and rejects unknown ones.
class Section {
 public:
  Section(const json& j, std::string name) : name_(std::move(name)) {
    if (!j.is_object()) throw ConfigError(kModule, "config section '" + name_ + "' must be an object");
    obj_ = j;
  }

  template <typename T>
  void read(const char* key, T& out) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(kModule, "config key '" + name_ + "." + key + "': " + e.what());
    }
    seen_.push_back(key);
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      bool known = false;
      for (const auto& k : seen_)
        if (k == it.key()) known = true;
      if (!known)
        throw ConfigError(kModule, "unknown config key '" + name_ + "." + it.key() + "'");
    }
  }

 private:
  json obj_;
  std::string name_;
  std::vector<std::string> seen_;
};

json stage_to_json(const StageSettings& s) { return json{{"epochs", s.epochs}, {"lr", s.lr}}; }

void stage_from_json(const json& j, const std::string& name, StageSettings& s) {
  Section sec(j, name);
  sec.read("epochs", s.epochs);
  sec.read("lr", s.lr);
  sec.finish();
}

json grid_json(const GridConfig& g) {
  return json{{"dt", g.dt},
              {"fast_horizon", g.fast_horizon},
              {"long_horizon", g.long_horizon},
              {"history", g.history}};
}

json model_json(const ModelConfig& m) {
  return json{{"dim", m.dim}, {"heads", m.heads}, {"dec_layers", m.dec_layers}, {"ffn_mult", m.ffn_mult}};
}

json compressor_json(const CompressorConfig& c) {
  return json{{"n_collect", c.n_collect},   {"n_det", c.n_det},
              {"n_lane", c.n_lane},         {"grid_hw", c.grid_hw},
              {"cell_m", c.cell_m},         {"channels", c.channels},
              {"memory_frames", c.memory_frames}, {"lane_ctrl_points", c.lane_ctrl_points},
              {"pos_freqs", c.pos_freqs},   {"aux_heads", c.aux_heads},
              {"stage_order", c.stage_order}};
}

json bank_json(const BankConfig& b) {
  return json{{"k", b.k},
              {"k_l", b.k_l},
              {"kmeans_max_iters", b.kmeans_max_iters},
              {"kmeans_restarts", b.kmeans_restarts}};
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

std::string config_to_json(const RunConfig& cfg) {
  json j;
  j["format_version"] = 1;
  j["seed"] = cfg.seed;
  j["grid"] = grid_json(cfg.grid);
  j["model"] = model_json(cfg.model);
  j["compressor"] = compressor_json(cfg.compressor);
  j["bank"] = bank_json(cfg.bank);
  j["scenario"] = json{{"duration", cfg.scenario.duration},
                       {"count_train", cfg.scenario.count_train},
                       {"count_val", cfg.scenario.count_val},
                       {"count_test", cfg.scenario.count_test},
                       {"accel_limit", cfg.scenario.accel_limit},
                       {"yaw_rate_limit", cfg.scenario.yaw_rate_limit},
                       {"command_window", cfg.scenario.command_window},
                       {"command_yaw_threshold", cfg.scenario.command_yaw_threshold},
                       {"archetype_weights", cfg.scenario.archetype_weights}};
  j["train"] = json{{"compressor_pretrain", stage_to_json(cfg.train.compressor_pretrain)},
                    {"adapter_train", stage_to_json(cfg.train.adapter_train)},
                    {"e2e_head_train", stage_to_json(cfg.train.e2e_head_train)},
                    {"joint_train", stage_to_json(cfg.train.joint_train)},
                    {"synergy_finetune", stage_to_json(cfg.train.synergy_finetune)},
                    {"ego_mlp", stage_to_json(cfg.train.ego_mlp)},
                    {"batch", cfg.train.batch},
                    {"frames_per_scenario", cfg.train.frames_per_scenario},
                    {"selection_loss_weight", cfg.train.selection_loss_weight},
                    {"refine_loss_weight", cfg.train.refine_loss_weight}};
  j["synergy"] = json{{"period", cfg.synergy.period},
                      {"delay", cfg.synergy.delay},
                      {"jitter", cfg.synergy.jitter},
                      {"capacity", cfg.synergy.capacity}};
  j["eval"] = json{{"ego_length", cfg.eval.ego_length}, {"ego_width", cfg.eval.ego_width}};
  return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(kModule, std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError(kModule, "config root must be an object");
  RunConfig cfg;
  static const char* kRootKeys[] = {"format_version", "seed",     "grid",  "model",
                                    "compressor",     "bank",     "scenario", "train",
                                    "synergy",        "eval"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : kRootKeys)
      if (it.key() == k) known = true;
    if (!known) throw ConfigError(kModule, "unknown config key '" + it.key() + "'");
  }
  int version = 1;
  if (j.contains("format_version")) version = j["format_version"].get<int>();
  if (version != 1)
    throw ConfigError(kModule, "config format_version mismatch: expected 1, got " + std::to_string(version));
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();

  if (j.contains("grid")) {
    Section s(j["grid"], "grid");
    s.read("dt", cfg.grid.dt);
    s.read("fast_horizon", cfg.grid.fast_horizon);
    s.read("long_horizon", cfg.grid.long_horizon);
    s.read("history", cfg.grid.history);
    s.finish();
  }
  if (j.contains("model")) {
    Section s(j["model"], "model");
    s.read("dim", cfg.model.dim);
    s.read("heads", cfg.model.heads);
    s.read("dec_layers", cfg.model.dec_layers);
    s.read("ffn_mult", cfg.model.ffn_mult);
    s.finish();
  }
  if (j.contains("compressor")) {
    Section s(j["compressor"], "compressor");
    s.read("n_collect", cfg.compressor.n_collect);
    s.read("n_det", cfg.compressor.n_det);
    s.read("n_lane", cfg.compressor.n_lane);
    s.read("grid_hw", cfg.compressor.grid_hw);
    s.read("cell_m", cfg.compressor.cell_m);
    s.read("channels", cfg.compressor.channels);
    s.read("memory_frames", cfg.compressor.memory_frames);
    s.read("lane_ctrl_points", cfg.compressor.lane_ctrl_points);
    s.read("pos_freqs", cfg.compressor.pos_freqs);
    s.read("aux_heads", cfg.compressor.aux_heads);
    s.read("stage_order", cfg.compressor.stage_order);
    s.finish();
  }
  if (j.contains("bank")) {
    Section s(j["bank"], "bank");
    s.read("k", cfg.bank.k);
    s.read("k_l", cfg.bank.k_l);
    s.read("kmeans_max_iters", cfg.bank.kmeans_max_iters);
    s.read("kmeans_restarts", cfg.bank.kmeans_restarts);
    s.finish();
  }
  if (j.contains("scenario")) {
    Section s(j["scenario"], "scenario");
    s.read("duration", cfg.scenario.duration);
    s.read("count_train", cfg.scenario.count_train);
    s.read("count_val", cfg.scenario.count_val);
    s.read("count_test", cfg.scenario.count_test);
    s.read("accel_limit", cfg.scenario.accel_limit);
    s.read("yaw_rate_limit", cfg.scenario.yaw_rate_limit);
    s.read("command_window", cfg.scenario.command_window);
    s.read("command_yaw_threshold", cfg.scenario.command_yaw_threshold);
    s.read("archetype_weights", cfg.scenario.archetype_weights);
    s.finish();
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    if (!t.is_object()) throw ConfigError(kModule, "config section 'train' must be an object");
    static const char* kTrainKeys[] = {"compressor_pretrain", "adapter_train",   "e2e_head_train",
                                       "joint_train",         "synergy_finetune", "ego_mlp",
                                       "batch",               "frames_per_scenario",
                                       "selection_loss_weight", "refine_loss_weight"};
    for (auto it = t.begin(); it != t.end(); ++it) {
      bool known = false;
      for (const char* k : kTrainKeys)
        if (it.key() == k) known = true;
      if (!known) throw ConfigError(kModule, "unknown config key 'train." + it.key() + "'");
    }
    if (t.contains("compressor_pretrain")) stage_from_json(t["compressor_pretrain"], "train.compressor_pretrain", cfg.train.compressor_pretrain);
    if (t.contains("adapter_train")) stage_from_json(t["adapter_train"], "train.adapter_train", cfg.train.adapter_train);
    if (t.contains("e2e_head_train")) stage_from_json(t["e2e_head_train"], "train.e2e_head_train", cfg.train.e2e_head_train);
    if (t.contains("joint_train")) stage_from_json(t["joint_train"], "train.joint_train", cfg.train.joint_train);
    if (t.contains("synergy_finetune")) stage_from_json(t["synergy_finetune"], "train.synergy_finetune", cfg.train.synergy_finetune);
    if (t.contains("ego_mlp")) stage_from_json(t["ego_mlp"], "train.ego_mlp", cfg.train.ego_mlp);
    if (t.contains("batch")) cfg.train.batch = t["batch"].get<int>();
    if (t.contains("frames_per_scenario")) cfg.train.frames_per_scenario = t["frames_per_scenario"].get<int>();
    if (t.contains("selection_loss_weight")) cfg.train.selection_loss_weight = t["selection_loss_weight"].get<double>();
    if (t.contains("refine_loss_weight")) cfg.train.refine_loss_weight = t["refine_loss_weight"].get<double>();
  }
  if (j.contains("synergy")) {
    Section s(j["synergy"], "synergy");
    s.read("period", cfg.synergy.period);
    s.read("delay", cfg.synergy.delay);
    s.read("jitter", cfg.synergy.jitter);
    s.read("capacity", cfg.synergy.capacity);
    s.finish();
  }
  if (j.contains("eval")) {
    Section s(j["eval"], "eval");
    s.read("ego_length", cfg.eval.ego_length);
    s.read("ego_width", cfg.eval.ego_width);
    s.finish();
  }

  if (cfg.grid.dt <= 0 || cfg.grid.fast_horizon < 1 || cfg.grid.long_horizon < cfg.grid.fast_horizon)
    throw ConfigError(kModule, "grid: need dt > 0 and long_horizon >= fast_horizon >= 1");
  if (cfg.model.dim % cfg.model.heads != 0)
    throw ConfigError(kModule, "model.dim must be divisible by model.heads");
  if (cfg.bank.k_l > cfg.bank.k)
    throw ConfigError(kModule, "bank.k_l cannot exceed bank.k");
  if (cfg.scenario.archetype_weights.size() != 6)
    throw ConfigError(kModule, "scenario.archetype_weights needs 6 entries");
  for (const auto& st : cfg.compressor.stage_order)
    if (st != "static" && st != "detection" && st != "lane")
      throw ConfigError(kModule, "unknown compressor stage '" + st + "'");
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(kModule, "cannot open config '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return config_from_json(text);
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError(kModule, "cannot write config '" + path.string() + "'");
  f << config_to_json(cfg) << "\n";
}

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string s = config_to_json(cfg);
  return fnv1a64(s.data(), s.size());
}

std::uint64_t model_config_hash(const RunConfig& cfg) {
  json j;
  j["grid"] = grid_json(cfg.grid);
  j["model"] = model_json(cfg.model);
  j["compressor"] = compressor_json(cfg.compressor);
  j["bank"] = bank_json(cfg.bank);
  const std::string s = j.dump();
  return fnv1a64(s.data(), s.size());
}

std::string tool_version() { return "0.1.0"; }

}  // namespace dualplan
