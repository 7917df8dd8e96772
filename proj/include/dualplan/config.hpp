#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dualplan {

struct GridConfig {
  double dt = 0.5;
  int fast_horizon = 6;  // 3 s fast planner window
  int long_horizon = 8;  // 4 s slow planner window
  int history = 4;       // past waypoints incl. the current position

  double fast_span() const { return fast_horizon * dt; }
  double long_span() const { return long_horizon * dt; }
};

struct ModelConfig {
  int dim = 64;
  int heads = 4;
  int dec_layers = 2;
  int ffn_mult = 2;
};

struct CompressorConfig {
  int n_collect = 48;
  int n_det = 32;
  int n_lane = 16;
  int grid_hw = 16;
  double cell_m = 2.0;
  int channels = 6;
  int memory_frames = 4;
  int lane_ctrl_points = 4;
  int pos_freqs = 4;
  bool aux_heads = true;
  std::vector<std::string> stage_order{"static", "detection", "lane"};
};

struct BankConfig {
  int k = 36;
  int k_l = 5;
  int kmeans_max_iters = 100;
  int kmeans_restarts = 4;
};

struct ScenarioConfig {
  double duration = 12.0;
  int count_train = 240;
  int count_val = 60;
  int count_test = 500;
  double accel_limit = 4.0;
  double yaw_rate_limit = 0.6;
  double command_window = 3.0;
  double command_yaw_threshold = 0.2;
  // archetype mix weights: cruise, curve, left turn, right turn, lead brake, crossing ped
  std::vector<double> archetype_weights{0.22, 0.18, 0.15, 0.15, 0.15, 0.15};
};

struct StageSettings {
  int epochs = 3;
  double lr = 1e-3;
};

struct TrainConfig {
  StageSettings compressor_pretrain{4, 1e-3};
  StageSettings adapter_train{4, 1e-3};
  StageSettings e2e_head_train{4, 1e-3};
  StageSettings joint_train{2, 3e-4};
  StageSettings synergy_finetune{2, 5e-4};
  StageSettings ego_mlp{20, 2e-3};
  int batch = 8;
  int frames_per_scenario = 5;
  double selection_loss_weight = 1.0;
  double refine_loss_weight = 1.0;
};

struct SynergyConfig {
  double period = 1.0;
  double delay = 1.0;
  double jitter = 0.0;
  int capacity = 8;
};

struct EvalConfig {
  double ego_length = 4.08;
  double ego_width = 1.85;
};

struct RunConfig {
  std::uint64_t seed = 1;
  GridConfig grid;
  ModelConfig model;
  CompressorConfig compressor;
  BankConfig bank;
  ScenarioConfig scenario;
  TrainConfig train;
  SynergyConfig synergy;
  EvalConfig eval;

  int feature_dim() const { return 3 + 2 * (grid.history - 1); }
};

RunConfig default_config();
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);
std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);

// Stable hash of the canonical JSON form; stamped into checkpoints/reports.
std::uint64_t config_hash(const RunConfig& cfg);
// Hash of only the sections that shape model parameters.
std::uint64_t model_config_hash(const RunConfig& cfg);

std::string tool_version();

}  // namespace dualplan
