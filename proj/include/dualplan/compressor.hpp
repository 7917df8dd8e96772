#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "dualplan/config.hpp"
#include "dualplan/nn.hpp"
#include "dualplan/scenario.hpp"

namespace dualplan {

enum class Stage { Static, Detection, Lane };

const char* to_string(Stage s);
std::vector<Stage> parse_stage_order(const std::vector<std::string>& names);

// Collector queries plus the ego token, tagged with the stages already applied.
struct CollectorTokens {
  Tensor tokens;  // [n_collect x d]
  Tensor ego;     // [1 x d]
  std::vector<Stage> applied;
};

// Planner-facing compressed scene: n_collect projected collector tokens with
// the projected ego token appended last.
struct SceneTokens {
  Tensor tokens;
  int n_collect = 0;
};

// Ring of prior-frame collector tokens (detached), newest last.
class TemporalMemory {
 public:
  explicit TemporalMemory(int capacity) : capacity_(capacity) {}

  void push(double time, const Tensor& tokens);
  void clear() { entries_.clear(); }
  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }

  struct Entry {
    double time;
    Tensor tokens;
  };
  const std::deque<Entry>& entries() const { return entries_; }

 private:
  int capacity_;
  std::deque<Entry> entries_;
};

struct DetectionPrediction {
  Tensor boxes;       // [n_det x 5], normalized (x, y, yaw, length, width)
  Tensor cls_logits;  // [n_det x 3]: vehicle, pedestrian, none
};

struct LanePrediction {
  Tensor points;        // [n_lane x 2*ctrl], normalized control points
  Tensor exist_logits;  // [n_lane x 2]
};

struct AuxPrediction {
  Tensor weather_logits;  // [1 x 3]
  Tensor tod_logits;      // [1 x 2]
  Tensor count;           // [1 x 1], scaled
  Tensor nearest;         // [1 x 1], scaled
};

// Minimal-cost row->column assignment (rows <= cols), O(n^2 m).
std::vector<int> solve_assignment(const std::vector<double>& cost, int n_rows, int n_cols);

class QueryCompressor {
 public:
  QueryCompressor(const RunConfig& cfg, std::uint64_t seed, bool detection_only = false);

  CollectorTokens begin_frame() const;
  CollectorTokens static_stage(const CollectorTokens& in, const SceneFeatures& feats) const;

  struct TaskResult {
    CollectorTokens collectors;
    Tensor task_queries;
  };
  // `mask_memory` keeps memory rows in the context but masks their attention
  // weights to exactly zero (ablation hook).
  TaskResult task_stage(const CollectorTokens& in, Stage which, const SceneFeatures& feats,
                        const TemporalMemory& memory, bool mask_memory = false) const;

  SceneTokens vision_adapter(const CollectorTokens& in) const;

  struct FrameOutput {
    SceneTokens scene;
    Tensor det_queries;   // invalid when the order omits the stage
    Tensor lane_queries;  // invalid when the order omits the stage
    CollectorTokens final_collectors;
  };
  FrameOutput compress(const SceneFeatures& feats, TemporalMemory* memory, double time = 0.0) const;

  DetectionPrediction detection_head(const Tensor& det_queries) const;
  LanePrediction lane_head(const Tensor& lane_queries) const;
  AuxPrediction aux_heads(const CollectorTokens& final_collectors) const;

  Tensor detection_loss(const DetectionPrediction& pred, const PerceptionTargets& tg) const;
  Tensor lane_loss(const LanePrediction& pred, const PerceptionTargets& tg) const;
  Tensor aux_loss(const AuxPrediction& pred, const PerceptionTargets& tg) const;
  // Stage-1 objective; honors the detection-only ablation.
  Tensor perception_loss(const FrameOutput& out, const PerceptionTargets& tg) const;

  Tensor embed_features(const SceneFeatures& feats) const;  // [H*W x d]

  const std::vector<Stage>& stage_order() const { return order_; }
  bool detection_only() const { return detection_only_; }
  int dim() const { return cfg_.model.dim; }
  int n_collect() const { return cfg_.compressor.n_collect; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t checkpoint_hash() const { return model_config_hash(cfg_); }
  void save(const std::filesystem::path& path) const { params_.save(path, checkpoint_hash()); }
  void load(const std::filesystem::path& path) { params_.load(path, checkpoint_hash()); }

 private:
  void require_next(const std::vector<Stage>& applied, Stage next) const;
  Tensor stage_context(const Tensor& feat_tokens, const TemporalMemory& memory) const;

  RunConfig cfg_;
  bool detection_only_;
  std::vector<Stage> order_;
  ParamStore params_;

  Tensor init_collectors_, init_ego_, det_queries_, lane_queries_, time_embed_;
  Linear feat_proj_, pos_proj_;
  std::vector<DecoderBlock> static_blocks_, det_blocks_, lane_blocks_;
  Linear adapter_;
  Linear det_head1_, det_head_box_, det_head_cls_;
  Linear lane_head1_, lane_head_pts_, lane_head_exist_;
  Linear aux_head1_, aux_weather_, aux_tod_, aux_count_, aux_nearest_;
};

}  // namespace dualplan
