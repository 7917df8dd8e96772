#pragma once

#include <optional>
#include <vector>

#include "dualplan/bank.hpp"
#include "dualplan/compressor.hpp"
#include "dualplan/config.hpp"

namespace dualplan {

struct PlanningQuery {
  Tensor embedding;      // [1 x d]
  int anchor_index = -1; // bank index, -1 for the synergy query
  bool synergy = false;
  Trajectory anchor;     // fast-horizon anchor path
};

struct PlanOutput {
  std::vector<Trajectory> trajectories;  // fast grid, one per query
  std::vector<double> confidence;
  std::vector<bool> synergy_flag;
  int best = 0;  // argmax confidence, ties to the lowest query index
};

// Real-time planner: one query per command-matched bank anchor (plus an
// optional synergy query), cross-attending the compressed scene.
class E2EPlanner {
 public:
  E2EPlanner(const RunConfig& cfg, std::uint64_t seed);

  std::vector<PlanningQuery> init_queries(const TrajectoryBank& bank, const EgoStatus& status,
                                          const std::optional<Trajectory>& synergy) const;

  struct ForwardResult {
    Tensor waypoints;  // [nq x 2*fast_horizon] residuals from the anchors
    Tensor confidence; // [nq x 1]
  };
  ForwardResult forward(const SceneTokens& scene, const std::vector<PlanningQuery>& queries,
                        bool mask_synergy = false) const;

  PlanOutput plan(const SceneTokens& scene, const std::vector<PlanningQuery>& queries,
                  const EgoStatus& status, bool mask_synergy = false) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t checkpoint_hash() const { return model_config_hash(cfg_); }
  void save(const std::filesystem::path& path) const { params_.save(path, checkpoint_hash()); }
  void load(const std::filesystem::path& path) { params_.load(path, checkpoint_hash()); }

 private:
  RunConfig cfg_;
  ParamStore params_;
  Linear anchor_proj_;   // flattened fast-horizon anchor -> d
  Linear status_proj_;
  Tensor synergy_tag_;   // [1 x d]
  std::vector<DecoderBlock> blocks_;
  Linear head_wp_;
  Linear head_conf_;
};

}  // namespace dualplan
