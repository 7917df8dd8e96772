#pragma once

#include <string>
#include <vector>

#include "dualplan/bank.hpp"
#include "dualplan/compressor.hpp"
#include "dualplan/config.hpp"

namespace dualplan {

struct TrajectoryToken {
  Tensor vec;
  enum class Source { Endpoint, Waypoint } source = Source::Endpoint;
  int origin = 0;
};

struct SelectionResult {
  int chosen_index = 0;
  std::vector<double> scores;
  Trajectory reference;
};

struct RefinementResult {
  Trajectory trajectory;
  std::vector<Vec2> deltas;
};

// Coarse-to-fine slow planner: score candidate endpoints against the scene,
// pick the best, then regress per-waypoint offsets of the chosen reference.
class ChainPlanner {
 public:
  ChainPlanner(const RunConfig& cfg, std::uint64_t seed);

  TrajectoryToken endpoint_token(const Trajectory& candidate) const;
  std::vector<TrajectoryToken> waypoint_tokens(const Trajectory& reference) const;

  Tensor selection_logits(const SceneTokens& scene, const EgoStatus& status,
                          const CandidateSet& cands) const;  // [1 x (k_l+1)]
  Tensor refinement_deltas(const SceneTokens& scene, const EgoStatus& status,
                           const Trajectory& reference) const;  // [n_long x 2]

  SelectionResult select(const SceneTokens& scene, const EgoStatus& status,
                         const CandidateSet& cands) const;
  RefinementResult refine(const SceneTokens& scene, const EgoStatus& status,
                          const SelectionResult& sel) const;
  Trajectory plan(const SceneTokens& scene, const EgoStatus& status, const CandidateSet& cands,
                  bool refine_enabled = true) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t checkpoint_hash() const { return model_config_hash(cfg_); }
  void save(const std::filesystem::path& path) const { params_.save(path, checkpoint_hash()); }
  void load(const std::filesystem::path& path) { params_.load(path, checkpoint_hash()); }

 private:
  Tensor status_token(const EgoStatus& status) const;
  Tensor context(const SceneTokens& scene, const EgoStatus& status) const;

  RunConfig cfg_;
  ParamStore params_;
  Linear ep_l1_, ep_l2_;          // endpoint adapter
  Linear wp_l1_, wp_l2_;          // waypoint adapter
  Tensor wp_index_embed_;         // [n_long x d]
  Linear status_proj_;
  std::vector<DecoderBlock> select_blocks_, refine_blocks_;
  Linear select_head_;
  Linear refine_head_;  // zero-init: refinement starts as the identity
};

// No-chain baseline: one decoder over learned waypoint slots that regresses
// the long-horizon trajectory directly from scene and status.
class DirectPlanner {
 public:
  DirectPlanner(const RunConfig& cfg, std::uint64_t seed);

  Tensor waypoint_residuals(const SceneTokens& scene, const EgoStatus& status) const;  // [n_long x 2]
  Trajectory plan(const SceneTokens& scene, const EgoStatus& status) const;

  ParamStore& params() { return params_; }
  std::uint64_t checkpoint_hash() const { return model_config_hash(cfg_); }
  void save(const std::filesystem::path& path) const { params_.save(path, checkpoint_hash()); }
  void load(const std::filesystem::path& path) { params_.load(path, checkpoint_hash()); }

 private:
  RunConfig cfg_;
  ParamStore params_;
  Tensor slot_embed_;  // [n_long x d]
  Linear status_proj_;
  std::vector<DecoderBlock> blocks_;
  Linear head_;
};

// Tensor-free view of a planner decision for traces and inspection.
struct ChainDecision {
  std::string scenario_id;
  double tick_time = 0.0;
  std::vector<std::string> candidate_provenance;
  std::vector<double> scores;
  int chosen_index = 0;
  std::vector<Vec2> deltas;
  Trajectory refined;
};

}  // namespace dualplan
