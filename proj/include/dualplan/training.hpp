#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "dualplan/bank.hpp"
#include "dualplan/chain_planner.hpp"
#include "dualplan/compressor.hpp"
#include "dualplan/config.hpp"
#include "dualplan/e2e_planner.hpp"
#include "dualplan/evaluation.hpp"
#include "dualplan/synergy.hpp"

namespace dualplan {

enum class TrainStage {
  CompressorPretrain = 0,
  AdapterTrain = 1,
  E2EHeadTrain = 2,
  JointTrain = 3,
  SynergyFinetune = 4,
};

const char* to_string(TrainStage s);

struct StageFragment {
  std::string stage;
  std::vector<double> epoch_losses;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<StageFragment> fragments;
  std::uint64_t seed = 0;
  std::uint64_t cfg_hash = 0;

  void save_csv(const std::filesystem::path& path) const;
  std::string to_json() const;
};

// All models of one run, seeded deterministically from one root seed.
struct PlannerBundle {
  RunConfig cfg;
  TrajectoryBank bank;
  std::unique_ptr<QueryCompressor> compressor;
  std::unique_ptr<ChainPlanner> chain;
  std::unique_ptr<DirectPlanner> direct;
  std::unique_ptr<E2EPlanner> e2e;
  std::unique_ptr<EgoMlp> ego;
  std::uint64_t seed = 0;

  PlannerBundle(const RunConfig& cfg, const TrajectoryBank& bank, std::uint64_t seed,
                bool detection_only_compressor = false);

  void save(const std::filesystem::path& dir, const std::set<TrainStage>& completed) const;
  std::set<TrainStage> load(const std::filesystem::path& dir);

  // Inference helpers (no gradient bookkeeping).
  SceneTokens scene_for_frame(const FrameSample& frame, TemporalMemory* memory) const;
  Trajectory plan_chain(const FrameSample& frame, const SceneTokens& scene,
                        ChainDecision* decision = nullptr) const;
  Trajectory plan_direct(const FrameSample& frame, const SceneTokens& scene) const;
  Trajectory plan_fast(const FrameSample& frame, const SceneTokens& scene,
                       const std::optional<Trajectory>& synergy) const;
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, const Dataset& ds, const TrajectoryBank& bank, std::uint64_t seed,
          bool detection_only_compressor = false);

  StageFragment run_stage(TrainStage stage);
  TrainReport run_all();
  // No-chain regression baseline; shares the bundle's compressor (frozen).
  StageFragment train_direct_baseline();

  PlannerBundle& bundle() { return bundle_; }
  const std::set<TrainStage>& completed() const { return completed_; }
  void mark_loaded(const std::set<TrainStage>& stages) { completed_ = stages; }

 private:
  struct TrainFrame {
    FrameSample sample;
    SceneFeatures features;
    PerceptionTargets targets;
  };
  struct ScenarioFrames {
    std::string id;
    std::vector<TrainFrame> frames;
  };

  void apply_freeze(TrainStage stage);
  void build_cache();
  double epoch_compressor(Adam& opt, std::mt19937_64& rng, bool joint);
  double epoch_ego(Adam& opt, std::mt19937_64& rng);
  double epoch_chain(Adam& opt, std::mt19937_64& rng, bool joint);
  double epoch_e2e(Adam& opt, std::mt19937_64& rng, bool synergy, bool direct_baseline);

  Tensor chain_losses(const TrainFrame& tf, const SceneTokens& scene);
  Tensor e2e_losses(const TrainFrame& tf, const SceneTokens& scene,
                    const std::optional<Trajectory>& synergy, bool direct_baseline);

  const Dataset& ds_;
  RunConfig cfg_;
  PlannerBundle bundle_;
  std::vector<ScenarioFrames> train_scenarios_;
  // Denser tick grid for the synergy stage: consecutive frames must sit
  // within the modeled delay or no stored record is ever fresh enough.
  std::vector<ScenarioFrames> synergy_scenarios_;
  std::set<TrainStage> completed_;
  std::uint64_t seed_;
};

// Full simulation of one scenario: plain fast pass, synergy pass, and the
// slow planner's own decisions, as trace records ready for evaluation.
struct SimulationResult {
  std::vector<PlanTrace> chain;
  std::vector<PlanTrace> e2e;
  std::vector<PlanTrace> e2e_async;
  std::vector<ChainDecision> decisions;
};

SimulationResult simulate_scenario(const PlannerBundle& bundle, const Scenario& scenario,
                                   const SynergyConfig& sc, std::uint64_t seed);

void save_chain_decisions(const std::vector<ChainDecision>& decisions,
                          const std::filesystem::path& path);

}  // namespace dualplan
