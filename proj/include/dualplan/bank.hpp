#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dualplan/config.hpp"
#include "dualplan/geometry.hpp"
#include "dualplan/nn.hpp"
#include "dualplan/scenario.hpp"

namespace dualplan {

// Query feature for bank retrieval and the ego-only MLP:
// [speed, accel, yaw_rate, history waypoints before the current one].
// The newest history point is the frame origin and carries no information.
std::vector<double> status_feature(const EgoStatus& status, const GridConfig& g);

struct KMeansResult {
  std::vector<int> assignment;            // per point
  std::vector<std::vector<double>> centroids;
  double inertia = 0.0;
  int iterations = 0;
};

// Lloyd's iterations from greedy farthest-point seeding, best of `restarts`
// deterministic restarts.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                    int max_iters = 100, int restarts = 4);

struct BankEntry {
  Trajectory centroid_traj;         // medoid expert future, long horizon
  std::vector<double> feature;      // raw-space cluster centroid
  Command command = Command::Forward;
};

struct Normalization {
  std::vector<double> mean;
  std::vector<double> scale;
};

struct TrajectoryBank {
  std::array<std::vector<BankEntry>, 3> entries;  // indexed by Command
  Normalization norm;
  int entries_per_command = 0;

  const std::vector<BankEntry>& for_command(Command c) const {
    return entries[static_cast<int>(c)];
  }

  std::vector<double> normalize(const std::vector<double>& feature) const;
  // Indices of the k_l nearest entries for the status command, ascending
  // distance, ties by bank index.
  std::vector<int> retrieve_indices(const EgoStatus& status, const GridConfig& g, int k_l) const;
  std::vector<Trajectory> retrieve(const EgoStatus& status, const GridConfig& g, int k_l) const;
};

TrajectoryBank build_bank(const Dataset& ds, const RunConfig& cfg, std::uint64_t seed);
TrajectoryBank build_bank_from_samples(const std::vector<FrameSample>& samples, const RunConfig& cfg,
                                       std::uint64_t seed);

void save_bank(const TrajectoryBank& bank, const std::filesystem::path& path);
TrajectoryBank load_bank(const std::filesystem::path& path);

// AD-MLP-style candidate head: constant-velocity roll-out plus a learned
// residual from the normalized status feature.
class EgoMlp {
 public:
  EgoMlp(const RunConfig& cfg, std::uint64_t seed);

  Tensor forward(const Tensor& raw_feature_row) const;  // [1 x 2*long_horizon] residual
  Trajectory predict(const EgoStatus& status) const;

  void set_normalization(const Normalization& norm);
  void mark_trained() { trained_ = true; }
  bool trained() const { return trained_; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const GridConfig& grid() const { return cfg_.grid; }
  std::uint64_t checkpoint_hash() const;
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  RunConfig cfg_;
  ParamStore params_;
  Linear l1_, l2_, l3_;
  Tensor norm_mean_, norm_scale_;
  bool trained_ = false;
};

Trajectory constant_velocity_rollout(const EgoStatus& status, const GridConfig& g, int horizon);

struct CandidateSet {
  std::vector<Trajectory> trajectories;
  std::vector<std::string> provenance;  // "bank:<idx>" or "mlp"
  int k_l = 0;

  std::size_t size() const { return trajectories.size(); }
};

CandidateSet assemble_candidates(const TrajectoryBank& bank, const EgoStatus& status,
                                 const EgoMlp& mlp, const GridConfig& g, int k_l);

}  // namespace dualplan
