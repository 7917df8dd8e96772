#include "dualplan/bank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "json.hpp"

namespace dualplan {

namespace {

constexpr const char* kModule = "trajectory_bank";
constexpr int kBankVersion = 1;
using json = nlohmann::json;

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

KMeansResult lloyd_once(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                        int max_iters) {
  const int n = static_cast<int>(points.size());
  const std::size_t dim = points[0].size();
  std::mt19937_64 rng(seed);

  // Greedy farthest-point seeding; ties broken by lowest index.
  std::vector<int> centers;
  centers.push_back(std::uniform_int_distribution<int>(0, n - 1)(rng));
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    for (int i = 0; i < n; ++i)
      dist[i] = std::min(dist[i], sq_dist(points[i], points[centers.back()]));
    int far = 0;
    for (int i = 1; i < n; ++i)
      if (dist[i] > dist[far]) far = i;
    centers.push_back(far);
  }

  KMeansResult res;
  res.centroids.resize(k);
  for (int c = 0; c < k; ++c) res.centroids[c] = points[centers[c]];
  res.assignment.assign(n, -1);

  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(points[i], res.centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = sq_dist(points[i], res.centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.assignment[i] != best) {
        res.assignment[i] = best;
        changed = true;
      }
    }
    res.iterations = iter + 1;
    if (!changed) break;
    for (int c = 0; c < k; ++c) {
      std::vector<double> sum(dim, 0.0);
      int count = 0;
      for (int i = 0; i < n; ++i)
        if (res.assignment[i] == c) {
          for (std::size_t d = 0; d < dim; ++d) sum[d] += points[i][d];
          ++count;
        }
      if (count == 0) continue;  // empty cluster keeps its previous centroid
      for (std::size_t d = 0; d < dim; ++d) sum[d] /= count;
      res.centroids[c] = std::move(sum);
    }
  }
  res.inertia = 0.0;
  for (int i = 0; i < n; ++i) res.inertia += sq_dist(points[i], res.centroids[res.assignment[i]]);
  return res;
}

}  // namespace

std::vector<double> status_feature(const EgoStatus& status, const GridConfig& g) {
  const auto& h = status.history;
  if (static_cast<int>(h.waypoints.size()) != g.history)
    throw InvalidGeometry(kModule, "history must hold exactly " + std::to_string(g.history) + " waypoints");
  std::vector<double> f;
  f.reserve(3 + 2 * (g.history - 1));
  f.push_back(status.speed);
  f.push_back(status.accel);
  f.push_back(status.yaw_rate);
  for (int i = 0; i + 1 < g.history; ++i) {
    f.push_back(h.waypoints[i].x);
    f.push_back(h.waypoints[i].y);
  }
  return f;
}

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                    int max_iters, int restarts) {
  if (points.empty() || k <= 0 || static_cast<int>(points.size()) < k)
    throw BankBuildError(kModule, "kmeans needs at least k points (" + std::to_string(points.size()) +
                                      " < " + std::to_string(k) + ")");
  KMeansResult best;
  bool first = true;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    KMeansResult cur = lloyd_once(points, k, derive_seed(seed, static_cast<std::uint64_t>(r)), max_iters);
    if (first || cur.inertia < best.inertia) {
      best = std::move(cur);
      first = false;
    }
  }
  return best;
}

std::vector<double> TrajectoryBank::normalize(const std::vector<double>& feature) const {
  if (feature.size() != norm.mean.size())
    throw InvalidGeometry(kModule, "feature dimension mismatch");
  std::vector<double> out(feature.size());
  for (std::size_t i = 0; i < feature.size(); ++i)
    out[i] = (feature[i] - norm.mean[i]) / norm.scale[i];
  return out;
}

std::vector<int> TrajectoryBank::retrieve_indices(const EgoStatus& status, const GridConfig& g,
                                                  int k_l) const {
  const auto& pool = for_command(status.command);
  if (pool.empty()) throw InvalidCommand(kModule, "bank has no entries for this command");
  if (k_l < 1 || k_l > static_cast<int>(pool.size()))
    throw InvalidCommand(kModule, "k_l must be in [1, " + std::to_string(pool.size()) + "]");
  const std::vector<double> q = normalize(status_feature(status, g));
  std::vector<std::pair<double, int>> ranked;
  ranked.reserve(pool.size());
  for (int i = 0; i < static_cast<int>(pool.size()); ++i)
    ranked.emplace_back(sq_dist(q, normalize(pool[i].feature)), i);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<int> out;
  out.reserve(k_l);
  for (int i = 0; i < k_l; ++i) out.push_back(ranked[i].second);
  return out;
}

std::vector<Trajectory> TrajectoryBank::retrieve(const EgoStatus& status, const GridConfig& g,
                                                 int k_l) const {
  std::vector<Trajectory> out;
  for (int idx : retrieve_indices(status, g, k_l))
    out.push_back(for_command(status.command)[idx].centroid_traj);
  return out;
}

TrajectoryBank build_bank_from_samples(const std::vector<FrameSample>& samples, const RunConfig& cfg,
                                       std::uint64_t seed) {
  const int k = cfg.bank.k;
  // Global normalization over all training features.
  std::vector<std::vector<double>> all_features;
  all_features.reserve(samples.size());
  for (const auto& s : samples) all_features.push_back(status_feature(s.status, cfg.grid));
  if (all_features.empty()) throw BankBuildError(kModule, "no samples to build bank from");
  const std::size_t dim = all_features[0].size();

  TrajectoryBank bank;
  bank.entries_per_command = k;
  bank.norm.mean.assign(dim, 0.0);
  bank.norm.scale.assign(dim, 0.0);
  for (const auto& f : all_features)
    for (std::size_t d = 0; d < dim; ++d) bank.norm.mean[d] += f[d];
  for (std::size_t d = 0; d < dim; ++d) bank.norm.mean[d] /= all_features.size();
  for (const auto& f : all_features)
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = f[d] - bank.norm.mean[d];
      bank.norm.scale[d] += diff * diff;
    }
  for (std::size_t d = 0; d < dim; ++d) {
    bank.norm.scale[d] = std::sqrt(bank.norm.scale[d] / all_features.size());
    if (!(bank.norm.scale[d] > 1e-9))
      throw BankBuildError(kModule, "feature dimension " + std::to_string(d) +
                                        " is degenerate (zero variance)");
  }

  for (int c = 0; c < 3; ++c) {
    const Command cmd = static_cast<Command>(c);
    std::vector<int> pick;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].status.command == cmd) pick.push_back(static_cast<int>(i));
    if (static_cast<int>(pick.size()) < k)
      throw BankBuildError(kModule, std::string("command ") + to_string(cmd) + " has only " +
                                        std::to_string(pick.size()) + " samples, need >= " +
                                        std::to_string(k));
    std::vector<std::vector<double>> pts;
    pts.reserve(pick.size());
    for (int i : pick) pts.push_back(bank.normalize(all_features[i]));
    const KMeansResult km =
        kmeans(pts, k, derive_seed(seed, static_cast<std::uint64_t>(c)), cfg.bank.kmeans_max_iters,
               cfg.bank.kmeans_restarts);
    auto& out = bank.entries[c];
    out.resize(k);
    for (int cl = 0; cl < k; ++cl) {
      // Medoid: member nearest the centroid, ties by lowest index.
      int med = -1;
      double best = std::numeric_limits<double>::infinity();
      std::vector<double> raw_centroid(dim, 0.0);
      int count = 0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        if (km.assignment[i] != cl) continue;
        ++count;
        for (std::size_t d = 0; d < dim; ++d) raw_centroid[d] += all_features[pick[i]][d];
        const double dd = sq_dist(pts[i], km.centroids[cl]);
        if (dd < best) {
          best = dd;
          med = static_cast<int>(i);
        }
      }
      if (med < 0) throw BankBuildError(kModule, "k-means produced an empty cluster");
      for (std::size_t d = 0; d < dim; ++d) raw_centroid[d] /= count;
      out[cl].command = cmd;
      out[cl].feature = std::move(raw_centroid);
      out[cl].centroid_traj = samples[pick[med]].future_long;
      out[cl].centroid_traj.frame = Pose2();  // bank entries are ego-relative paths
    }
  }
  return bank;
}

TrajectoryBank build_bank(const Dataset& ds, const RunConfig& cfg, std::uint64_t seed) {
  std::vector<FrameSample> samples;
  for (const auto& id : ds.split.train) {
    const Scenario& s = ds.by_id(id);
    for (int t : eligible_ticks(s, cfg.grid)) samples.push_back(make_frame(s, t, cfg.grid));
  }
  return build_bank_from_samples(samples, cfg, seed);
}

void save_bank(const TrajectoryBank& bank, const std::filesystem::path& path) {
  json j;
  j["format_version"] = kBankVersion;
  j["kind"] = "dualplan.bank";
  j["entries_per_command"] = bank.entries_per_command;
  j["normalization"] = json{{"mean", bank.norm.mean}, {"scale", bank.norm.scale}};
  json commands;
  for (int c = 0; c < 3; ++c) {
    json arr = json::array();
    for (const auto& e : bank.entries[c]) {
      json waypoints = json::array();
      for (const auto& w : e.centroid_traj.waypoints) waypoints.push_back(json::array({w.x, w.y}));
      arr.push_back(json{{"feature", e.feature},
                         {"waypoints", std::move(waypoints)},
                         {"dt", e.centroid_traj.dt}});
    }
    commands[to_string(static_cast<Command>(c))] = std::move(arr);
  }
  j["commands"] = std::move(commands);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError(kModule, "cannot write bank '" + path.string() + "'");
  f << j.dump(2) << "\n";
}

TrajectoryBank load_bank(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError(kModule, "cannot open bank '" + path.string() + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(kModule, std::string("bank parse error: ") + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kBankVersion)
      throw FormatError(kModule, "bank format_version mismatch: expected " +
                                     std::to_string(kBankVersion) + ", got " + std::to_string(version));
    TrajectoryBank bank;
    bank.entries_per_command = j.at("entries_per_command").get<int>();
    bank.norm.mean = j.at("normalization").at("mean").get<std::vector<double>>();
    bank.norm.scale = j.at("normalization").at("scale").get<std::vector<double>>();
    for (int c = 0; c < 3; ++c) {
      const Command cmd = static_cast<Command>(c);
      for (const auto& e : j.at("commands").at(to_string(cmd))) {
        BankEntry be;
        be.command = cmd;
        be.feature = e.at("feature").get<std::vector<double>>();
        be.centroid_traj.dt = e.at("dt").get<double>();
        be.centroid_traj.start_time = be.centroid_traj.dt;
        for (const auto& w : e.at("waypoints"))
          be.centroid_traj.waypoints.push_back({w[0].get<double>(), w[1].get<double>()});
        bank.entries[c].push_back(std::move(be));
      }
    }
    return bank;
  } catch (const json::exception& e) {
    throw FormatError(kModule, std::string("bank schema error: ") + e.what());
  }
}

Trajectory constant_velocity_rollout(const EgoStatus& status, const GridConfig& g, int horizon) {
  Trajectory t;
  t.start_time = g.dt;
  t.dt = g.dt;
  for (int i = 1; i <= horizon; ++i) t.waypoints.push_back({status.speed * g.dt * i, 0.0});
  return t;
}

EgoMlp::EgoMlp(const RunConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), params_(seed) {
  const int in = cfg.feature_dim();
  const int hidden = 64;
  const int out = 2 * cfg.grid.long_horizon;
  l1_ = make_linear(params_, "ego_mlp.l1", in, hidden);
  l2_ = make_linear(params_, "ego_mlp.l2", hidden, hidden);
  l3_ = make_linear(params_, "ego_mlp.l3", hidden, out, Init::Zero, Init::Zero);
  norm_mean_ = params_.create("ego_mlp.norm.mean", 1, in, Init::Zero);
  norm_scale_ = params_.create("ego_mlp.norm.scale", 1, in, Init::Zero);
  for (auto& v : norm_scale_.mutable_data()) v = 1.0;
  params_.freeze_prefix("ego_mlp.norm", true);
}

void EgoMlp::set_normalization(const Normalization& norm) {
  if (norm.mean.size() != static_cast<std::size_t>(norm_mean_.cols()))
    throw InvalidGeometry(kModule, "normalization dimension mismatch");
  for (int i = 0; i < norm_mean_.cols(); ++i) {
    norm_mean_.mutable_data()[i] = norm.mean[i];
    norm_scale_.mutable_data()[i] = norm.scale[i];
  }
}

Tensor EgoMlp::forward(const Tensor& raw_feature_row) const {
  // z-normalize, then two hidden layers; the zero-init output layer makes the
  // initial prediction exactly the constant-velocity rollout.
  std::vector<double> z(raw_feature_row.cols());
  for (int i = 0; i < raw_feature_row.cols(); ++i)
    z[i] = (raw_feature_row.at(0, i) - norm_mean_.at(0, i)) / norm_scale_.at(0, i);
  Tensor x = Tensor::from_data(1, raw_feature_row.cols(), std::move(z));
  return l3_(gelu(l2_(gelu(l1_(x)))));
}

Trajectory EgoMlp::predict(const EgoStatus& status) const {
  if (!trained_) throw ModelNotReady(kModule, "ego MLP has not been trained");
  const std::vector<double> f = status_feature(status, cfg_.grid);
  const Tensor res = forward(Tensor::from_data(1, static_cast<int>(f.size()), f));
  Trajectory out = constant_velocity_rollout(status, cfg_.grid, cfg_.grid.long_horizon);
  for (int i = 0; i < cfg_.grid.long_horizon; ++i) {
    out.waypoints[i].x += res.at(0, 2 * i);
    out.waypoints[i].y += res.at(0, 2 * i + 1);
  }
  return out;
}

std::uint64_t EgoMlp::checkpoint_hash() const { return model_config_hash(cfg_); }

void EgoMlp::save(const std::filesystem::path& path) const {
  params_.save(path, checkpoint_hash());
}

void EgoMlp::load(const std::filesystem::path& path) {
  params_.load(path, checkpoint_hash());
  trained_ = true;
}

CandidateSet assemble_candidates(const TrajectoryBank& bank, const EgoStatus& status,
                                 const EgoMlp& mlp, const GridConfig& g, int k_l) {
  CandidateSet set;
  set.k_l = k_l;
  const auto indices = bank.retrieve_indices(status, g, k_l);
  for (int idx : indices) {
    set.trajectories.push_back(bank.for_command(status.command)[idx].centroid_traj);
    set.provenance.push_back("bank:" + std::to_string(idx));
  }
  set.trajectories.push_back(mlp.predict(status));
  set.provenance.push_back("mlp");
  for (auto& t : set.trajectories) {
    t.frame = status.history.frame;
    t.start_time = g.dt;
    t.dt = g.dt;
  }
  return set;
}

}  // namespace dualplan
