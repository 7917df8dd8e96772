#include "dualplan/e2e_planner.hpp"

#include <cmath>

namespace dualplan {

namespace {

constexpr const char* kModule = "e2e_planner";

}  // namespace

E2EPlanner::E2EPlanner(const RunConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(seed) {
  const int d = cfg.model.dim;
  anchor_proj_ = make_linear(params_, "e2e.anchor", 2 * cfg.grid.fast_horizon, d);
  status_proj_ = make_linear(params_, "e2e.status", cfg.feature_dim(), d);
  synergy_tag_ = params_.create("e2e.synergy_tag", 1, d, Init::Normal02);
  for (int l = 0; l < cfg.model.dec_layers; ++l)
    blocks_.push_back(make_decoder_block(params_, "e2e.dec." + std::to_string(l), d, cfg.model.heads,
                                         cfg.model.ffn_mult));
  head_wp_ = make_linear(params_, "e2e.head_wp", d, 2 * cfg.grid.fast_horizon, Init::Zero, Init::Zero);
  head_conf_ = make_linear(params_, "e2e.head_conf", d, 1);
}

std::vector<PlanningQuery> E2EPlanner::init_queries(const TrajectoryBank& bank,
                                                    const EgoStatus& status,
                                                    const std::optional<Trajectory>& synergy) const {
  const auto& pool = bank.for_command(status.command);
  if (pool.empty()) throw InvalidCommand(kModule, "bank has no anchors for this command");
  const int n_fast = cfg_.grid.fast_horizon;
  const double scale = std::max(1.0, cfg_.grid.fast_span() * 14.0);
  const std::vector<double> f = status_feature(status, cfg_.grid);
  const Tensor status_emb = status_proj_(Tensor::from_data(1, static_cast<int>(f.size()), f));

  auto embed_anchor = [&](const Trajectory& anchor) {
    std::vector<double> flat;
    flat.reserve(2 * n_fast);
    for (int i = 0; i < n_fast; ++i) {
      flat.push_back(anchor.waypoints[i].x / scale);
      flat.push_back(anchor.waypoints[i].y / scale);
    }
    return add(anchor_proj_(Tensor::from_data(1, 2 * n_fast, std::move(flat))), status_emb);
  };

  std::vector<PlanningQuery> out;
  out.reserve(pool.size() + 1);
  for (int i = 0; i < static_cast<int>(pool.size()); ++i) {
    PlanningQuery q;
    q.anchor_index = i;
    q.anchor = pool[i].centroid_traj;
    q.anchor.waypoints.resize(n_fast);
    q.anchor.frame = status.history.frame;
    q.embedding = embed_anchor(q.anchor);
    out.push_back(std::move(q));
  }
  if (synergy.has_value()) {
    if (static_cast<int>(synergy->waypoints.size()) != n_fast)
      throw InvalidCandidates(kModule, "synergy trajectory must be on the fast grid");
    PlanningQuery q;
    q.synergy = true;
    q.anchor = *synergy;
    q.embedding = add(embed_anchor(q.anchor), synergy_tag_);
    out.push_back(std::move(q));
  }
  return out;
}

E2EPlanner::ForwardResult E2EPlanner::forward(const SceneTokens& scene,
                                              const std::vector<PlanningQuery>& queries,
                                              bool mask_synergy) const {
  if (queries.empty()) throw InvalidCandidates(kModule, "no planning queries");
  std::vector<Tensor> rows;
  rows.reserve(queries.size());
  for (const auto& q : queries) rows.push_back(q.embedding);
  Tensor x = concat_rows(rows);

  std::optional<Tensor> self_mask;
  if (mask_synergy) {
    // Zero out every query's attention onto synergy queries; their own rows
    // stay live so masked runs match synergy-free runs bit-exactly.
    Tensor m = Tensor::zeros(static_cast<int>(queries.size()), static_cast<int>(queries.size()));
    for (std::size_t c = 0; c < queries.size(); ++c)
      if (queries[c].synergy)
        for (std::size_t r = 0; r < queries.size(); ++r)
          m.mut(static_cast<int>(r), static_cast<int>(c)) = -INFINITY;
    self_mask = m;
  }

  for (const auto& blk : blocks_)
    x = blk.forward(x, scene.tokens, self_mask ? &*self_mask : nullptr);
  return {head_wp_(x), head_conf_(x)};
}

PlanOutput E2EPlanner::plan(const SceneTokens& scene, const std::vector<PlanningQuery>& queries,
                            const EgoStatus& status, bool mask_synergy) const {
  const ForwardResult fwd = forward(scene, queries, mask_synergy);
  const int n_fast = cfg_.grid.fast_horizon;
  PlanOutput out;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    if (mask_synergy && queries[qi].synergy) continue;
    Trajectory t;
    t.start_time = cfg_.grid.dt;
    t.dt = cfg_.grid.dt;
    t.frame = status.history.frame;
    for (int i = 0; i < n_fast; ++i)
      t.waypoints.push_back({queries[qi].anchor.waypoints[i].x + fwd.waypoints.at(static_cast<int>(qi), 2 * i),
                             queries[qi].anchor.waypoints[i].y + fwd.waypoints.at(static_cast<int>(qi), 2 * i + 1)});
    out.trajectories.push_back(std::move(t));
    out.confidence.push_back(fwd.confidence.at(static_cast<int>(qi), 0));
    out.synergy_flag.push_back(queries[qi].synergy);
  }
  out.best = 0;
  for (int i = 1; i < static_cast<int>(out.confidence.size()); ++i)
    if (out.confidence[i] > out.confidence[out.best]) out.best = i;
  return out;
}

}  // namespace dualplan
