#include "dualplan/chain_planner.hpp"

#include <cmath>

namespace dualplan {

namespace {

constexpr const char* kModule = "tcot_planner";

double endpoint_heading(const Trajectory& t) {
  const std::size_t n = t.waypoints.size();
  const Vec2 last = t.waypoints[n - 1];
  const Vec2 prev = n >= 2 ? t.waypoints[n - 2] : Vec2{0.0, 0.0};
  const Vec2 d = last - prev;
  return d.norm() > 1e-9 ? std::atan2(d.y, d.x) : 0.0;
}

}  // namespace

ChainPlanner::ChainPlanner(const RunConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(seed) {
  const int d = cfg.model.dim;
  ep_l1_ = make_linear(params_, "chain.ep1", 3, d);
  ep_l2_ = make_linear(params_, "chain.ep2", d, d);
  wp_l1_ = make_linear(params_, "chain.wp1", 2, d);
  wp_l2_ = make_linear(params_, "chain.wp2", d, d);
  wp_index_embed_ = params_.create("chain.wp_index", cfg.grid.long_horizon, d, Init::Normal02);
  status_proj_ = make_linear(params_, "chain.status", cfg.feature_dim(), d);
  for (int l = 0; l < cfg.model.dec_layers; ++l) {
    select_blocks_.push_back(make_decoder_block(params_, "chain.select." + std::to_string(l), d,
                                                cfg.model.heads, cfg.model.ffn_mult));
    refine_blocks_.push_back(make_decoder_block(params_, "chain.refine." + std::to_string(l), d,
                                                cfg.model.heads, cfg.model.ffn_mult));
  }
  select_head_ = make_linear(params_, "chain.select_head", d, 1);
  refine_head_ = make_linear(params_, "chain.refine_head", d, 2, Init::Zero, Init::Zero);
}

Tensor ChainPlanner::status_token(const EgoStatus& status) const {
  const std::vector<double> f = status_feature(status, cfg_.grid);
  return status_proj_(Tensor::from_data(1, static_cast<int>(f.size()), f));
}

Tensor ChainPlanner::context(const SceneTokens& scene, const EgoStatus& status) const {
  return concat_rows({scene.tokens, status_token(status)});
}

TrajectoryToken ChainPlanner::endpoint_token(const Trajectory& candidate) const {
  candidate.validate("endpoint_token");
  const Vec2 end = candidate.waypoints.back();
  const double scale = std::max(1.0, cfg_.grid.long_span() * 12.0);  // ~max reachable range
  Tensor in = Tensor::from_data(1, 3, {end.x / scale, end.y / scale, endpoint_heading(candidate)});
  TrajectoryToken tok;
  tok.vec = ep_l2_(gelu(ep_l1_(in)));
  tok.source = TrajectoryToken::Source::Endpoint;
  return tok;
}

std::vector<TrajectoryToken> ChainPlanner::waypoint_tokens(const Trajectory& reference) const {
  reference.validate("waypoint_tokens");
  if (static_cast<int>(reference.waypoints.size()) != cfg_.grid.long_horizon)
    throw InvalidCandidates(kModule, "reference must be on the long-horizon grid");
  const double scale = std::max(1.0, cfg_.grid.long_span() * 12.0);
  std::vector<TrajectoryToken> out;
  out.reserve(reference.waypoints.size());
  for (int i = 0; i < static_cast<int>(reference.waypoints.size()); ++i) {
    const Vec2 w = reference.waypoints[i];
    Tensor in = Tensor::from_data(1, 2, {w.x / scale, w.y / scale});
    TrajectoryToken tok;
    tok.vec = add(wp_l2_(gelu(wp_l1_(in))), slice_rows(wp_index_embed_, i, i + 1));
    tok.source = TrajectoryToken::Source::Waypoint;
    tok.origin = i;
    out.push_back(std::move(tok));
  }
  return out;
}

Tensor ChainPlanner::selection_logits(const SceneTokens& scene, const EgoStatus& status,
                                      const CandidateSet& cands) const {
  if (cands.trajectories.empty()) throw InvalidCandidates(kModule, "empty candidate set");
  std::vector<Tensor> rows;
  rows.reserve(cands.trajectories.size());
  for (const auto& c : cands.trajectories) rows.push_back(endpoint_token(c).vec);
  Tensor x = concat_rows(rows);
  const Tensor ctx = context(scene, status);
  for (const auto& blk : select_blocks_) x = blk.forward(x, ctx);
  return transpose(select_head_(x));  // [1 x n_cands]
}

SelectionResult ChainPlanner::select(const SceneTokens& scene, const EgoStatus& status,
                                     const CandidateSet& cands) const {
  const Tensor logits = selection_logits(scene, status, cands);
  SelectionResult res;
  res.scores.assign(logits.data().begin(), logits.data().end());
  res.chosen_index = 0;
  for (int i = 1; i < static_cast<int>(res.scores.size()); ++i)
    if (res.scores[i] > res.scores[res.chosen_index]) res.chosen_index = i;  // ties keep lowest
  res.reference = cands.trajectories[res.chosen_index];
  return res;
}

Tensor ChainPlanner::refinement_deltas(const SceneTokens& scene, const EgoStatus& status,
                                       const Trajectory& reference) const {
  const auto toks = waypoint_tokens(reference);
  std::vector<Tensor> rows;
  rows.reserve(toks.size());
  for (const auto& t : toks) rows.push_back(t.vec);
  Tensor x = concat_rows(rows);
  const Tensor ctx = context(scene, status);
  for (const auto& blk : refine_blocks_) x = blk.forward(x, ctx);
  return refine_head_(x);  // [n_long x 2]
}

RefinementResult ChainPlanner::refine(const SceneTokens& scene, const EgoStatus& status,
                                      const SelectionResult& sel) const {
  const Tensor deltas = refinement_deltas(scene, status, sel.reference);
  RefinementResult out;
  out.trajectory = sel.reference;
  out.deltas.reserve(sel.reference.waypoints.size());
  for (std::size_t i = 0; i < sel.reference.waypoints.size(); ++i) {
    const Vec2 d{deltas.at(static_cast<int>(i), 0), deltas.at(static_cast<int>(i), 1)};
    out.deltas.push_back(d);
    out.trajectory.waypoints[i] = out.trajectory.waypoints[i] + d;
  }
  return out;
}

Trajectory ChainPlanner::plan(const SceneTokens& scene, const EgoStatus& status,
                              const CandidateSet& cands, bool refine_enabled) const {
  const SelectionResult sel = select(scene, status, cands);
  if (!refine_enabled) return sel.reference;
  return refine(scene, status, sel).trajectory;
}

DirectPlanner::DirectPlanner(const RunConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(seed) {
  const int d = cfg.model.dim;
  slot_embed_ = params_.create("direct.slots", cfg.grid.long_horizon, d, Init::Normal02);
  status_proj_ = make_linear(params_, "direct.status", cfg.feature_dim(), d);
  for (int l = 0; l < cfg.model.dec_layers; ++l)
    blocks_.push_back(make_decoder_block(params_, "direct.dec." + std::to_string(l), d,
                                         cfg.model.heads, cfg.model.ffn_mult));
  head_ = make_linear(params_, "direct.head", d, 2, Init::Zero, Init::Zero);
}

Tensor DirectPlanner::waypoint_residuals(const SceneTokens& scene, const EgoStatus& status) const {
  const std::vector<double> f = status_feature(status, cfg_.grid);
  const Tensor st = status_proj_(Tensor::from_data(1, static_cast<int>(f.size()), f));
  const Tensor ctx = concat_rows({scene.tokens, st});
  Tensor x = add_rowvec(slot_embed_, st);
  for (const auto& blk : blocks_) x = blk.forward(x, ctx);
  return head_(x);
}

Trajectory DirectPlanner::plan(const SceneTokens& scene, const EgoStatus& status) const {
  const Tensor res = waypoint_residuals(scene, status);
  Trajectory out = constant_velocity_rollout(status, cfg_.grid, cfg_.grid.long_horizon);
  out.frame = status.history.frame;
  for (int i = 0; i < cfg_.grid.long_horizon; ++i) {
    out.waypoints[i].x += res.at(i, 0);
    out.waypoints[i].y += res.at(i, 1);
  }
  return out;
}

}  // namespace dualplan
