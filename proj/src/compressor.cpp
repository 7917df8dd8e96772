#include "dualplan/compressor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dualplan {

namespace {

constexpr const char* kModule = "query_compressor";

}  // namespace

const char* to_string(Stage s) {
  switch (s) {
    case Stage::Static: return "static";
    case Stage::Detection: return "detection";
    case Stage::Lane: return "lane";
  }
  return "static";
}

std::vector<Stage> parse_stage_order(const std::vector<std::string>& names) {
  std::vector<Stage> out;
  for (const auto& n : names) {
    if (n == "static")
      out.push_back(Stage::Static);
    else if (n == "detection")
      out.push_back(Stage::Detection);
    else if (n == "lane")
      out.push_back(Stage::Lane);
    else
      throw ConfigError(kModule, "unknown stage '" + n + "'");
  }
  if (out.empty()) throw ConfigError(kModule, "stage order cannot be empty");
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = i + 1; j < out.size(); ++j)
      if (out[i] == out[j]) throw ConfigError(kModule, "stage order repeats a stage");
  return out;
}

void TemporalMemory::push(double time, const Tensor& tokens) {
  if (!entries_.empty() && time < entries_.back().time)
    throw ClockError(kModule, "memory timestamps must be non-decreasing");
  entries_.push_back({time, tokens.detach()});
  while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
}

std::vector<int> solve_assignment(const std::vector<double>& cost, int n_rows, int n_cols) {
  if (n_rows > n_cols) throw ShapeError(kModule, "assignment needs rows <= cols");
  if (n_rows == 0) return {};
  const double kInf = std::numeric_limits<double>::infinity();
  const int n = n_rows, m = n_cols;
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

QueryCompressor::QueryCompressor(const RunConfig& cfg, std::uint64_t seed, bool detection_only)
    : cfg_(cfg),
      detection_only_(detection_only),
      order_(parse_stage_order(cfg.compressor.stage_order)),
      params_(seed) {
  const int d = cfg.model.dim;
  const auto& cc = cfg.compressor;
  init_collectors_ = params_.create("compressor.collectors", cc.n_collect, d, Init::Normal02);
  init_ego_ = params_.create("compressor.ego", 1, d, Init::Normal02);
  det_queries_ = params_.create("compressor.det_queries", cc.n_det, d, Init::Normal02);
  lane_queries_ = params_.create("compressor.lane_queries", cc.n_lane, d, Init::Normal02);
  time_embed_ = params_.create("compressor.time_embed", cc.memory_frames, d, Init::Normal02);
  feat_proj_ = make_linear(params_, "compressor.feat_proj", cc.channels, d);
  pos_proj_ = make_linear(params_, "compressor.pos_proj", 4 * cc.pos_freqs, d);
  for (int l = 0; l < cfg.model.dec_layers; ++l) {
    static_blocks_.push_back(make_decoder_block(params_, "compressor.static." + std::to_string(l), d,
                                                cfg.model.heads, cfg.model.ffn_mult));
    det_blocks_.push_back(make_decoder_block(params_, "compressor.det." + std::to_string(l), d,
                                             cfg.model.heads, cfg.model.ffn_mult));
    lane_blocks_.push_back(make_decoder_block(params_, "compressor.lane." + std::to_string(l), d,
                                              cfg.model.heads, cfg.model.ffn_mult));
  }
  adapter_ = make_linear(params_, "compressor.adapter", d, d);
  det_head1_ = make_linear(params_, "compressor.det_head1", d, d);
  det_head_box_ = make_linear(params_, "compressor.det_head_box", d, 5);
  det_head_cls_ = make_linear(params_, "compressor.det_head_cls", d, 3);
  lane_head1_ = make_linear(params_, "compressor.lane_head1", d, d);
  lane_head_pts_ = make_linear(params_, "compressor.lane_head_pts", d, 2 * cc.lane_ctrl_points);
  lane_head_exist_ = make_linear(params_, "compressor.lane_head_exist", d, 2);
  aux_head1_ = make_linear(params_, "compressor.aux_head1", d, d);
  aux_weather_ = make_linear(params_, "compressor.aux_weather", d, 3);
  aux_tod_ = make_linear(params_, "compressor.aux_tod", d, 2);
  aux_count_ = make_linear(params_, "compressor.aux_count", d, 1);
  aux_nearest_ = make_linear(params_, "compressor.aux_nearest", d, 1);
}

Tensor QueryCompressor::embed_features(const SceneFeatures& feats) const {
  const int hw = feats.hw;
  const int n_cells = hw * hw;
  if (feats.channels != cfg_.compressor.channels)
    throw ShapeError(kModule, "feature channel count mismatch");
  // [cells x channels] view of the grid.
  std::vector<double> cells(static_cast<std::size_t>(n_cells) * feats.channels);
  for (int c = 0; c < feats.channels; ++c)
    for (int r = 0; r < hw; ++r)
      for (int col = 0; col < hw; ++col)
        cells[(static_cast<std::size_t>(r) * hw + col) * feats.channels + c] = feats.at(c, r, col);
  Tensor content = Tensor::from_data(n_cells, feats.channels, std::move(cells));

  // Sinusoidal position features from ego-frame cell centers.
  const int f = cfg_.compressor.pos_freqs;
  const double base = feats.hw * feats.cell_m;  // longest wavelength spans the grid
  std::vector<double> pos(static_cast<std::size_t>(n_cells) * 4 * f);
  for (int i = 0; i < n_cells; ++i) {
    const double x = feats.cell_xy[static_cast<std::size_t>(i) * 2 + 0];
    const double y = feats.cell_xy[static_cast<std::size_t>(i) * 2 + 1];
    for (int k = 0; k < f; ++k) {
      const double w = 2.0 * M_PI * (1 << k) / base;
      pos[(static_cast<std::size_t>(i) * 4 + 0) * f + k] = std::sin(w * x);
      pos[(static_cast<std::size_t>(i) * 4 + 1) * f + k] = std::cos(w * x);
      pos[(static_cast<std::size_t>(i) * 4 + 2) * f + k] = std::sin(w * y);
      pos[(static_cast<std::size_t>(i) * 4 + 3) * f + k] = std::cos(w * y);
    }
  }
  Tensor pos_t = Tensor::from_data(n_cells, 4 * f, std::move(pos));
  return add(feat_proj_(content), pos_proj_(pos_t));
}

void QueryCompressor::require_next(const std::vector<Stage>& applied, Stage next) const {
  if (applied.size() >= order_.size())
    throw StageOrderError(kModule, "all compressor stages already applied");
  const Stage expected = order_[applied.size()];
  for (std::size_t i = 0; i < applied.size(); ++i)
    if (applied[i] != order_[i])
      throw StageOrderError(kModule, "stage history does not match the configured order");
  if (expected != next)
    throw StageOrderError(kModule, std::string("expected stage '") + to_string(expected) +
                                       "', got '" + to_string(next) + "'");
}

CollectorTokens QueryCompressor::begin_frame() const {
  return CollectorTokens{init_collectors_, init_ego_, {}};
}

CollectorTokens QueryCompressor::static_stage(const CollectorTokens& in,
                                              const SceneFeatures& feats) const {
  require_next(in.applied, Stage::Static);
  const Tensor ctx = embed_features(feats);
  Tensor x = concat_rows({in.tokens, in.ego});
  for (const auto& blk : static_blocks_) x = blk.forward(x, ctx);
  CollectorTokens out;
  out.tokens = slice_rows(x, 0, in.tokens.rows());
  out.ego = slice_rows(x, in.tokens.rows(), in.tokens.rows() + 1);
  out.applied = in.applied;
  out.applied.push_back(Stage::Static);
  return out;
}

Tensor QueryCompressor::stage_context(const Tensor& feat_tokens, const TemporalMemory& memory) const {
  if (memory.size() == 0) return feat_tokens;
  std::vector<Tensor> parts{feat_tokens};
  // Newest first; each prior frame's tokens get an age embedding.
  int age = 0;
  for (auto it = memory.entries().rbegin(); it != memory.entries().rend(); ++it, ++age) {
    const int idx = std::min(age, time_embed_.rows() - 1);
    parts.push_back(add_rowvec(it->tokens, slice_rows(time_embed_, idx, idx + 1)));
  }
  return concat_rows(parts);
}

QueryCompressor::TaskResult QueryCompressor::task_stage(const CollectorTokens& in, Stage which,
                                                        const SceneFeatures& feats,
                                                        const TemporalMemory& memory,
                                                        bool mask_memory) const {
  if (which == Stage::Static) throw StageOrderError(kModule, "static is not a task stage");
  require_next(in.applied, which);
  const Tensor task_init = which == Stage::Detection ? det_queries_ : lane_queries_;
  const auto& blocks = which == Stage::Detection ? det_blocks_ : lane_blocks_;

  const Tensor feat_tokens = embed_features(feats);
  const Tensor ctx = stage_context(feat_tokens, memory);
  std::optional<Tensor> cross_mask;
  if (mask_memory && ctx.rows() > feat_tokens.rows()) {
    const int nq = in.tokens.rows() + 1 + task_init.rows();
    Tensor m = Tensor::zeros(nq, ctx.rows());
    for (int r = 0; r < nq; ++r)
      for (int c = feat_tokens.rows(); c < ctx.rows(); ++c) m.mut(r, c) = -INFINITY;
    cross_mask = m;
  }

  Tensor x = concat_rows({in.tokens, in.ego, task_init});
  for (const auto& blk : blocks)
    x = blk.forward(x, ctx, nullptr, cross_mask ? &*cross_mask : nullptr);

  TaskResult out;
  out.collectors.tokens = slice_rows(x, 0, in.tokens.rows());
  out.collectors.ego = slice_rows(x, in.tokens.rows(), in.tokens.rows() + 1);
  out.collectors.applied = in.applied;
  out.collectors.applied.push_back(which);
  out.task_queries = slice_rows(x, in.tokens.rows() + 1, x.rows());
  return out;
}

SceneTokens QueryCompressor::vision_adapter(const CollectorTokens& in) const {
  if (in.applied.size() != order_.size())
    throw StageOrderError(kModule, "vision adapter requires all stages applied");
  for (std::size_t i = 0; i < order_.size(); ++i)
    if (in.applied[i] != order_[i])
      throw StageOrderError(kModule, "stage history does not match the configured order");
  SceneTokens out;
  out.n_collect = in.tokens.rows();
  out.tokens = adapter_(concat_rows({in.tokens, in.ego}));
  return out;
}

QueryCompressor::FrameOutput QueryCompressor::compress(const SceneFeatures& feats,
                                                       TemporalMemory* memory, double time) const {
  static const TemporalMemory kEmpty{0};
  FrameOutput out;
  CollectorTokens cur = begin_frame();
  for (Stage s : order_) {
    if (s == Stage::Static) {
      cur = static_stage(cur, feats);
    } else {
      TaskResult res = task_stage(cur, s, feats, memory ? *memory : kEmpty);
      cur = std::move(res.collectors);
      if (s == Stage::Detection)
        out.det_queries = res.task_queries;
      else
        out.lane_queries = res.task_queries;
    }
  }
  out.scene = vision_adapter(cur);
  out.final_collectors = cur;
  if (memory != nullptr) memory->push(time, concat_rows({cur.tokens, cur.ego}).detach());
  return out;
}

DetectionPrediction QueryCompressor::detection_head(const Tensor& det_queries) const {
  const Tensor h = gelu(det_head1_(det_queries));
  return {det_head_box_(h), det_head_cls_(h)};
}

LanePrediction QueryCompressor::lane_head(const Tensor& lane_queries) const {
  const Tensor h = gelu(lane_head1_(lane_queries));
  return {lane_head_pts_(h), lane_head_exist_(h)};
}

AuxPrediction QueryCompressor::aux_heads(const CollectorTokens& final_collectors) const {
  const Tensor pooled = mean_rows(final_collectors.tokens);
  const Tensor h = gelu(aux_head1_(pooled));
  return {aux_weather_(h), aux_tod_(h), aux_count_(h), aux_nearest_(h)};
}

namespace {

// Normalization scales for box regression targets.
void box_target_row(const PerceptionTargets::Box& b, double range, std::vector<double>& out) {
  out.push_back(b.x / range);
  out.push_back(b.y / range);
  out.push_back(b.yaw / 2.0);
  out.push_back(b.length / 6.0);
  out.push_back(b.width / 3.0);
}

}  // namespace

Tensor QueryCompressor::detection_loss(const DetectionPrediction& pred,
                                       const PerceptionTargets& tg) const {
  const int nq = pred.cls_logits.rows();
  const int none_cls = 2;
  const double range = cfg_.compressor.grid_hw * cfg_.compressor.cell_m * 0.5;
  std::vector<int> labels(nq, none_cls);
  const int n_gt = static_cast<int>(tg.boxes.size());
  std::vector<int> match;
  if (n_gt > 0) {
    // Matching cost on detached values: class NLL + L1 box distance.
    std::vector<double> cost(static_cast<std::size_t>(n_gt) * nq);
    for (int i = 0; i < n_gt; ++i) {
      std::vector<double> trow;
      box_target_row(tg.boxes[i], range, trow);
      for (int q = 0; q < nq; ++q) {
        double mx = -INFINITY;
        for (int c = 0; c < 3; ++c) mx = std::max(mx, pred.cls_logits.at(q, c));
        double lse = 0.0;
        for (int c = 0; c < 3; ++c) lse += std::exp(pred.cls_logits.at(q, c) - mx);
        const double nll = -(pred.cls_logits.at(q, tg.boxes[i].cls) - mx - std::log(lse));
        double l1 = 0.0;
        for (int c = 0; c < 5; ++c) l1 += std::abs(pred.boxes.at(q, c) - trow[c]);
        cost[static_cast<std::size_t>(i) * nq + q] = nll + l1;
      }
    }
    match = solve_assignment(cost, n_gt, nq);
    for (int i = 0; i < n_gt; ++i) labels[match[i]] = tg.boxes[i].cls;
  }
  Tensor loss = cross_entropy_logits(pred.cls_logits, labels);
  if (n_gt > 0) {
    std::vector<Tensor> matched;
    std::vector<double> targets;
    for (int i = 0; i < n_gt; ++i) {
      matched.push_back(slice_rows(pred.boxes, match[i], match[i] + 1));
      box_target_row(tg.boxes[i], range, targets);
    }
    const Tensor target_t = Tensor::from_data(n_gt, 5, std::move(targets));
    loss = add(loss, l1_loss(concat_rows(matched), target_t));
  }
  return loss;
}

Tensor QueryCompressor::lane_loss(const LanePrediction& pred, const PerceptionTargets& tg) const {
  const int nq = pred.exist_logits.rows();
  const int ctrl = cfg_.compressor.lane_ctrl_points;
  const double range = cfg_.compressor.grid_hw * cfg_.compressor.cell_m * 0.5;
  const int n_gt = std::min<int>(static_cast<int>(tg.lane_ctrl.size()), nq);
  std::vector<int> labels(nq, 0);
  std::vector<int> match;
  if (n_gt > 0) {
    std::vector<double> cost(static_cast<std::size_t>(n_gt) * nq);
    for (int i = 0; i < n_gt; ++i)
      for (int q = 0; q < nq; ++q) {
        double l1 = 0.0;
        for (int p = 0; p < ctrl; ++p) {
          l1 += std::abs(pred.points.at(q, 2 * p) - tg.lane_ctrl[i][p].x / range);
          l1 += std::abs(pred.points.at(q, 2 * p + 1) - tg.lane_ctrl[i][p].y / range);
        }
        cost[static_cast<std::size_t>(i) * nq + q] = l1;
      }
    match = solve_assignment(cost, n_gt, nq);
    for (int i = 0; i < n_gt; ++i) labels[match[i]] = 1;
  }
  Tensor loss = cross_entropy_logits(pred.exist_logits, labels);
  if (n_gt > 0) {
    std::vector<Tensor> matched;
    std::vector<double> targets;
    for (int i = 0; i < n_gt; ++i) {
      matched.push_back(slice_rows(pred.points, match[i], match[i] + 1));
      for (int p = 0; p < ctrl; ++p) {
        targets.push_back(tg.lane_ctrl[i][p].x / range);
        targets.push_back(tg.lane_ctrl[i][p].y / range);
      }
    }
    const Tensor target_t = Tensor::from_data(n_gt, 2 * ctrl, std::move(targets));
    loss = add(loss, l1_loss(concat_rows(matched), target_t));
  }
  return loss;
}

Tensor QueryCompressor::aux_loss(const AuxPrediction& pred, const PerceptionTargets& tg) const {
  const double range = cfg_.compressor.grid_hw * cfg_.compressor.cell_m * 0.5;
  Tensor loss = cross_entropy_logits(pred.weather_logits, {tg.weather});
  loss = add(loss, cross_entropy_logits(pred.tod_logits, {tg.timeofday}));
  loss = add(loss, l1_loss(pred.count, Tensor::full(1, 1, tg.agent_count / 4.0)));
  loss = add(loss, l1_loss(pred.nearest, Tensor::full(1, 1, tg.nearest_dist / range)));
  return loss;
}

Tensor QueryCompressor::perception_loss(const FrameOutput& out, const PerceptionTargets& tg) const {
  Tensor loss;
  if (out.det_queries.valid())
    loss = detection_loss(detection_head(out.det_queries), tg);
  if (!detection_only_) {
    if (out.lane_queries.valid()) {
      const Tensor ll = lane_loss(lane_head(out.lane_queries), tg);
      loss = loss.valid() ? add(loss, ll) : ll;
    }
    if (cfg_.compressor.aux_heads) {
      const Tensor al = aux_loss(aux_heads(out.final_collectors), tg);
      loss = loss.valid() ? add(loss, al) : al;
    }
  }
  if (!loss.valid()) throw StageOrderError(kModule, "no supervised stage in the configured order");
  return loss;
}

}  // namespace dualplan
