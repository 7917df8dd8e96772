#include "dualplan/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace dualplan {

namespace {

constexpr const char* kModule = "training_pipeline";
using json = nlohmann::json;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::vector<int> pick_ticks(const Scenario& s, const GridConfig& g, int count) {
  const auto all = eligible_ticks(s, g);
  if (count <= 0 || count >= static_cast<int>(all.size())) return all;
  std::vector<int> out;
  for (int i = 0; i < count; ++i) {
    const std::size_t idx = (static_cast<std::size_t>(i) * (all.size() - 1)) / (count - 1 > 0 ? count - 1 : 1);
    out.push_back(all[idx]);
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

int oracle_best_candidate(const CandidateSet& cands, const Trajectory& gt) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(cands.trajectories.size()); ++i) {
    const Vec2 d = cands.trajectories[i].waypoints.back() - gt.waypoints.back();
    const double dist = d.norm();
    if (dist < best_d) {
      best_d = dist;
      best = i;
    }
  }
  return best;
}

}  // namespace

const char* to_string(TrainStage s) {
  switch (s) {
    case TrainStage::CompressorPretrain: return "compressor_pretrain";
    case TrainStage::AdapterTrain: return "adapter_train";
    case TrainStage::E2EHeadTrain: return "e2e_head_train";
    case TrainStage::JointTrain: return "joint_train";
    case TrainStage::SynergyFinetune: return "synergy_finetune";
  }
  return "unknown";
}

void TrainReport::save_csv(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError(kModule, "cannot write '" + path.string() + "'");
  f << "stage,epoch,loss\n";
  for (const auto& fr : fragments)
    for (std::size_t e = 0; e < fr.epoch_losses.size(); ++e) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g\n", fr.stage.c_str(), e, fr.epoch_losses[e]);
      f << buf;
    }
}

std::string TrainReport::to_json() const {
  json j;
  j["kind"] = "dualplan.train_report";
  j["seed"] = seed;
  j["config_hash"] = cfg_hash;
  json frs = json::array();
  for (const auto& fr : fragments)
    frs.push_back(json{{"stage", fr.stage}, {"epoch_losses", fr.epoch_losses}, {"seconds", fr.seconds}});
  j["fragments"] = std::move(frs);
  return j.dump(2);
}

PlannerBundle::PlannerBundle(const RunConfig& cfg_in, const TrajectoryBank& bank_in,
                             std::uint64_t seed_in, bool detection_only_compressor)
    : cfg(cfg_in), bank(bank_in), seed(seed_in) {
  compressor = std::make_unique<QueryCompressor>(cfg, derive_seed(seed, 1), detection_only_compressor);
  chain = std::make_unique<ChainPlanner>(cfg, derive_seed(seed, 2));
  direct = std::make_unique<DirectPlanner>(cfg, derive_seed(seed, 3));
  e2e = std::make_unique<E2EPlanner>(cfg, derive_seed(seed, 4));
  ego = std::make_unique<EgoMlp>(cfg, derive_seed(seed, 5));
  ego->set_normalization(bank.norm);
}

void PlannerBundle::save(const std::filesystem::path& dir, const std::set<TrainStage>& completed) const {
  std::filesystem::create_directories(dir);
  compressor->save(dir / "compressor.ckpt");
  chain->save(dir / "chain.ckpt");
  direct->save(dir / "direct.ckpt");
  e2e->save(dir / "e2e.ckpt");
  ego->save(dir / "ego_mlp.ckpt");
  json j;
  j["format_version"] = 1;
  j["seed"] = seed;
  j["config_hash"] = model_config_hash(cfg);
  json stages = json::array();
  for (TrainStage s : completed) stages.push_back(to_string(s));
  j["completed_stages"] = std::move(stages);
  std::ofstream f(dir / "stages.json", std::ios::trunc);
  f << j.dump(2) << "\n";
}

std::set<TrainStage> PlannerBundle::load(const std::filesystem::path& dir) {
  compressor->load(dir / "compressor.ckpt");
  chain->load(dir / "chain.ckpt");
  direct->load(dir / "direct.ckpt");
  e2e->load(dir / "e2e.ckpt");
  ego->load(dir / "ego_mlp.ckpt");
  std::set<TrainStage> completed;
  std::ifstream f(dir / "stages.json");
  if (!f) throw FormatError(kModule, "missing stages.json in '" + dir.string() + "'");
  try {
    const json j = json::parse(f);
    for (const auto& s : j.at("completed_stages")) {
      const std::string name = s.get<std::string>();
      for (int i = 0; i < 5; ++i)
        if (name == to_string(static_cast<TrainStage>(i))) completed.insert(static_cast<TrainStage>(i));
    }
  } catch (const json::exception& e) {
    throw FormatError(kModule, std::string("stages.json parse error: ") + e.what());
  }
  return completed;
}

SceneTokens PlannerBundle::scene_for_frame(const FrameSample& frame, TemporalMemory* memory) const {
  NoGradGuard ng;
  const SceneFeatures feats = render_features(*frame.scenario, frame.tick_index, cfg.compressor);
  return compressor->compress(feats, memory, frame.time).scene;
}

Trajectory PlannerBundle::plan_chain(const FrameSample& frame, const SceneTokens& scene,
                                     ChainDecision* decision) const {
  NoGradGuard ng;
  const CandidateSet cands = assemble_candidates(bank, frame.status, *ego, cfg.grid, cfg.bank.k_l);
  const SelectionResult sel = chain->select(scene, frame.status, cands);
  const RefinementResult ref = chain->refine(scene, frame.status, sel);
  if (decision != nullptr) {
    decision->scenario_id = frame.scenario->id;
    decision->tick_time = frame.time;
    decision->candidate_provenance = cands.provenance;
    decision->scores = sel.scores;
    decision->chosen_index = sel.chosen_index;
    decision->deltas = ref.deltas;
    decision->refined = ref.trajectory;
  }
  return ref.trajectory;
}

Trajectory PlannerBundle::plan_direct(const FrameSample& frame, const SceneTokens& scene) const {
  NoGradGuard ng;
  return direct->plan(scene, frame.status);
}

Trajectory PlannerBundle::plan_fast(const FrameSample& frame, const SceneTokens& scene,
                                    const std::optional<Trajectory>& synergy) const {
  NoGradGuard ng;
  const auto queries = e2e->init_queries(bank, frame.status, synergy);
  const PlanOutput out = e2e->plan(scene, queries, frame.status);
  return out.trajectories[out.best];
}

Trainer::Trainer(const RunConfig& cfg, const Dataset& ds, const TrajectoryBank& bank,
                 std::uint64_t seed, bool detection_only_compressor)
    : ds_(ds), cfg_(cfg), bundle_(cfg, bank, seed, detection_only_compressor), seed_(seed) {
  build_cache();
}

void Trainer::build_cache() {
  const int delay_ticks =
      std::max(1, static_cast<int>(std::llround(cfg_.synergy.delay / cfg_.grid.dt)));
  for (const auto& id : ds_.split.train) {
    const Scenario& s = ds_.by_id(id);
    ScenarioFrames sf;
    sf.id = id;
    for (int tick : pick_ticks(s, cfg_.grid, cfg_.train.frames_per_scenario)) {
      TrainFrame tf;
      tf.sample = make_frame(s, tick, cfg_.grid);
      tf.features = render_features(s, tick, cfg_.compressor);
      tf.targets = make_targets(s, tick, cfg_.compressor);
      sf.frames.push_back(std::move(tf));
    }
    if (!sf.frames.empty()) train_scenarios_.push_back(std::move(sf));

    ScenarioFrames sy;
    sy.id = id;
    const auto all = eligible_ticks(s, cfg_.grid);
    for (std::size_t i = 0; i < all.size(); i += delay_ticks) {
      TrainFrame tf;
      tf.sample = make_frame(s, all[i], cfg_.grid);
      tf.features = render_features(s, all[i], cfg_.compressor);
      tf.targets = make_targets(s, all[i], cfg_.compressor);
      sy.frames.push_back(std::move(tf));
    }
    if (!sy.frames.empty()) synergy_scenarios_.push_back(std::move(sy));
  }
  if (train_scenarios_.empty()) throw DataError(kModule, "no training scenarios available");
}

void Trainer::apply_freeze(TrainStage stage) {
  auto set = [&](ParamStore& store, bool frozen) { store.freeze_prefix("", frozen); };
  // Normalization constants stay frozen no matter what.
  auto unfreeze_ego = [&]() {
    bundle_.ego->params().freeze_prefix("", false);
    bundle_.ego->params().freeze_prefix("ego_mlp.norm", true);
  };
  set(bundle_.compressor->params(), true);
  set(bundle_.chain->params(), true);
  set(bundle_.direct->params(), true);
  set(bundle_.e2e->params(), true);
  set(bundle_.ego->params(), true);
  switch (stage) {
    case TrainStage::CompressorPretrain:
      set(bundle_.compressor->params(), false);
      break;
    case TrainStage::AdapterTrain:
      set(bundle_.chain->params(), false);
      unfreeze_ego();
      break;
    case TrainStage::E2EHeadTrain:
      set(bundle_.e2e->params(), false);
      break;
    case TrainStage::JointTrain:
      set(bundle_.compressor->params(), false);
      set(bundle_.chain->params(), false);
      set(bundle_.e2e->params(), false);
      break;
    case TrainStage::SynergyFinetune:
      set(bundle_.e2e->params(), false);
      break;
  }
}

double Trainer::epoch_compressor(Adam& opt, std::mt19937_64& rng, bool joint) {
  std::vector<std::size_t> order(train_scenarios_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  double total = 0.0;
  std::size_t count = 0;
  int in_batch = 0;
  bundle_.compressor->params().zero_grads();
  if (joint) {
    bundle_.chain->params().zero_grads();
    bundle_.e2e->params().zero_grads();
  }
  for (std::size_t si : order) {
    const auto& sf = train_scenarios_[si];
    TemporalMemory memory(cfg_.compressor.memory_frames);
    for (const auto& tf : sf.frames) {
      const auto out = bundle_.compressor->compress(tf.features, &memory, tf.sample.time);
      Tensor loss = bundle_.compressor->perception_loss(out, tf.targets);
      if (joint) {
        loss = scale(loss, 0.5);
        loss = add(loss, chain_losses(tf, out.scene));
        loss = add(loss, e2e_losses(tf, out.scene, std::nullopt, false));
      }
      backward(loss);
      total += loss.scalar();
      ++count;
      if (++in_batch >= cfg_.train.batch) {
        opt.step(bundle_.compressor->params());
        if (joint) {
          opt.step(bundle_.chain->params());
          opt.step(bundle_.e2e->params());
        }
        in_batch = 0;
      }
    }
  }
  if (in_batch > 0) {
    opt.step(bundle_.compressor->params());
    if (joint) {
      opt.step(bundle_.chain->params());
      opt.step(bundle_.e2e->params());
    }
  }
  return total / std::max<std::size_t>(1, count);
}

double Trainer::epoch_ego(Adam& opt, std::mt19937_64& rng) {
  std::vector<const TrainFrame*> frames;
  for (const auto& sf : train_scenarios_)
    for (const auto& tf : sf.frames) frames.push_back(&tf);
  std::shuffle(frames.begin(), frames.end(), rng);
  double total = 0.0;
  int in_batch = 0;
  bundle_.ego->params().zero_grads();
  for (const TrainFrame* tf : frames) {
    const std::vector<double> f = status_feature(tf->sample.status, cfg_.grid);
    const Tensor res = bundle_.ego->forward(Tensor::from_data(1, static_cast<int>(f.size()), f));
    const Trajectory base =
        constant_velocity_rollout(tf->sample.status, cfg_.grid, cfg_.grid.long_horizon);
    std::vector<double> target;
    for (int i = 0; i < cfg_.grid.long_horizon; ++i) {
      target.push_back(tf->sample.future_long.waypoints[i].x - base.waypoints[i].x);
      target.push_back(tf->sample.future_long.waypoints[i].y - base.waypoints[i].y);
    }
    const Tensor loss =
        l1_loss(res, Tensor::from_data(1, 2 * cfg_.grid.long_horizon, std::move(target)));
    backward(loss);
    total += loss.scalar();
    if (++in_batch >= cfg_.train.batch) {
      opt.step(bundle_.ego->params());
      in_batch = 0;
    }
  }
  if (in_batch > 0) opt.step(bundle_.ego->params());
  return total / std::max<std::size_t>(1, frames.size());
}

Tensor Trainer::chain_losses(const TrainFrame& tf, const SceneTokens& scene) {
  const CandidateSet cands =
      assemble_candidates(bundle_.bank, tf.sample.status, *bundle_.ego, cfg_.grid, cfg_.bank.k_l);
  const int oracle = oracle_best_candidate(cands, tf.sample.future_long);
  const Tensor logits = bundle_.chain->selection_logits(scene, tf.sample.status, cands);
  Tensor loss = scale(cross_entropy_logits(logits, {oracle}), cfg_.train.selection_loss_weight);

  // Refine from the currently selected reference so training matches the
  // inference-time input distribution.
  int chosen = 0;
  for (int i = 1; i < logits.cols(); ++i)
    if (logits.at(0, i) > logits.at(0, chosen)) chosen = i;
  const Trajectory& ref = cands.trajectories[chosen];
  const Tensor deltas = bundle_.chain->refinement_deltas(scene, tf.sample.status, ref);
  std::vector<double> target;
  for (int i = 0; i < cfg_.grid.long_horizon; ++i) {
    target.push_back(tf.sample.future_long.waypoints[i].x - ref.waypoints[i].x);
    target.push_back(tf.sample.future_long.waypoints[i].y - ref.waypoints[i].y);
  }
  const Tensor tgt = Tensor::from_data(cfg_.grid.long_horizon, 2, std::move(target));
  loss = add(loss, scale(l1_loss(deltas, tgt), cfg_.train.refine_loss_weight));
  return loss;
}

Tensor Trainer::e2e_losses(const TrainFrame& tf, const SceneTokens& scene,
                           const std::optional<Trajectory>& synergy, bool direct_baseline) {
  if (direct_baseline) {
    const Tensor res = bundle_.direct->waypoint_residuals(scene, tf.sample.status);
    const Trajectory base =
        constant_velocity_rollout(tf.sample.status, cfg_.grid, cfg_.grid.long_horizon);
    std::vector<double> target;
    for (int i = 0; i < cfg_.grid.long_horizon; ++i) {
      target.push_back(tf.sample.future_long.waypoints[i].x - base.waypoints[i].x);
      target.push_back(tf.sample.future_long.waypoints[i].y - base.waypoints[i].y);
    }
    return l1_loss(res, Tensor::from_data(cfg_.grid.long_horizon, 2, std::move(target)));
  }

  const auto queries = bundle_.e2e->init_queries(bundle_.bank, tf.sample.status, synergy);
  const auto fwd = bundle_.e2e->forward(scene, queries);
  const int n_fast = cfg_.grid.fast_horizon;
  // Winner: query whose anchored prediction lands closest to the target.
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int q = 0; q < static_cast<int>(queries.size()); ++q) {
    double d = 0.0;
    for (int i = 0; i < n_fast; ++i) {
      const double px = queries[q].anchor.waypoints[i].x + fwd.waypoints.at(q, 2 * i);
      const double py = queries[q].anchor.waypoints[i].y + fwd.waypoints.at(q, 2 * i + 1);
      d += std::hypot(px - tf.sample.future_fast.waypoints[i].x,
                      py - tf.sample.future_fast.waypoints[i].y);
    }
    if (d < best_d) {
      best_d = d;
      best = q;
    }
  }
  std::vector<double> target;
  for (int i = 0; i < n_fast; ++i) {
    target.push_back(tf.sample.future_fast.waypoints[i].x - queries[best].anchor.waypoints[i].x);
    target.push_back(tf.sample.future_fast.waypoints[i].y - queries[best].anchor.waypoints[i].y);
  }
  Tensor loss = l1_loss(slice_rows(fwd.waypoints, best, best + 1),
                        Tensor::from_data(1, 2 * n_fast, std::move(target)));
  loss = add(loss, scale(cross_entropy_logits(transpose(fwd.confidence), {best}), 0.5));
  return loss;
}

double Trainer::epoch_chain(Adam& opt, std::mt19937_64& rng, bool joint) {
  (void)joint;
  std::vector<std::size_t> order(train_scenarios_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  double total = 0.0;
  std::size_t count = 0;
  int in_batch = 0;
  bundle_.chain->params().zero_grads();
  for (std::size_t si : order) {
    const auto& sf = train_scenarios_[si];
    TemporalMemory memory(cfg_.compressor.memory_frames);
    for (const auto& tf : sf.frames) {
      SceneTokens scene;
      {
        // The compressor is frozen here; keep its forward graph-free.
        const auto out = bundle_.compressor->compress(tf.features, &memory, tf.sample.time);
        scene = out.scene;
      }
      const Tensor loss = chain_losses(tf, scene);
      backward(loss);
      total += loss.scalar();
      ++count;
      if (++in_batch >= cfg_.train.batch) {
        opt.step(bundle_.chain->params());
        in_batch = 0;
      }
    }
  }
  if (in_batch > 0) opt.step(bundle_.chain->params());
  return total / std::max<std::size_t>(1, count);
}

double Trainer::epoch_e2e(Adam& opt, std::mt19937_64& rng, bool synergy, bool direct_baseline) {
  const auto& scenarios = synergy ? synergy_scenarios_ : train_scenarios_;
  std::vector<std::size_t> order(scenarios.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  double total = 0.0;
  std::size_t count = 0;
  int in_batch = 0;
  ParamStore& store = direct_baseline ? bundle_.direct->params() : bundle_.e2e->params();
  store.zero_grads();
  for (std::size_t si : order) {
    const auto& sf = scenarios[si];
    TemporalMemory memory(cfg_.compressor.memory_frames);
    // Historical slow-planner outputs for the synergy stage.
    std::vector<std::pair<double, SynergyRecord>> history;  // (time, record)
    for (const auto& tf : sf.frames) {
      SceneTokens scene = [&] {
        const auto out = bundle_.compressor->compress(tf.features, &memory, tf.sample.time);
        return out.scene;
      }();
      std::optional<Trajectory> syn;
      if (synergy) {
        // Newest stored record whose age is at least the modeled delay.
        for (auto it = history.rbegin(); it != history.rend(); ++it) {
          if (tf.sample.time - it->first + 1e-9 < cfg_.synergy.delay) continue;
          try {
            syn = align_to_now(it->second, tf.sample.time, tf.sample.ego_pose, cfg_.grid);
          } catch (const HorizonExceeded&) {
            syn.reset();
          }
          break;
        }
      }
      const Tensor loss = e2e_losses(tf, scene, syn, direct_baseline);
      backward(loss);
      total += loss.scalar();
      ++count;
      if (++in_batch >= cfg_.train.batch) {
        opt.step(store);
        in_batch = 0;
      }
      if (synergy) {
        NoGradGuard ng;
        SynergyRecord rec;
        rec.produced_at = tf.sample.time;
        rec.ego_pose = tf.sample.ego_pose;
        const CandidateSet cands = assemble_candidates(bundle_.bank, tf.sample.status, *bundle_.ego,
                                                       cfg_.grid, cfg_.bank.k_l);
        rec.trajectory = bundle_.chain->plan(scene, tf.sample.status, cands);
        history.emplace_back(tf.sample.time, std::move(rec));
      }
    }
  }
  if (in_batch > 0) opt.step(store);
  return total / std::max<std::size_t>(1, count);
}

StageFragment Trainer::run_stage(TrainStage stage) {
  for (int i = 0; i < static_cast<int>(stage); ++i)
    if (!completed_.count(static_cast<TrainStage>(i)))
      throw StageOrderError(kModule, std::string("stage '") + to_string(stage) +
                                         "' requires completed stage '" +
                                         to_string(static_cast<TrainStage>(i)) + "'");
  apply_freeze(stage);
  StageFragment frag;
  frag.stage = to_string(stage);
  const double t0 = now_seconds();
  std::mt19937_64 rng(derive_seed(seed_, 100 + static_cast<std::uint64_t>(stage)));

  switch (stage) {
    case TrainStage::CompressorPretrain: {
      Adam opt({cfg_.train.compressor_pretrain.lr});
      for (int e = 0; e < cfg_.train.compressor_pretrain.epochs; ++e)
        frag.epoch_losses.push_back(epoch_compressor(opt, rng, false));
      break;
    }
    case TrainStage::AdapterTrain: {
      Adam ego_opt({cfg_.train.ego_mlp.lr});
      for (int e = 0; e < cfg_.train.ego_mlp.epochs; ++e) epoch_ego(ego_opt, rng);
      bundle_.ego->mark_trained();
      Adam opt({cfg_.train.adapter_train.lr});
      for (int e = 0; e < cfg_.train.adapter_train.epochs; ++e)
        frag.epoch_losses.push_back(epoch_chain(opt, rng, false));
      break;
    }
    case TrainStage::E2EHeadTrain: {
      Adam opt({cfg_.train.e2e_head_train.lr});
      for (int e = 0; e < cfg_.train.e2e_head_train.epochs; ++e)
        frag.epoch_losses.push_back(epoch_e2e(opt, rng, false, false));
      break;
    }
    case TrainStage::JointTrain: {
      Adam opt({cfg_.train.joint_train.lr});
      for (int e = 0; e < cfg_.train.joint_train.epochs; ++e)
        frag.epoch_losses.push_back(epoch_compressor(opt, rng, true));
      break;
    }
    case TrainStage::SynergyFinetune: {
      Adam opt({cfg_.train.synergy_finetune.lr});
      for (int e = 0; e < cfg_.train.synergy_finetune.epochs; ++e)
        frag.epoch_losses.push_back(epoch_e2e(opt, rng, true, false));
      break;
    }
  }
  for (double l : frag.epoch_losses)
    if (!std::isfinite(l))
      throw NumericsError(kModule, std::string("loss diverged in stage '") + to_string(stage) + "'");
  frag.seconds = now_seconds() - t0;
  completed_.insert(stage);
  return frag;
}

TrainReport Trainer::run_all() {
  TrainReport rep;
  rep.seed = seed_;
  rep.cfg_hash = config_hash(cfg_);
  for (int i = 0; i < 5; ++i) rep.fragments.push_back(run_stage(static_cast<TrainStage>(i)));
  return rep;
}

StageFragment Trainer::train_direct_baseline() {
  if (!completed_.count(TrainStage::CompressorPretrain))
    throw StageOrderError(kModule, "direct baseline requires a pretrained compressor");
  // Same schedule as the chain training for a like-for-like comparison.
  bundle_.compressor->params().freeze_prefix("", true);
  bundle_.chain->params().freeze_prefix("", true);
  bundle_.e2e->params().freeze_prefix("", true);
  bundle_.ego->params().freeze_prefix("", true);
  bundle_.direct->params().freeze_prefix("", false);
  StageFragment frag;
  frag.stage = "direct_baseline";
  const double t0 = now_seconds();
  std::mt19937_64 rng(derive_seed(seed_, 777));
  Adam opt({cfg_.train.adapter_train.lr});
  for (int e = 0; e < cfg_.train.adapter_train.epochs; ++e)
    frag.epoch_losses.push_back(epoch_e2e(opt, rng, false, true));
  frag.seconds = now_seconds() - t0;
  return frag;
}

SimulationResult simulate_scenario(const PlannerBundle& bundle, const Scenario& scenario,
                                   const SynergyConfig& sc, std::uint64_t seed) {
  NoGradGuard ng;
  SimulationResult out;
  const auto ticks = eligible_ticks(scenario, bundle.cfg.grid);
  if (ticks.empty()) return out;

  // One temporal stream of compressed scenes shared by all passes.
  std::vector<SceneTokens> scenes(ticks.size());
  {
    TemporalMemory memory(bundle.cfg.compressor.memory_frames);
    for (std::size_t i = 0; i < ticks.size(); ++i) {
      const FrameSample frame = make_frame(scenario, ticks[i], bundle.cfg.grid);
      scenes[i] = bundle.scene_for_frame(frame, &memory);
    }
  }
  std::map<int, std::size_t> tick_to_idx;
  for (std::size_t i = 0; i < ticks.size(); ++i) tick_to_idx[ticks[i]] = i;

  auto slow_plan = [&](const FrameSample& frame) {
    ChainDecision dec;
    const Trajectory plan = bundle.plan_chain(frame, scenes[tick_to_idx.at(frame.tick_index)], &dec);
    out.decisions.push_back(std::move(dec));
    return plan;
  };
  auto fast_plan = [&](const FrameSample& frame, const std::optional<Trajectory>& synergy) {
    return bundle.plan_fast(frame, scenes[tick_to_idx.at(frame.tick_index)], synergy);
  };

  const SynergyLoopResult loop =
      run_synergy_loop(scenario, slow_plan, fast_plan, sc, bundle.cfg.grid, seed);

  for (const auto& st : loop.fast_ticks) {
    PlanTrace tr;
    tr.scenario_id = scenario.id;
    tr.tick_index = st.tick_index;
    tr.tick_time = st.tick_time;
    tr.prov = Provenance::E2EAsync;
    tr.used_synergy = st.used_synergy;
    tr.record_age = st.record_age;
    tr.ego_pose = st.ego_pose;
    tr.plan = st.plan;
    out.e2e_async.push_back(std::move(tr));
  }
  for (const auto& st : loop.slow_ticks) {
    PlanTrace tr;
    tr.scenario_id = scenario.id;
    tr.tick_index = st.tick_index;
    tr.tick_time = st.tick_time;
    tr.prov = Provenance::Chain;
    tr.ego_pose = st.ego_pose;
    tr.plan = st.plan;
    out.chain.push_back(std::move(tr));
  }
  // Plain pass over the same frames; no synergy input at all.
  for (std::size_t i = 0; i < ticks.size(); ++i) {
    const FrameSample frame = make_frame(scenario, ticks[i], bundle.cfg.grid);
    PlanTrace tr;
    tr.scenario_id = scenario.id;
    tr.tick_index = ticks[i];
    tr.tick_time = frame.time;
    tr.prov = Provenance::E2E;
    tr.ego_pose = frame.ego_pose;
    tr.plan = bundle.plan_fast(frame, scenes[i], std::nullopt);
    out.e2e.push_back(std::move(tr));
  }
  return out;
}

void save_chain_decisions(const std::vector<ChainDecision>& decisions,
                          const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError(kModule, "cannot write decisions '" + path.string() + "'");
  for (const auto& d : decisions) {
    json j;
    j["scenario_id"] = d.scenario_id;
    j["tick_time"] = d.tick_time;
    j["candidates"] = d.candidate_provenance;
    j["scores"] = d.scores;
    j["chosen_index"] = d.chosen_index;
    json deltas = json::array();
    for (const auto& v : d.deltas) deltas.push_back(json::array({v.x, v.y}));
    j["deltas"] = std::move(deltas);
    json refined = json::array();
    for (const auto& v : d.refined.waypoints) refined.push_back(json::array({v.x, v.y}));
    j["refined"] = std::move(refined);
    f << j.dump() << "\n";
  }
}

}  // namespace dualplan
