#pragma once

// Sampling-based model-predictive control in latent space: encode the recent
// state history, draw candidate latent sequences from the sequence model at a
// widened sampling temperature, decode them to chain states, and rank the
// candidates by the best reward any decoded state attains. The winning
// sequence drives the low-level policy until the next replan.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lsp/common.hpp"
#include "lsp/kinematics.hpp"
#include "lsp/lowlevel.hpp"
#include "lsp/prior.hpp"
#include "lsp/vae.hpp"
#include "lsp/world.hpp"

namespace lsp::planner {

// Candidate scoring: maps a decoded chain state to a scalar, higher is better.
using RewardFn = std::function<double(const kin::ChainState&)>;

// Reward functions are looked up by id so configs stay declarative.
inline RewardFn make_reward(const std::string& id, const nlohmann::json& params) {
  if (id == "goal_distance") {
    if (!params.contains("goal") || !params.at("goal").is_array() || params.at("goal").size() != 2)
      throw ConfigError("reward 'goal_distance' needs params {\"goal\": [x, y]}");
    const double gx = params.at("goal").at(0).get<double>();
    const double gy = params.at("goal").at(1).get<double>();
    return [gx, gy](const kin::ChainState& s) { return -std::hypot(gx - s.px, gy - s.py); };
  }
  throw ConfigError("unknown reward function '" + id + "'");
}

struct PlanConfig {
  int horizon = 32;           // latent steps per candidate sequence
  int replan = 4;             // environment steps between plans
  int candidates = 128;       // sequences sampled per plan
  double logit_scale = 9.0;   // mixture-weight temperature during sampling
  double std_scale = 3.0;     // component-std temperature during sampling
  std::string reward_fn = "goal_distance";
  int step_limit = 1000;      // environment steps per episode

  void validate() const {
    if (horizon < 1) throw ConfigError("plan: horizon must be >= 1");
    if (replan < 1 || replan > horizon)
      throw ConfigError("plan: replan interval must satisfy 1 <= replan <= horizon");
    if (candidates < 1) throw ConfigError("plan: need at least one candidate");
    if (logit_scale <= 0.0 || std_scale <= 0.0)
      throw ConfigError("plan: temperature scales must be positive");
    if (step_limit < 1) throw ConfigError("plan: step_limit must be >= 1");
  }

  nlohmann::ordered_json to_json() const {
    return {{"horizon", horizon},
            {"replan", replan},
            {"candidates", candidates},
            {"logit_scale", logit_scale},
            {"std_scale", std_scale},
            {"reward_fn", reward_fn},
            {"step_limit", step_limit}};
  }
  static PlanConfig from_json(const nlohmann::json& j) {
    PlanConfig c;
    c.horizon = j.value("horizon", c.horizon);
    c.replan = j.value("replan", c.replan);
    c.candidates = j.value("candidates", c.candidates);
    c.logit_scale = j.value("logit_scale", c.logit_scale);
    c.std_scale = j.value("std_scale", c.std_scale);
    c.reward_fn = j.value("reward_fn", c.reward_fn);
    c.step_limit = j.value("step_limit", c.step_limit);
    return c;
  }
};

struct PlanOut {
  std::vector<std::vector<double>> latents;  // chosen candidate, horizon rows of d_z
  std::vector<double> scores;                // one score per candidate
  int best = 0;
};

// One planning step. The history must cover at least the encoder window; only
// the newest max_len states feed the encoder, and the context handed to the
// sequence model is trimmed so context plus horizon fit in one window.
inline PlanOut plan_step_detail(const vae::Vae& v, const prior::PriorModel& m,
                                const lowlevel::LowLevel& pol,
                                const std::vector<kin::ChainState>& history,
                                const RewardFn& reward, const PlanConfig& cfg, CounterRng& rng) {
  cfg.validate();
  if (v.cfg.d_z != m.cfg.d_z || v.cfg.d_z != pol.cfg.d_z)
    throw ConfigError("plan: encoder, sequence model, and policy disagree on d_z");
  const kin::ChainGeom geom = pol.wp.geom();
  if (v.cfg.frame_dim != kin::feature_dim(geom.n()))
    throw ConfigError("plan: encoder frame dim does not match the chain");
  if (static_cast<int>(history.size()) < v.min_encode_len())
    throw ConfigError("plan: history has " + std::to_string(history.size()) +
                      " states, need at least " + std::to_string(v.min_encode_len()));

  NoGradGuard ng;
  const size_t keep_states =
      std::min(history.size(), static_cast<size_t>(std::max(m.cfg.max_len, v.min_encode_len())));
  std::vector<kin::ChainState> recent(history.end() - static_cast<long>(keep_states),
                                      history.end());
  std::vector<std::vector<double>> zs = vae::encode_clip_means(v, kin::featurize(recent));
  const int ctx_keep =
      std::max(0, std::min(static_cast<int>(zs.size()), m.cfg.max_len - cfg.horizon - 1));
  std::vector<std::vector<double>> ctx(zs.end() - ctx_keep, zs.end());

  Tensor rolls = prior::sample_rollouts(m, ctx, cfg.candidates, cfg.horizon,
                                        prior::Temperature{cfg.logit_scale, cfg.std_scale}, rng);
  Tensor decoded = v.decode(rolls);  // (n, horizon, frame_dim)

  const int n = cfg.candidates, h = cfg.horizon, D = v.cfg.frame_dim, dz = v.cfg.d_z;
  const kin::Vec2 anchor{history.back().px, history.back().py};
  PlanOut out;
  out.scores.resize(static_cast<size_t>(n));
  std::vector<kin::Frame> frames(static_cast<size_t>(h), kin::Frame(static_cast<size_t>(D)));
  for (int c = 0; c < n; ++c) {
    for (int t = 0; t < h; ++t) {
      const double* row = decoded.data().data() + (static_cast<size_t>(c) * h + t) * D;
      std::copy(row, row + D, frames[static_cast<size_t>(t)].begin());
    }
    double best_r = -std::numeric_limits<double>::infinity();
    for (const kin::ChainState& s : kin::defeaturize(geom, frames, anchor))
      best_r = std::max(best_r, reward(s));
    check_finite("plan candidate score", best_r);
    out.scores[static_cast<size_t>(c)] = best_r;
    if (best_r > out.scores[static_cast<size_t>(out.best)]) out.best = c;
  }
  out.latents.assign(static_cast<size_t>(h), std::vector<double>(static_cast<size_t>(dz)));
  for (int t = 0; t < h; ++t) {
    const double* row = rolls.data().data() + (static_cast<size_t>(out.best) * h + t) * dz;
    std::copy(row, row + dz, out.latents[static_cast<size_t>(t)].begin());
  }
  return out;
}

inline PlanOut plan_step_detail(const vae::Vae& v, const prior::PriorModel& m,
                                const lowlevel::LowLevel& pol,
                                const std::vector<kin::ChainState>& history,
                                const RewardFn& reward, const PlanConfig& cfg, uint64_t seed) {
  CounterRng rng(seed);
  return plan_step_detail(v, m, pol, history, reward, cfg, rng);
}

// Convenience wrapper returning only the chosen latent sequence.
inline std::vector<std::vector<double>> plan_step(const vae::Vae& v, const prior::PriorModel& m,
                                                  const lowlevel::LowLevel& pol,
                                                  const std::vector<kin::ChainState>& history,
                                                  const RewardFn& reward, const PlanConfig& cfg,
                                                  uint64_t seed) {
  return plan_step_detail(v, m, pol, history, reward, cfg, seed).latents;
}

struct PlanRecord {
  int t = 0;           // environment step the plan was made at
  int best = 0;        // index of the chosen candidate
  double best_score = 0.0;
  std::vector<std::vector<double>> latents;  // the chosen sequence
};

struct MpcResult {
  bool success = false;
  int steps = 0;  // environment steps executed
  std::vector<kin::ChainState> states;  // start state first, one entry per step after
  std::vector<PlanRecord> plans;
};

// Closed-loop episode toward a fixed goal. Replans every `replan` steps and
// declares success as soon as the base comes within `radius` of the goal,
// including before the first step. The history is padded with the start state
// so planning works from step zero.
inline MpcResult run_mpc(const vae::Vae& v, const prior::PriorModel& m,
                         const lowlevel::LowLevel& pol, kin::Vec2 goal, double radius,
                         const PlanConfig& cfg, uint64_t seed,
                         const kin::ChainState* start = nullptr) {
  cfg.validate();
  const RewardFn reward = make_reward(cfg.reward_fn, {{"goal", {goal[0], goal[1]}}});

  kin::ChainState cur;
  if (start) {
    cur = *start;
  } else {
    cur.joints.assign(static_cast<size_t>(pol.wp.n_links), 0.0);
  }
  if (static_cast<int>(cur.joints.size()) != pol.wp.n_links)
    throw ConfigError("run_mpc: start state does not match the chain");

  CounterRng plan_rng = CounterRng(seed).split("plan");
  std::vector<kin::ChainState> history(static_cast<size_t>(v.min_encode_len()), cur);
  const size_t hist_cap = static_cast<size_t>(
      std::max(m.cfg.max_len, v.min_encode_len()));

  MpcResult res;
  res.states.push_back(cur);
  std::vector<std::vector<double>> plan;
  auto dist = [&](const kin::ChainState& s) {
    return std::hypot(goal[0] - s.px, goal[1] - s.py);
  };
  for (int t = 0; t < cfg.step_limit; ++t) {
    if (dist(cur) < radius) {
      res.success = true;
      break;
    }
    if (t % cfg.replan == 0) {
      PlanOut po = plan_step_detail(v, m, pol, history, reward, cfg, plan_rng);
      plan = std::move(po.latents);
      res.plans.push_back(PlanRecord{t, po.best, po.scores[static_cast<size_t>(po.best)], plan});
    }
    cur = world::step(pol.wp, cur,
                      pol.act(world::proprio(cur), plan[static_cast<size_t>(t % cfg.replan)]));
    history.push_back(cur);
    if (history.size() > hist_cap) history.erase(history.begin());
    res.states.push_back(cur);
    res.steps = t + 1;
  }
  if (!res.success && dist(cur) < radius) res.success = true;
  return res;
}

inline nlohmann::ordered_json mpc_to_json(const MpcResult& r) {
  nlohmann::ordered_json states = nlohmann::ordered_json::array();
  for (const kin::ChainState& s : r.states) {
    nlohmann::ordered_json row = {{"px", s.px}, {"py", s.py}, {"heading", s.heading},
                                  {"speed", s.speed}, {"joints", s.joints}};
    states.push_back(std::move(row));
  }
  nlohmann::ordered_json plans = nlohmann::ordered_json::array();
  for (const PlanRecord& p : r.plans)
    plans.push_back({{"t", p.t}, {"best", p.best}, {"best_score", p.best_score},
                     {"latents", p.latents}});
  return {{"success", r.success}, {"steps", r.steps}, {"states", std::move(states)},
          {"plans", std::move(plans)}};
}

}  // namespace lsp::planner
