#pragma once

// Offline evaluation metrics shared by tests and the command line tool: how
// well the low-level policy tracks latent sequences sampled from the sequence
// model, how likely encoded behaviour is under that model, and a random-walk
// trace for eyeballing coverage. Everything here is a pure function of the
// model parameters, the inputs, and the seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsp/common.hpp"
#include "lsp/kinematics.hpp"
#include "lsp/lowlevel.hpp"
#include "lsp/prior.hpp"
#include "lsp/vae.hpp"
#include "lsp/world.hpp"

namespace lsp::metrics {

struct ReenactReport {
  double mean_reward = 0.0;    // per-step pose-matching reward against the reference
  double mean_base_dev = 0.0;  // per-step base position error in meters
  int sequences = 0;
  long steps = 0;
};

// Samples fresh latent sequences from the model, decodes them into reference
// motions, and reenacts each one closed-loop with the policy starting from
// the reference's first pose. The latent feeding the policy leads the tracked
// frame by the policy's training lookahead, mirroring how encoded clips are
// reenacted.
inline ReenactReport prior_reenactment(const vae::Vae& v, const prior::PriorModel& m,
                                       const lowlevel::LowLevel& pol, int sequences, int horizon,
                                       uint64_t seed) {
  if (sequences < 1) throw ConfigError("prior_reenactment: need at least one sequence");
  if (horizon < 1) throw ConfigError("prior_reenactment: horizon must be >= 1");
  if (v.cfg.d_z != m.cfg.d_z || v.cfg.d_z != pol.cfg.d_z)
    throw ConfigError("prior_reenactment: models disagree on d_z");
  NoGradGuard ng;
  const kin::ChainGeom geom = pol.wp.geom();
  const int lead = pol.cfg.lead;
  const int L = horizon + lead + 1;  // latents per sequence so every step has a lead frame
  const int D = v.cfg.frame_dim, dz = v.cfg.d_z;

  CounterRng rng(seed);
  Tensor rolls = prior::sample_rollouts(m, {}, sequences, L, prior::Temperature{}, rng);
  Tensor dec = v.decode(rolls);  // (sequences, L, D)

  ReenactReport rep;
  rep.sequences = sequences;
  double acc_r = 0.0, acc_d = 0.0;
  std::vector<kin::Frame> frames(static_cast<size_t>(L), kin::Frame(static_cast<size_t>(D)));
  std::vector<double> z(static_cast<size_t>(dz));
  for (int s = 0; s < sequences; ++s) {
    for (int t = 0; t < L; ++t) {
      const double* row = dec.data().data() + (static_cast<size_t>(s) * L + t) * D;
      std::copy(row, row + D, frames[static_cast<size_t>(t)].begin());
    }
    std::vector<kin::ChainState> refs = kin::defeaturize(geom, frames);
    kin::ChainState sim = refs[0];
    for (int t = 1; t <= horizon; ++t) {
      const size_t zi = static_cast<size_t>(std::min(L - 1, (t - 1) + lead));
      const double* zrow = rolls.data().data() + (static_cast<size_t>(s) * L + zi) * dz;
      z.assign(zrow, zrow + dz);
      sim = world::step(pol.wp, sim, pol.act(world::proprio(sim), z));
      const kin::ChainState& ref = refs[static_cast<size_t>(t)];
      acc_r += kin::imitation_reward(geom, sim, ref);
      acc_d += std::hypot(sim.px - ref.px, sim.py - ref.py);
      ++rep.steps;
    }
  }
  rep.mean_reward = acc_r / static_cast<double>(rep.steps);
  rep.mean_base_dev = acc_d / static_cast<double>(rep.steps);
  return rep;
}

struct Coverage {
  double mean = 0.0;    // mean over sequences of the per-step log-likelihood
  double stddev = 0.0;  // population spread across sequences
  int sequences = 0;
};

// Encodes each frame sequence to its mean latent track and scores it with the
// sequence model's per-step log-likelihood.
inline Coverage coverage_logprob(const prior::PriorModel& m, const vae::Vae& v,
                                 const std::vector<std::vector<kin::Frame>>& clips) {
  if (clips.empty()) throw ConfigError("coverage_logprob: no sequences given");
  NoGradGuard ng;
  std::vector<double> per;
  per.reserve(clips.size());
  for (const auto& clip : clips) {
    if (static_cast<int>(clip.size()) < v.min_encode_len())
      throw ConfigError("coverage_logprob: sequence of length " + std::to_string(clip.size()) +
                        " is shorter than the encoder window");
    per.push_back(prior::sequence_logprob(m, vae::encode_clip_means(v, clip)));
  }
  Coverage c;
  c.sequences = static_cast<int>(per.size());
  for (double x : per) c.mean += x;
  c.mean /= static_cast<double>(per.size());
  for (double x : per) c.stddev += (x - c.mean) * (x - c.mean);
  c.stddev = std::sqrt(c.stddev / static_cast<double>(per.size()));
  return c;
}

// Latent source for rollout collection: observation in, latent out.
using LatentFn = std::function<std::vector<double>(const std::vector<double>& obs)>;

// Drives the task environment with latents from `next_z` through the
// low-level policy and featurizes the visited states, one sequence per
// episode. Episodes end early on task termination.
inline std::vector<std::vector<kin::Frame>> controller_rollout_frames(
    world::TaskKind task, const lowlevel::LowLevel& pol, const LatentFn& next_z, int episodes,
    int steps_per_episode, uint64_t seed) {
  if (episodes < 1) throw ConfigError("controller_rollout_frames: need at least one episode");
  if (steps_per_episode < 2)
    throw ConfigError("controller_rollout_frames: need at least two steps per episode");
  world::TaskEnv env(task, pol.wp);
  CounterRng ep_rng = CounterRng(seed).split("episode");
  std::vector<std::vector<kin::Frame>> out;
  out.reserve(static_cast<size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    std::vector<double> obs = env.reset(ep_rng.next_u64());
    std::vector<kin::ChainState> states{env.state()};
    for (int t = 0; t < steps_per_episode; ++t) {
      world::StepResult sr = env.step(pol.act(world::proprio(env.state()), next_z(obs)));
      states.push_back(env.state());
      obs = std::move(sr.obs);
      if (sr.done || sr.truncated) break;
    }
    out.push_back(kin::featurize(states));
  }
  return out;
}

// Uniform random latents through the policy; returns base positions grouped
// by episode for plotting. The total number of recorded positions equals
// `steps`; a fresh episode starts whenever the task ends one.
inline nlohmann::ordered_json random_walk_dump(world::TaskKind task,
                                               const lowlevel::LowLevel& pol, int steps,
                                               uint64_t seed) {
  if (steps < 1) throw ConfigError("random_walk_dump: steps must be >= 1");
  world::TaskEnv env(task, pol.wp);
  CounterRng root(seed);
  CounterRng ep_rng = root.split("episode");
  CounterRng z_rng = root.split("latent");
  std::vector<double> z(static_cast<size_t>(pol.cfg.d_z));
  nlohmann::ordered_json episodes = nlohmann::ordered_json::array();
  nlohmann::ordered_json cur = nlohmann::ordered_json::array();
  env.reset(ep_rng.next_u64());
  for (int i = 0; i < steps; ++i) {
    for (auto& zi : z) zi = z_rng.uniform(-1.0, 1.0);
    world::StepResult sr = env.step(pol.act(world::proprio(env.state()), z));
    cur.push_back({env.state().px, env.state().py});
    if (sr.done || sr.truncated) {
      episodes.push_back(std::move(cur));
      cur = nlohmann::ordered_json::array();
      env.reset(ep_rng.next_u64());
    }
  }
  if (!cur.empty()) episodes.push_back(std::move(cur));
  return {{"task", world::task_name(task)}, {"steps", steps}, {"episodes", std::move(episodes)}};
}

}  // namespace lsp::metrics
