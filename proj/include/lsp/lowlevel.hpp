#pragma once

// Latent-conditioned low-level controller trained by behavior cloning.
// Frozen mode conditions on deterministic encodings from a trained frame
// auto-encoder with a fixed lookahead; joint mode learns its own encoder
// over short observation futures alongside the policy.

#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lsp/checkpoint.hpp"
#include "lsp/common.hpp"
#include "lsp/dataset.hpp"
#include "lsp/kinematics.hpp"
#include "lsp/nn.hpp"
#include "lsp/tensor.hpp"
#include "lsp/vae.hpp"
#include "lsp/world.hpp"

namespace lsp::lowlevel {

struct LowLevelConfig {
  int d_z = 8;
  int hidden = 128;
  int depth = 4;  // hidden layers, each fed the raw input alongside the previous layer
  int lead = 4;   // conditioning lookahead: the latent of frame t+lead drives the action at t

  nlohmann::ordered_json to_json() const {
    return {{"d_z", d_z}, {"hidden", hidden}, {"depth", depth}, {"lead", lead}};
  }
  static LowLevelConfig from_json(const nlohmann::json& j) {
    LowLevelConfig c;
    c.d_z = j.value("d_z", c.d_z);
    c.hidden = j.value("hidden", c.hidden);
    c.depth = j.value("depth", c.depth);
    c.lead = j.value("lead", c.lead);
    return c;
  }
};

// Deterministic policy: proprio features plus one latent in, bounded action
// means out. The output layer is squashed and rescaled so every action is
// inside the world's control limits by construction.
struct LowLevel {
  LowLevelConfig cfg;
  world::WorldParams wp;
  nn::Mlp net;

  static LowLevel make(const LowLevelConfig& cfg, const world::WorldParams& wp, CounterRng& rng) {
    LowLevel p;
    p.cfg = cfg;
    p.wp = wp;
    CounterRng r = rng.split("lowlevel-init");
    p.net = nn::Mlp::make(p.input_dim(), std::vector<int>(static_cast<size_t>(cfg.depth), cfg.hidden),
                          p.action_dim(), r, /*input_skip=*/true);
    return p;
  }

  int proprio_dim() const { return kin::feature_dim(wp.n_links); }
  int input_dim() const { return proprio_dim() + cfg.d_z; }
  int action_dim() const { return world::Action::dim(wp.n_links); }

  std::vector<double> action_bounds() const {
    std::vector<double> b{wp.a_max, wp.omega_max};
    b.insert(b.end(), static_cast<size_t>(wp.n_links), wp.delta_max);
    return b;
  }

  // (B, proprio+d_z) -> (B, action_dim), componentwise within the limits.
  Tensor forward_actions(const Tensor& x) const {
    if (x.ndim() != 2 || x.dim(1) != input_dim())
      throw ShapeError("LowLevel::forward_actions: expected (B, proprio+d_z)");
    return mul(tanht(net.forward(x)), Tensor::from({action_dim()}, action_bounds()));
  }

  world::Action act(const kin::Frame& proprio, const std::vector<double>& z) const {
    if (static_cast<int>(proprio.size()) != proprio_dim() ||
        static_cast<int>(z.size()) != cfg.d_z)
      throw ShapeError("LowLevel::act: input dims do not match the policy");
    NoGradGuard ng;
    std::vector<double> row(proprio);
    row.insert(row.end(), z.begin(), z.end());
    Tensor a = forward_actions(Tensor::from({1, input_dim()}, std::move(row)));
    return world::Action::from_flat(a.data(), wp.n_links);
  }

  void reg(nn::NamedTensors& ps) { net.reg(ps, "policy"); }
  nn::NamedTensors params() {
    nn::NamedTensors ps;
    reg(ps);
    return ps;
  }
};

// Joint-mode encoder: mean and log-std of the conditioning latent computed
// from the concatenated next few proprio frames.
struct JointEncoder {
  static constexpr int kFutureFrames = 5;

  int d_z = 0;
  int obs_dim = 0;
  nn::Mlp net;

  static JointEncoder make(int proprio_dim, int d_z, CounterRng& rng) {
    JointEncoder e;
    e.d_z = d_z;
    e.obs_dim = kFutureFrames * proprio_dim;
    CounterRng r = rng.split("joint-enc-init");
    e.net = nn::Mlp::make(e.obs_dim, {128, 128}, 2 * d_z, r);
    return e;
  }

  // (B, obs_dim) -> mean (B, d_z), clamped log-std (B, d_z).
  std::pair<Tensor, Tensor> forward(const Tensor& obs) const {
    if (obs.ndim() != 2 || obs.dim(1) != obs_dim)
      throw ShapeError("JointEncoder::forward: expected (B, 5*proprio)");
    Tensor h = net.forward(obs);
    return {slice(h, 1, 0, d_z),
            clampt(slice(h, 1, d_z, d_z), vae::kLogStdMin, vae::kLogStdMax)};
  }

  void reg(nn::NamedTensors& ps) { net.reg(ps, "encoder"); }
};

// Mean over the batch of the squared action error summed over components,
// so an all-zero policy scores the mean squared action norm of the batch.
inline Tensor bc_mse(const Tensor& pred, const Tensor& target) {
  return mean(sum_last(square(sub(pred, target))));
}

struct JointLossOut {
  Tensor loss;
  double mse = 0.0;
  double kl = 0.0;
};

// Reparameterized joint objective: squash a sampled latent, run the policy,
// and regularize the encoder towards the unit gaussian.
inline JointLossOut joint_loss(const LowLevel& p, const JointEncoder& enc, const Tensor& obs,
                               const Tensor& proprio, const Tensor& targets, const Tensor& noise,
                               double kl_coeff) {
  auto [mu, ls] = enc.forward(obs);
  Tensor z = tanht(add(mu, mul(expt(ls), noise)));
  Tensor pred = p.forward_actions(concat({proprio, z}, 1));
  Tensor mse = bc_mse(pred, targets);
  Tensor var = expt(scale(ls, 2.0));
  Tensor kl = mean(sum_last(sub(scale(add(square(mu), var), 0.5), add_scalar(ls, 0.5))));
  JointLossOut out;
  out.loss = add(mse, scale(kl, kl_coeff));
  out.mse = mse.item();
  out.kl = kl.item();
  return out;
}

// ---------------------------------------------------------------- training

enum class TrainMode { FrozenVae, Joint };

inline std::string mode_name(TrainMode m) {
  return m == TrainMode::FrozenVae ? "frozen" : "joint";
}

struct LowLevelTrainConfig {
  TrainMode mode = TrainMode::FrozenVae;
  int batch = 256;
  long steps = 20000;
  double lr = 3e-4;
  long warmup = 100;
  double kl_coeff = 1e-3;
  int holdout_every = 8;
  long log_every = 100;
  uint64_t seed = 1;
};

struct LowLevelTrainRow {
  long step = 0;
  double loss = 0.0;
  double mse = 0.0;
  double kl = 0.0;
};

struct LowLevelTrainResult {
  LowLevel policy;
  std::optional<JointEncoder> encoder;
  std::vector<LowLevelTrainRow> curve;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double holdout_mse = 0.0;
};

namespace detail {

// One supervised pair: the policy input row (or encoder obs + proprio in
// joint mode) and the expert action, flattened for cheap batching.
struct PairTable {
  int in_dim = 0;    // frozen: proprio+d_z; joint: 5*proprio
  int extra_dim = 0; // joint: proprio fed to the policy; frozen: 0
  int act_dim = 0;
  std::vector<double> inputs;
  std::vector<double> extras;
  std::vector<double> targets;

  size_t rows() const { return targets.size() / static_cast<size_t>(act_dim); }
  void push(const std::vector<double>& in, const std::vector<double>& extra,
            const std::vector<double>& act) {
    inputs.insert(inputs.end(), in.begin(), in.end());
    extras.insert(extras.end(), extra.begin(), extra.end());
    targets.insert(targets.end(), act.begin(), act.end());
  }
};

inline PairTable build_pairs(const data::DemoDataset& ds, const vae::Vae* v,
                             const LowLevelConfig& cfg, TrainMode mode, bool warn) {
  PairTable tab;
  const int P = kin::feature_dim(ds.n_links);
  tab.act_dim = world::Action::dim(ds.n_links);
  tab.in_dim = mode == TrainMode::FrozenVae ? P + cfg.d_z : JointEncoder::kFutureFrames * P;
  tab.extra_dim = mode == TrainMode::FrozenVae ? 0 : P;
  const int min_len = mode == TrainMode::FrozenVae
                          ? std::max(v->min_encode_len(), cfg.lead + 2)
                          : JointEncoder::kFutureFrames + 1;
  int skipped = 0;
  for (const auto& clip : ds.clips) {
    const int L = static_cast<int>(clip.frames.size());
    if (L < min_len) {
      ++skipped;
      continue;
    }
    if (mode == TrainMode::FrozenVae) {
      auto latents = vae::encode_clip_means(*v, clip.frames);
      for (int t = 0; t + cfg.lead <= L - 1 && t < static_cast<int>(clip.actions.size()); ++t) {
        std::vector<double> row(clip.frames[static_cast<size_t>(t)]);
        const auto& z = latents[static_cast<size_t>(t + cfg.lead)];
        row.insert(row.end(), z.begin(), z.end());
        tab.push(row, {}, clip.actions[static_cast<size_t>(t)].flat());
      }
    } else {
      for (int t = 0; t + JointEncoder::kFutureFrames <= L - 1 &&
                      t < static_cast<int>(clip.actions.size());
           ++t) {
        std::vector<double> obs;
        obs.reserve(static_cast<size_t>(tab.in_dim));
        for (int f = 1; f <= JointEncoder::kFutureFrames; ++f)
          obs.insert(obs.end(), clip.frames[static_cast<size_t>(t + f)].begin(),
                     clip.frames[static_cast<size_t>(t + f)].end());
        tab.push(obs, clip.frames[static_cast<size_t>(t)],
                 clip.actions[static_cast<size_t>(t)].flat());
      }
    }
  }
  if (skipped > 0 && warn)
    std::fprintf(stderr, "warning: %d clip(s) shorter than %d frames skipped\n", skipped,
                 min_len);
  return tab;
}

inline Tensor gather_rows(const std::vector<double>& flat, int dim,
                          const std::vector<size_t>& idx) {
  std::vector<double> buf;
  buf.reserve(idx.size() * static_cast<size_t>(dim));
  for (size_t i : idx)
    buf.insert(buf.end(), flat.begin() + static_cast<long>(i) * dim,
               flat.begin() + static_cast<long>(i + 1) * dim);
  return Tensor::from({static_cast<int>(idx.size()), dim}, std::move(buf));
}

// Deterministic held-out action error: frozen mode reuses the precomputed
// latent rows; joint mode conditions on the squashed encoder mean.
inline double holdout_mse(const LowLevel& p, const JointEncoder* enc, const PairTable& tab,
                          int chunk) {
  NoGradGuard ng;
  double acc = 0.0;
  size_t n = tab.rows();
  for (size_t at = 0; at < n; at += static_cast<size_t>(chunk)) {
    std::vector<size_t> idx;
    for (size_t i = at; i < std::min(n, at + static_cast<size_t>(chunk)); ++i) idx.push_back(i);
    Tensor in = gather_rows(tab.inputs, tab.in_dim, idx);
    Tensor pred;
    if (enc == nullptr) {
      pred = p.forward_actions(in);
    } else {
      Tensor mu = enc->forward(in).first;
      pred = p.forward_actions(concat({gather_rows(tab.extras, tab.extra_dim, idx), tanht(mu)}, 1));
    }
    acc += bc_mse(pred, gather_rows(tab.targets, tab.act_dim, idx)).item() * idx.size();
  }
  return acc / static_cast<double>(n);
}

}  // namespace detail

inline LowLevelTrainResult train_lowlevel(const data::DemoDataset& ds, const vae::Vae* v,
                                          const LowLevelConfig& cfg,
                                          const LowLevelTrainConfig& tc) {
  if (tc.mode == TrainMode::FrozenVae) {
    if (v == nullptr) throw ConfigError("train_lowlevel: frozen mode needs a trained auto-encoder");
    if (v->cfg.d_z != cfg.d_z || v->cfg.frame_dim != kin::feature_dim(ds.n_links))
      throw ConfigError("train_lowlevel: auto-encoder dims do not match the policy config");
  }
  world::WorldParams wp;
  wp.n_links = ds.n_links;
  wp.link_len = ds.link_len;

  CounterRng root(tc.seed);
  CounterRng init_rng = root.split("init");
  LowLevelTrainResult res;
  res.policy = LowLevel::make(cfg, wp, init_rng);
  if (tc.mode == TrainMode::Joint)
    res.encoder = JointEncoder::make(res.policy.proprio_dim(), cfg.d_z, init_rng);

  auto [train, hold] = data::split_clips(ds, tc.holdout_every);
  if (train.clips.empty() || hold.clips.empty())
    throw ConfigError("train_lowlevel: need both training and held-out clips");
  detail::PairTable pairs = detail::build_pairs(train, v, cfg, tc.mode, true);
  detail::PairTable hold_pairs = detail::build_pairs(hold, v, cfg, tc.mode, false);
  if (pairs.rows() < static_cast<size_t>(tc.batch))
    throw ConfigError("train_lowlevel: fewer supervised pairs than one batch");
  if (hold_pairs.rows() == 0) throw ConfigError("train_lowlevel: no held-out pairs");

  nn::NamedTensors ps = res.policy.params();
  if (res.encoder) res.encoder->reg(ps);
  Adam opt(ps.tensors(), AdamConfig{tc.lr, 0.9, 0.999, 1e-8, static_cast<int>(tc.warmup)});
  CounterRng shuffle_rng = root.split("shuffle");
  CounterRng noise_rng = root.split("noise");

  std::vector<size_t> order(pairs.rows());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // trigger an initial shuffle

  double acc_loss = 0, acc_mse = 0, acc_kl = 0;
  int acc_n = 0;
  bool first_window_done = false;
  for (long step = 1; step <= tc.steps; ++step) {
    std::vector<size_t> idx;
    idx.reserve(static_cast<size_t>(tc.batch));
    for (int b = 0; b < tc.batch; ++b) {
      if (cursor >= order.size()) {
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    Tensor in = detail::gather_rows(pairs.inputs, pairs.in_dim, idx);
    Tensor targets = detail::gather_rows(pairs.targets, pairs.act_dim, idx);

    double loss_val, mse_val, kl_val;
    opt.zero_grad();
    if (tc.mode == TrainMode::FrozenVae) {
      Tensor loss = bc_mse(res.policy.forward_actions(in), targets);
      backward(loss);
      loss_val = mse_val = loss.item();
      kl_val = 0.0;
    } else {
      Tensor proprio = detail::gather_rows(pairs.extras, pairs.extra_dim, idx);
      Tensor noise = Tensor::randn({tc.batch, cfg.d_z}, noise_rng);
      JointLossOut out =
          joint_loss(res.policy, *res.encoder, in, proprio, targets, noise, tc.kl_coeff);
      backward(out.loss);
      loss_val = out.loss.item();
      mse_val = out.mse;
      kl_val = out.kl;
    }
    opt.step();

    acc_loss += loss_val;
    acc_mse += mse_val;
    acc_kl += kl_val;
    ++acc_n;
    if (step % tc.log_every == 0 || step == tc.steps) {
      LowLevelTrainRow row{step, acc_loss / acc_n, acc_mse / acc_n, acc_kl / acc_n};
      res.curve.push_back(row);
      if (!first_window_done) {
        res.initial_loss = row.loss;
        first_window_done = true;
      }
      res.final_loss = row.loss;
      acc_loss = acc_mse = acc_kl = 0;
      acc_n = 0;
    }
  }

  res.holdout_mse = detail::holdout_mse(res.policy, res.encoder ? &*res.encoder : nullptr,
                                        hold_pairs, tc.batch);
  return res;
}

// ---------------------------------------------------------------- reenactment

struct ReenactStats {
  double mean_reward = 0.0;    // per-step pose-matching reward against the reference
  double mean_base_dev = 0.0;  // per-step base position error in meters
  int windows = 0;
  long steps = 0;
};

namespace detail {

// Rolls the world forward alongside reference windows; the action source sees
// the clip index, the reference frame index, and the simulated state.
using ActionFn =
    std::function<world::Action(int clip, int ref_t, const kin::ChainState& sim)>;

inline ReenactStats reenact_windows(const data::DemoDataset& ds, const world::WorldParams& wp,
                                    int horizon, int lead, const ActionFn& action) {
  kin::ChainGeom geom = wp.geom();
  ReenactStats st;
  double acc_r = 0.0, acc_d = 0.0;
  for (size_t ci = 0; ci < ds.clips.size(); ++ci) {
    const auto& clip = ds.clips[ci];
    const int L = static_cast<int>(clip.frames.size());
    if (L < horizon + lead + 1) continue;
    auto refs = kin::defeaturize(geom, clip.frames);
    for (int w0 = 0; w0 + horizon + lead <= L - 1; w0 += horizon) {
      kin::ChainState sim = refs[static_cast<size_t>(w0)];
      for (int t = 1; t <= horizon; ++t) {
        world::Action a = action(static_cast<int>(ci), w0 + t - 1, sim);
        sim = world::step(wp, sim, a);
        const kin::ChainState& ref = refs[static_cast<size_t>(w0 + t)];
        acc_r += kin::imitation_reward(geom, sim, ref);
        double dx = sim.px - ref.px, dy = sim.py - ref.py;
        acc_d += std::sqrt(dx * dx + dy * dy);
      }
      ++st.windows;
      st.steps += horizon;
    }
  }
  if (st.steps == 0) throw ConfigError("reenact: no window fits the clips");
  st.mean_reward = acc_r / static_cast<double>(st.steps);
  st.mean_base_dev = acc_d / static_cast<double>(st.steps);
  return st;
}

}  // namespace detail

// Drives the policy with the deterministic latent track of each clip and
// measures how closely the closed-loop motion retraces it.
inline ReenactStats reenact_encoded(const LowLevel& p, const vae::Vae& v,
                                    const data::DemoDataset& ds, int horizon = 200) {
  std::vector<std::vector<std::vector<double>>> latents;
  for (const auto& clip : ds.clips)
    latents.push_back(static_cast<int>(clip.frames.size()) >= v.min_encode_len()
                          ? vae::encode_clip_means(v, clip.frames)
                          : std::vector<std::vector<double>>{});
  const int lead = p.cfg.lead;
  return detail::reenact_windows(
      ds, p.wp, horizon, lead, [&](int clip, int ref_t, const kin::ChainState& sim) {
        const auto& zs = latents[static_cast<size_t>(clip)];
        if (zs.empty()) throw ConfigError("reenact_encoded: clip too short to encode");
        size_t zi = std::min(zs.size() - 1, static_cast<size_t>(ref_t + lead));
        return p.act(world::proprio(sim), zs[zi]);
      });
}

// Matching baseline that ignores the references and samples uniform actions
// within the control limits.
inline ReenactStats reenact_random(const data::DemoDataset& ds, const world::WorldParams& wp,
                                   int horizon, int lead, CounterRng& rng) {
  return detail::reenact_windows(ds, wp, horizon, lead,
                                 [&](int, int, const kin::ChainState&) {
                                   world::Action a = world::Action::zero(wp.n_links);
                                   a.accel = rng.uniform(-wp.a_max, wp.a_max);
                                   a.turn = rng.uniform(-wp.omega_max, wp.omega_max);
                                   for (auto& d : a.joint_deltas)
                                     d = rng.uniform(-wp.delta_max, wp.delta_max);
                                   return a;
                                 });
}

// ---------------------------------------------------------------- storage

inline void save_lowlevel(const std::string& path, LowLevel& p,
                          const nlohmann::json& extra_meta = {}) {
  nlohmann::ordered_json meta;
  meta["kind"] = "lowlevel";
  meta["config"] = p.cfg.to_json();
  meta["world"] = p.wp.to_json();
  if (!extra_meta.is_null() && !extra_meta.empty())
    for (auto& [k, val] : extra_meta.items()) meta[k] = val;
  nn::NamedTensors ps = p.params();
  ckpt::save_checkpoint(path, ps, meta);
}

inline LowLevel load_lowlevel(const std::string& path) {
  nlohmann::json meta;
  nn::NamedTensors stored = ckpt::load_checkpoint(path, &meta);
  if (meta.value("kind", "") != "lowlevel")
    throw FormatError(path + ": checkpoint kind is not 'lowlevel'");
  LowLevelConfig cfg = LowLevelConfig::from_json(meta.at("config"));
  world::WorldParams wp = world::WorldParams::from_json(meta.at("world"));
  CounterRng dummy(0);
  LowLevel p = LowLevel::make(cfg, wp, dummy);
  nn::NamedTensors ps = p.params();
  nn::copy_into(stored, ps);
  return p;
}

}  // namespace lsp::lowlevel
