#pragma once

// Sequence auto-encoder over demonstration frames. A temporal conv encoder
// maps (B,T,D) feature windows to a diagonal Gaussian per step in an
// 8-dim latent space; latents are squashed through tanh. The decoder mirrors
// the encoder and reconstructs feature frames, trained with the kinematic
// reconstruction score plus a beta-weighted KL toward the unit Gaussian.
//
// Latents at step t depend on frames within +-encode_halfwidth() steps, so
// a latent is a short local motion summary rather than a whole-clip code.

#include <string>
#include <vector>

#include "json.hpp"
#include "lsp/checkpoint.hpp"
#include "lsp/common.hpp"
#include "lsp/dataset.hpp"
#include "lsp/kinematics.hpp"
#include "lsp/nn.hpp"
#include "lsp/tensor.hpp"

namespace lsp::vae {

constexpr double kLatentClip = 1.0 - 1e-6;
constexpr double kLogStdMin = -7.0;
constexpr double kLogStdMax = 2.0;

struct VaeConfig {
  int frame_dim = 12;
  int d_z = 8;
  int channels = 64;
  int latent_channels = 32;
  int res_blocks = 2;
  int kernel = 3;
  double beta = 0.2;

  nlohmann::ordered_json to_json() const {
    return {{"frame_dim", frame_dim}, {"d_z", d_z},           {"channels", channels},
            {"latent_channels", latent_channels}, {"res_blocks", res_blocks},
            {"kernel", kernel},       {"beta", beta}};
  }
  static VaeConfig from_json(const nlohmann::json& j) {
    VaeConfig c;
    c.frame_dim = j.at("frame_dim").get<int>();
    c.d_z = j.at("d_z").get<int>();
    c.channels = j.at("channels").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.res_blocks = j.at("res_blocks").get<int>();
    c.kernel = j.at("kernel").get<int>();
    c.beta = j.at("beta").get<double>();
    return c;
  }
};

struct Vae {
  VaeConfig cfg;
  nn::Conv1d enc_in;   // D -> channels
  std::vector<nn::ConvResBlock> enc_res;
  nn::Conv1d enc_out;  // channels -> latent_channels
  nn::Linear head_mean, head_logstd;  // latent_channels -> d_z, per step
  nn::Linear dec_in;   // d_z -> latent_channels, per step
  nn::Conv1d dec_expand;  // latent_channels -> channels
  std::vector<nn::ConvResBlock> dec_res;
  nn::Conv1d dec_up;   // channels -> channels, transposed taps
  nn::Conv1d dec_out;  // channels -> D

  static Vae make(const VaeConfig& cfg, CounterRng& rng) {
    Vae v;
    v.cfg = cfg;
    CounterRng r = rng.split("vae-init");
    v.enc_in = nn::Conv1d::make(cfg.frame_dim, cfg.channels, cfg.kernel, r);
    for (int i = 0; i < cfg.res_blocks; ++i)
      v.enc_res.push_back(nn::ConvResBlock::make(cfg.channels, cfg.kernel, r));
    v.enc_out = nn::Conv1d::make(cfg.channels, cfg.latent_channels, cfg.kernel, r);
    v.head_mean = nn::Linear::make(cfg.latent_channels, cfg.d_z, r);
    v.head_logstd = nn::Linear::make(cfg.latent_channels, cfg.d_z, r);
    v.dec_in = nn::Linear::make(cfg.d_z, cfg.latent_channels, r);
    v.dec_expand = nn::Conv1d::make(cfg.latent_channels, cfg.channels, cfg.kernel, r);
    for (int i = 0; i < cfg.res_blocks; ++i)
      v.dec_res.push_back(nn::ConvResBlock::make(cfg.channels, cfg.kernel, r));
    v.dec_up = nn::Conv1d::make(cfg.channels, cfg.channels, cfg.kernel, r, true);
    v.dec_out = nn::Conv1d::make(cfg.channels, cfg.frame_dim, cfg.kernel, r);
    return v;
  }

  // Half-width of the encoder's receptive field: a latent at step t reads
  // frames t-k .. t+k. One conv per entry plus the in/out convs.
  int encode_halfwidth() const { return cfg.res_blocks + 2; }
  int min_encode_len() const { return 2 * encode_halfwidth() + 1; }

  // (B,T,D) frames -> per-step Gaussian (mean, log_std), each (B,T,d_z).
  std::pair<Tensor, Tensor> encode_dist(const Tensor& frames) const {
    if (frames.ndim() != 3 || frames.dim(2) != cfg.frame_dim)
      throw ShapeError("Vae::encode_dist: frames must be (B,T," + std::to_string(cfg.frame_dim) +
                       "), got " + shape_str(frames.shape()));
    if (frames.dim(1) < min_encode_len())
      throw ShapeError("Vae::encode_dist: sequence length " + std::to_string(frames.dim(1)) +
                       " shorter than the receptive field (need >= " +
                       std::to_string(min_encode_len()) + ")");
    Tensor h = gelu(enc_in.forward(frames));
    for (const auto& b : enc_res) h = b.forward(h);
    h = gelu(enc_out.forward(h));
    Tensor m = head_mean.forward(h);
    Tensor ls = clampt(head_logstd.forward(h), kLogStdMin, kLogStdMax);
    return {m, ls};
  }

  // (B,T,d_z) latents -> (B,T,D) decoded frames.
  Tensor decode(const Tensor& z) const {
    if (z.ndim() != 3 || z.dim(2) != cfg.d_z)
      throw ShapeError("Vae::decode: latents must be (B,T," + std::to_string(cfg.d_z) + ")");
    Tensor h = gelu(dec_expand.forward(dec_in.forward(z)));
    for (const auto& b : dec_res) h = b.forward(h);
    h = gelu(dec_up.forward(h));
    return dec_out.forward(h);
  }

  void reg(nn::NamedTensors& ps) {
    enc_in.reg(ps, "enc.in");
    for (size_t i = 0; i < enc_res.size(); ++i)
      enc_res[i].reg(ps, "enc.res" + std::to_string(i));
    enc_out.reg(ps, "enc.out");
    head_mean.reg(ps, "enc.mean");
    head_logstd.reg(ps, "enc.logstd");
    dec_in.reg(ps, "dec.in");
    dec_expand.reg(ps, "dec.expand");
    for (size_t i = 0; i < dec_res.size(); ++i)
      dec_res[i].reg(ps, "dec.res" + std::to_string(i));
    dec_up.reg(ps, "dec.up");
    dec_out.reg(ps, "dec.out");
  }
  nn::NamedTensors params() {
    nn::NamedTensors ps;
    reg(ps);
    return ps;
  }
};

// Squash pre-tanh values into the open latent cube.
inline Tensor squash_latent(const Tensor& pre) {
  return clampt(tanht(pre), -kLatentClip, kLatentClip);
}

// ---------------------------------------------------------------- losses

struct ElboOut {
  Tensor loss;          // recon + beta * kl (tracked)
  double recon = 0.0;   // mean per-frame reconstruction score
  double kl = 0.0;      // mean per-frame KL, summed over latent dims
  double reward = 0.0;  // mean imitation reward of the reconstruction
};

// Evidence lower bound over a window batch. Reference states must be the
// rebased originals of the windows; noise is drawn from the given stream so
// callers control reproducibility.
inline ElboOut elbo_loss(const Vae& v, const kin::ChainGeom& geom, const Tensor& frames,
                         const std::vector<std::vector<kin::ChainState>>& refs, CounterRng& rng,
                         double beta) {
  auto [m, ls] = v.encode_dist(frames);
  Tensor noise = Tensor::randn(m.shape(), rng);
  Tensor z = squash_latent(add(m, mul(expt(ls), noise)));
  Tensor decoded = v.decode(z);
  kin::ReconLoss rl = kin::recon_loss_graph(geom, decoded, refs);

  // KL(N(m, s) || N(0,1)) per dim: 0.5*(m^2 + s^2) - 0.5 - log s.
  Tensor var = expt(scale(ls, 2.0));
  Tensor kl_dims = sub(scale(add(square(m), var), 0.5), add_scalar(ls, 0.5));
  Tensor kl = mean(sum_last(kl_dims));

  ElboOut out;
  out.loss = add(rl.total, scale(kl, beta));
  out.recon = rl.total.item();
  out.reward = rl.reward;
  out.kl = kl.item();
  return out;
}

// ---------------------------------------------------------------- inference

// Per-step latent means of one clip, deterministically squashed.
inline std::vector<std::vector<double>> encode_clip_means(const Vae& v,
                                                          const std::vector<kin::Frame>& frames) {
  NoGradGuard ng;
  const int T = static_cast<int>(frames.size());
  const int D = v.cfg.frame_dim;
  std::vector<double> buf;
  buf.reserve(static_cast<size_t>(T) * D);
  for (const auto& f : frames) {
    if (static_cast<int>(f.size()) != D) throw ShapeError("encode_clip_means: frame dim mismatch");
    buf.insert(buf.end(), f.begin(), f.end());
  }
  Tensor z = squash_latent(v.encode_dist(Tensor::from({1, T, D}, std::move(buf))).first);
  std::vector<std::vector<double>> out(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t)
    out[static_cast<size_t>(t)]
        .assign(z.data().begin() + static_cast<size_t>(t) * v.cfg.d_z,
                z.data().begin() + static_cast<size_t>(t + 1) * v.cfg.d_z);
  return out;
}

// Reconstruction score of a window under the deterministic latent path.
inline double reconstruct_score(const Vae& v, const kin::ChainGeom& geom,
                                const std::vector<kin::Frame>& frames) {
  NoGradGuard ng;
  const int T = static_cast<int>(frames.size());
  const int D = v.cfg.frame_dim;
  std::vector<double> buf;
  for (const auto& f : frames) buf.insert(buf.end(), f.begin(), f.end());
  Tensor in = Tensor::from({1, T, D}, std::move(buf));
  Tensor z = squash_latent(v.encode_dist(in).first);
  Tensor decoded = v.decode(z);
  auto refs = kin::rebase(kin::defeaturize(geom, frames));
  return kin::recon_loss_graph(geom, decoded, {refs}).total.item();
}

// ---------------------------------------------------------------- training

struct VaeTrainConfig {
  int batch = 32;
  int window = 32;
  int steps = 5000;
  double lr = 3e-4;
  int warmup = 100;
  int holdout_every = 8;  // every n-th clip held out
  int log_every = 50;
  uint64_t seed = 1;
};

struct TrainRow {
  long step = 0;
  double loss = 0, recon = 0, kl = 0;
};

struct VaeTrainResult {
  Vae vae;
  std::vector<TrainRow> curve;
  double initial_loss = 0.0;   // mean over the first logging window
  double final_loss = 0.0;     // mean over the last logging window
  double holdout_recon = 0.0;  // deterministic recon score on held-out clips
};

namespace detail {

struct WindowRef {
  int clip = 0;
  int start = 0;
};

}  // namespace detail

// Held-out reconstruction: mean deterministic window score across clips.
inline double holdout_score(const Vae& v, const kin::ChainGeom& geom, const data::DemoDataset& ds,
                            int window) {
  double acc = 0;
  int count = 0;
  for (const auto& clip : ds.clips) {
    for (int start = 0; start + window <= static_cast<int>(clip.frames.size());
         start += window) {
      std::vector<kin::Frame> w(clip.frames.begin() + start, clip.frames.begin() + start + window);
      acc += reconstruct_score(v, geom, w);
      ++count;
    }
  }
  if (count == 0) throw ConfigError("holdout_score: no full windows in held-out clips");
  return acc / count;
}

inline VaeTrainResult train_vae(const data::DemoDataset& ds, const VaeConfig& cfg,
                                const VaeTrainConfig& tc) {
  if (ds.frame_dim != cfg.frame_dim)
    throw ConfigError("train_vae: dataset frame_dim does not match the model config");
  kin::ChainGeom geom = kin::ChainGeom::uniform(ds.n_links, ds.link_len);
  CounterRng root(tc.seed);
  CounterRng init_rng = root.split("init");

  VaeTrainResult res;
  res.vae = Vae::make(cfg, init_rng);

  auto [train, hold] = data::split_clips(ds, tc.holdout_every);
  if (train.clips.empty() || hold.clips.empty())
    throw ConfigError("train_vae: need both training and held-out clips");

  // Precompute per-clip states; window references index into them.
  std::vector<std::vector<kin::ChainState>> clip_states;
  for (const auto& c : train.clips) clip_states.push_back(kin::defeaturize(geom, c.frames));

  std::vector<detail::WindowRef> windows;
  for (size_t c = 0; c < train.clips.size(); ++c)
    for (int s = 0; s + tc.window <= static_cast<int>(train.clips[c].frames.size());
         s += tc.window)
      windows.push_back({static_cast<int>(c), s});
  if (windows.size() < static_cast<size_t>(tc.batch))
    throw ConfigError("train_vae: fewer windows than one batch");

  nn::NamedTensors ps = res.vae.params();
  Adam opt(ps.tensors(), AdamConfig{tc.lr, 0.9, 0.999, 1e-8, tc.warmup});
  CounterRng shuffle_rng = root.split("shuffle");
  CounterRng noise_rng = root.split("noise");

  const int D = cfg.frame_dim;
  size_t cursor = windows.size();  // trigger an initial shuffle
  double acc_loss = 0, acc_recon = 0, acc_kl = 0;
  int acc_n = 0;
  bool first_window_done = false;

  for (long step = 1; step <= tc.steps; ++step) {
    std::vector<double> buf;
    buf.reserve(static_cast<size_t>(tc.batch) * tc.window * D);
    std::vector<std::vector<kin::ChainState>> refs;
    refs.reserve(static_cast<size_t>(tc.batch));
    for (int b = 0; b < tc.batch; ++b) {
      if (cursor >= windows.size()) {
        for (size_t i = windows.size(); i > 1; --i)
          std::swap(windows[i - 1], windows[shuffle_rng.below(i)]);
        cursor = 0;
      }
      auto [c, s] = windows[cursor++];
      const auto& frames = train.clips[static_cast<size_t>(c)].frames;
      for (int t = 0; t < tc.window; ++t)
        buf.insert(buf.end(), frames[static_cast<size_t>(s + t)].begin(),
                   frames[static_cast<size_t>(s + t)].end());
      refs.push_back(kin::rebase(std::vector<kin::ChainState>(
          clip_states[static_cast<size_t>(c)].begin() + s,
          clip_states[static_cast<size_t>(c)].begin() + s + tc.window)));
    }
    Tensor frames = Tensor::from({tc.batch, tc.window, D}, std::move(buf));

    ElboOut out = elbo_loss(res.vae, geom, frames, refs, noise_rng, cfg.beta);
    opt.zero_grad();
    backward(out.loss);
    opt.step();

    acc_loss += out.loss.item();
    acc_recon += out.recon;
    acc_kl += out.kl;
    ++acc_n;
    if (step % tc.log_every == 0 || step == tc.steps) {
      TrainRow row{step, acc_loss / acc_n, acc_recon / acc_n, acc_kl / acc_n};
      res.curve.push_back(row);
      if (!first_window_done) {
        res.initial_loss = row.loss;
        first_window_done = true;
      }
      res.final_loss = row.loss;
      acc_loss = acc_recon = acc_kl = 0;
      acc_n = 0;
    }
  }

  res.holdout_recon = holdout_score(res.vae, geom, hold, tc.window);
  return res;
}

// ---------------------------------------------------------------- storage

inline void save_vae(const std::string& path, Vae& v, const nlohmann::json& extra_meta = {}) {
  nlohmann::ordered_json meta;
  meta["kind"] = "vae";
  meta["config"] = v.cfg.to_json();
  if (!extra_meta.is_null() && !extra_meta.empty())
    for (auto& [k, val] : extra_meta.items()) meta[k] = val;
  ckpt::save_checkpoint(path, v.params(), meta);
}

inline Vae load_vae(const std::string& path) {
  nlohmann::json meta;
  nn::NamedTensors stored = ckpt::load_checkpoint(path, &meta);
  if (meta.value("kind", "") != "vae")
    throw FormatError(path + ": checkpoint kind is not 'vae'");
  VaeConfig cfg = VaeConfig::from_json(meta.at("config"));
  CounterRng dummy(0);
  Vae v = Vae::make(cfg, dummy);
  nn::NamedTensors ps = v.params();
  nn::copy_into(stored, ps);
  return v;
}

}  // namespace lsp::vae
