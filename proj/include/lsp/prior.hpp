#pragma once

// Autoregressive model over latent sequences: a causal single-head
// transformer whose head emits a Gaussian-mixture density for the next
// latent. Inputs are shifted right, with a learned start embedding at
// position 0, so output t is a density over element t given elements < t.
//
// RolloutSession extends a sequence one latent at a time with per-block
// key/value caches; its outputs are bitwise identical to the full pass.
// A non-parametric alternative (DatasetPrior) serves windows of encoded
// demonstration clips instead of model samples.

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lsp/checkpoint.hpp"
#include "lsp/common.hpp"
#include "lsp/dataset.hpp"
#include "lsp/nn.hpp"
#include "lsp/tensor.hpp"
#include "lsp/vae.hpp"

namespace lsp::prior {

constexpr double kSampleClip = 1.0 - 1e-6;
constexpr double kLogStdMin = -7.0;
constexpr double kLogStdMax = 2.0;
constexpr double kLogTwoPi = 1.8378770664093453;

// Squash used for encoder-derived latents fed to or predicted by the model.
inline double squash(double x) {
  double t = std::tanh(x);
  return std::min(kSampleClip, std::max(-kSampleClip, t));
}

// ---------------------------------------------------------------- mixture

// Gaussian mixture with diagonal components for one sequence position.
struct MixtureDensity {
  int n_comp = 0;
  int d_z = 0;
  std::vector<double> logits;    // n_comp
  std::vector<double> means;     // n_comp * d_z, component-major
  std::vector<double> log_stds;  // n_comp * d_z, clamped
};

inline double mdn_log_prob(const MixtureDensity& md, const std::vector<double>& z) {
  if (static_cast<int>(z.size()) != md.d_z) throw ShapeError("mdn_log_prob: latent dim mismatch");
  const int K = md.n_comp, D = md.d_z;
  double lmax = md.logits[0];
  for (int k = 1; k < K; ++k) lmax = std::max(lmax, md.logits[k]);
  double lse = 0.0;
  for (int k = 0; k < K; ++k) lse += std::exp(md.logits[k] - lmax);
  const double log_norm = lmax + std::log(lse);

  double best = -1e300;
  std::vector<double> terms(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    double acc = md.logits[k] - log_norm;
    for (int d = 0; d < D; ++d) {
      double ls = md.log_stds[static_cast<size_t>(k) * D + d];
      double u = (z[static_cast<size_t>(d)] - md.means[static_cast<size_t>(k) * D + d]) /
                 std::exp(ls);
      acc += -0.5 * u * u - ls - 0.5 * kLogTwoPi;
    }
    terms[static_cast<size_t>(k)] = acc;
    best = std::max(best, acc);
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - best);
  return best + std::log(s);
}

// Temperature-scaled sample: component from softmax(logit_scale * logits),
// then a normal draw with std_scale-widened stds, clipped into the open cube.
inline std::vector<double> mdn_sample(const MixtureDensity& md, double logit_scale,
                                      double std_scale, CounterRng& rng) {
  if (!(logit_scale > 0.0) || !(std_scale > 0.0))
    throw ConfigError("mdn_sample: temperature scales must be positive");
  const int K = md.n_comp, D = md.d_z;
  double lmax = md.logits[0] * logit_scale;
  for (int k = 1; k < K; ++k) lmax = std::max(lmax, md.logits[k] * logit_scale);
  double norm = 0.0;
  std::vector<double> w(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    w[static_cast<size_t>(k)] = std::exp(md.logits[k] * logit_scale - lmax);
    norm += w[static_cast<size_t>(k)];
  }
  double u = rng.uniform() * norm;
  int pick = K - 1;
  double acc = 0.0;
  for (int k = 0; k < K; ++k) {
    acc += w[static_cast<size_t>(k)];
    if (u < acc) {
      pick = k;
      break;
    }
  }
  std::vector<double> z(static_cast<size_t>(D));
  for (int d = 0; d < D; ++d) {
    double mu = md.means[static_cast<size_t>(pick) * D + d];
    double sd = std::exp(md.log_stds[static_cast<size_t>(pick) * D + d]) * std_scale;
    double v = mu + sd * rng.normal();
    z[static_cast<size_t>(d)] = std::min(kSampleClip, std::max(-kSampleClip, v));
  }
  return z;
}

// Monte-Carlo entropy estimate: mean of -log p over the model's own samples.
inline double mdn_entropy_estimate(const MixtureDensity& md, int n, CounterRng& rng) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc -= mdn_log_prob(md, mdn_sample(md, 1.0, 1.0, rng));
  return acc / n;
}

// ---------------------------------------------------------------- model

struct PriorConfig {
  int d_z = 8;
  int d_model = 64;
  int blocks = 2;
  int hidden = 128;
  int mixtures = 8;
  int max_len = 64;

  nlohmann::ordered_json to_json() const {
    return {{"d_z", d_z},         {"d_model", d_model},   {"blocks", blocks},
            {"hidden", hidden},   {"mixtures", mixtures}, {"max_len", max_len}};
  }
  static PriorConfig from_json(const nlohmann::json& j) {
    PriorConfig c;
    c.d_z = j.at("d_z").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.blocks = j.at("blocks").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.mixtures = j.at("mixtures").get<int>();
    c.max_len = j.at("max_len").get<int>();
    return c;
  }
};

struct PriorModel {
  PriorConfig cfg;
  Tensor start;  // (1, d_model) learned start-of-sequence embedding
  Tensor pos;    // (max_len, d_model) learned position embeddings
  nn::Linear embed;
  std::vector<nn::TransformerBlock> blocks;
  nn::Linear head;

  int head_dim() const { return cfg.mixtures * (1 + 2 * cfg.d_z); }

  static PriorModel make(const PriorConfig& cfg, CounterRng& rng) {
    PriorModel m;
    m.cfg = cfg;
    CounterRng r = rng.split("prior-init");
    m.start = nn::param({1, cfg.d_model}, r, 0.02);
    m.pos = nn::param({cfg.max_len, cfg.d_model}, r, 0.02);
    m.embed = nn::Linear::make(cfg.d_z, cfg.d_model, r);
    for (int i = 0; i < cfg.blocks; ++i)
      m.blocks.push_back(nn::TransformerBlock::make(cfg.d_model, cfg.hidden, r));
    m.head = nn::Linear::make(cfg.d_model, m.head_dim(), r);
    return m;
  }

  // Input embeddings for a context (B,T,d_z). Teacher forcing shifts the
  // context right so its last element is only a target; rollout mode feeds
  // every element and the output past the end is the next-step density.
  Tensor build_inputs(const Tensor& ctx, bool rollout) const {
    const int B = ctx.dim(0), T = ctx.dim(1);
    const int L = rollout ? T + 1 : T;
    if (L > cfg.max_len)
      throw ShapeError("prior: context length " + std::to_string(T) +
                       " exceeds the window (max " + std::to_string(cfg.max_len) + ")");
    Tensor st = reshape(matmul(Tensor::filled({B, 1}, 1.0), start), {B, 1, cfg.d_model});
    Tensor in = st;
    const int used = rollout ? T : T - 1;
    if (used > 0) in = concat({st, embed.forward(slice(ctx, 1, 0, used))}, 1);
    return add(in, slice(pos, 0, 0, L));
  }

  // Teacher-forced head outputs: ctx (B,T,d_z) -> (B,T,head_dim), where
  // output t is the density of ctx[t] given ctx[<t].
  Tensor forward_raw(const Tensor& ctx) const {
    if (ctx.ndim() != 3 || ctx.dim(2) != cfg.d_z)
      throw ShapeError("prior: context must be (B,T," + std::to_string(cfg.d_z) + ")");
    if (ctx.dim(1) < 1) throw ShapeError("prior: empty context");
    Tensor h = build_inputs(ctx, false);
    Tensor mask = nn::causal_mask(ctx.dim(1));
    for (const auto& b : blocks) h = b.forward(h, mask);
    return head.forward(h);
  }

  void reg(nn::NamedTensors& ps) {
    ps.add("start", start);
    ps.add("pos", pos);
    embed.reg(ps, "embed");
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].reg(ps, "blk" + std::to_string(i));
    head.reg(ps, "head");
  }
  nn::NamedTensors params() {
    nn::NamedTensors ps;
    reg(ps);
    return ps;
  }
};

// Unpacks one position of head output, clamping log-stds like the loss does.
inline MixtureDensity unpack_density(const double* p, int K, int d_z) {
  MixtureDensity md;
  md.n_comp = K;
  md.d_z = d_z;
  md.logits.assign(p, p + K);
  md.means.assign(p + K, p + K + static_cast<size_t>(K) * d_z);
  md.log_stds.assign(p + K + static_cast<size_t>(K) * d_z,
                     p + K + 2 * static_cast<size_t>(K) * d_z);
  for (double& ls : md.log_stds) ls = std::min(kLogStdMax, std::max(kLogStdMin, ls));
  return md;
}

// Densities for every (batch, position) of a context; inference path.
inline std::vector<std::vector<MixtureDensity>> forward_densities(const PriorModel& m,
                                                                  const Tensor& ctx) {
  NoGradGuard ng;
  Tensor raw = m.forward_raw(ctx);
  const int B = raw.dim(0), T = raw.dim(1), H = raw.dim(2);
  std::vector<std::vector<MixtureDensity>> out(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t)
      out[static_cast<size_t>(b)].push_back(unpack_density(
          raw.data().data() + (static_cast<size_t>(b) * T + t) * H, m.cfg.mixtures, m.cfg.d_z));
  return out;
}

// Next-latent density for each of several contexts of possibly different
// lengths. Rows are grouped by retained length (at most max_len-1, newest
// kept) and each group runs one batched pass, so mixed-length batches cost a
// handful of forwards instead of one per row.
inline std::vector<MixtureDensity> next_densities(
    const PriorModel& m, const std::vector<std::vector<std::vector<double>>>& ctxs) {
  NoGradGuard ng;
  const int D = m.cfg.d_z;
  const int keep = m.cfg.max_len - 1;
  std::vector<MixtureDensity> out(ctxs.size());
  std::map<int, std::vector<size_t>> groups;
  for (size_t i = 0; i < ctxs.size(); ++i) {
    for (const auto& row : ctxs[i])
      if (static_cast<int>(row.size()) != D)
        throw ShapeError("next_densities: context latent dim mismatch");
    groups[std::min<int>(static_cast<int>(ctxs[i].size()), keep)].push_back(i);
  }
  for (const auto& [T, idx] : groups) {
    const int G = static_cast<int>(idx.size());
    Tensor in;
    if (T > 0) {
      std::vector<double> flat;
      flat.reserve(static_cast<size_t>(G) * T * D);
      for (size_t i : idx) {
        const auto& c = ctxs[i];
        for (size_t t = c.size() - static_cast<size_t>(T); t < c.size(); ++t)
          flat.insert(flat.end(), c[t].begin(), c[t].end());
      }
      in = m.build_inputs(Tensor::from({G, T, D}, std::move(flat)), true);
    } else {
      in = add(reshape(matmul(Tensor::filled({G, 1}, 1.0), m.start), {G, 1, m.cfg.d_model}),
               slice(m.pos, 0, 0, 1));
    }
    Tensor mask = nn::causal_mask(in.dim(1));
    Tensor h = in;
    for (const auto& b : m.blocks) h = b.forward(h, mask);
    Tensor raw = m.head.forward(slice(h, 1, h.dim(1) - 1, 1));
    const int H = raw.dim(2);
    for (int g = 0; g < G; ++g)
      out[idx[static_cast<size_t>(g)]] = unpack_density(
          raw.data().data() + static_cast<size_t>(g) * H, m.cfg.mixtures, m.cfg.d_z);
  }
  return out;
}

// ---------------------------------------------------------------- rollout

// Incremental next-latent evaluator. Holds per-block key/value caches; each
// push appends one executed latent per batch row. When the input window is
// full, the oldest latents are dropped and the stack is re-run on the
// retained suffix (the window slides by one).
class RolloutSession {
 public:
  // Starts from the start embedding alone (no context latents).
  explicit RolloutSession(const PriorModel& m) : m_(&m), batch_(1) {
    history_.emplace_back();
    recompute();
  }

  RolloutSession(const PriorModel& m, const Tensor& ctx) : m_(&m) {
    if (ctx.ndim() != 3 || ctx.dim(2) != m.cfg.d_z)
      throw ShapeError("RolloutSession: context must be (B,T,d_z)");
    batch_ = ctx.dim(0);
    const int keep = m.cfg.max_len - 1;
    Tensor kept = ctx.dim(1) > keep ? slice(ctx, 1, ctx.dim(1) - keep, keep) : ctx;
    for (int b = 0; b < batch_; ++b)
      history_.emplace_back(kept.data().begin() + static_cast<size_t>(b) * kept.dim(1) * kept.dim(2),
                            kept.data().begin() + static_cast<size_t>(b + 1) * kept.dim(1) * kept.dim(2));
    recompute();
  }

  int batch() const { return batch_; }
  int window_len() const { return static_cast<int>(history_[0].size()) / m_->cfg.d_z + 1; }
  const MixtureDensity& density(int b) const { return densities_[static_cast<size_t>(b)]; }

  // Replicates a single-row session across n rows (shared context fan-out).
  void tile(int n) {
    if (batch_ != 1) throw ShapeError("RolloutSession::tile: batch already > 1");
    NoGradGuard ng;
    std::vector<int> idx(static_cast<size_t>(n), 0);
    for (auto& c : caches_) {
      c.keys = index_select(c.keys, 0, idx);
      c.values = index_select(c.values, 0, idx);
    }
    history_.assign(static_cast<size_t>(n), history_[0]);
    densities_.assign(static_cast<size_t>(n), densities_[0]);
    batch_ = n;
  }

  // Appends one latent per row; z is (B, d_z) flat.
  void push(const std::vector<double>& z) {
    if (static_cast<int>(z.size()) != batch_ * m_->cfg.d_z)
      throw ShapeError("RolloutSession::push: expected batch*d_z values");
    NoGradGuard ng;
    const int D = m_->cfg.d_z;
    for (int b = 0; b < batch_; ++b)
      history_[static_cast<size_t>(b)].insert(history_[static_cast<size_t>(b)].end(),
                                              z.begin() + static_cast<size_t>(b) * D,
                                              z.begin() + static_cast<size_t>(b + 1) * D);
    const int keep = m_->cfg.max_len - 1;
    if (static_cast<int>(history_[0].size()) / D > keep) {
      for (auto& h : history_) h.erase(h.begin(), h.begin() + D);
      recompute();
      return;
    }
    // Incremental path: embed the new latent at its position and extend.
    const int p = static_cast<int>(history_[0].size()) / D;  // input position of z
    std::vector<double> flat(z);
    Tensor zt = Tensor::from({batch_, 1, D}, std::move(flat));
    Tensor in = add(m_->embed.forward(zt), slice(m_->pos, 0, p, 1));
    Tensor h = in;
    for (size_t i = 0; i < caches_.size(); ++i) h = m_->blocks[i].forward_step(h, caches_[i]);
    set_densities(m_->head.forward(h));
  }

 private:
  void recompute() {
    NoGradGuard ng;
    const int D = m_->cfg.d_z;
    const int T = static_cast<int>(history_[0].size()) / D;
    Tensor ctx = Tensor::zeros({batch_, std::max(T, 1), D});
    if (T > 0) {
      std::vector<double> flat;
      flat.reserve(static_cast<size_t>(batch_) * T * D);
      for (const auto& h : history_) flat.insert(flat.end(), h.begin(), h.end());
      ctx = Tensor::from({batch_, T, D}, std::move(flat));
    }
    Tensor in = T > 0 ? m_->build_inputs(ctx, true)
                      : add(reshape(matmul(Tensor::filled({batch_, 1}, 1.0), m_->start),
                                    {batch_, 1, m_->cfg.d_model}),
                            slice(m_->pos, 0, 0, 1));
    Tensor mask = nn::causal_mask(in.dim(1));
    caches_.assign(m_->blocks.size(), {});
    Tensor h = in;
    for (size_t i = 0; i < caches_.size(); ++i) h = m_->blocks[i].forward_fill(h, mask, caches_[i]);
    set_densities(head_last(h));
  }

  // Head applied to the final position only: (B,L,C) -> (B,1,head_dim).
  Tensor head_last(const Tensor& h) const {
    return m_->head.forward(slice(h, 1, h.dim(1) - 1, 1));
  }

  void set_densities(const Tensor& raw) {
    const int H = raw.dim(2);
    densities_.clear();
    for (int b = 0; b < batch_; ++b)
      densities_.push_back(unpack_density(raw.data().data() + static_cast<size_t>(b) * H,
                                          m_->cfg.mixtures, m_->cfg.d_z));
  }

  const PriorModel* m_;
  int batch_ = 0;
  std::vector<std::vector<double>> history_;  // retained latents per row, flat
  std::vector<nn::TransformerBlock::KvCache> caches_;
  std::vector<MixtureDensity> densities_;
};

struct Temperature {
  double logit_scale = 1.0;
  double std_scale = 1.0;
};

// n rollouts of `horizon` latents sharing one context; (n, horizon, d_z).
// An empty context starts from the start embedding. Draws are consumed
// row-major per step, so results are seed-deterministic and independent of
// how rows would be partitioned.
inline Tensor sample_rollouts(const PriorModel& m, const std::vector<std::vector<double>>& ctx,
                              int n, int horizon, Temperature temp, CounterRng& rng) {
  if (n < 1 || horizon < 1) throw ConfigError("sample_rollouts: need n >= 1 and horizon >= 1");
  const int D = m.cfg.d_z;
  NoGradGuard ng;
  std::vector<double> flat_ctx;
  for (const auto& z : ctx) {
    if (static_cast<int>(z.size()) != D)
      throw ShapeError("sample_rollouts: context latent dim mismatch");
    flat_ctx.insert(flat_ctx.end(), z.begin(), z.end());
  }
  RolloutSession sess =
      ctx.empty() ? RolloutSession(m)
                  : RolloutSession(m, Tensor::from({1, static_cast<int>(ctx.size()), D},
                                                   std::move(flat_ctx)));
  if (n > 1) sess.tile(n);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(n) * horizon * D);
  std::vector<std::vector<double>> rows(static_cast<size_t>(n));
  for (int t = 0; t < horizon; ++t) {
    std::vector<double> zs;
    zs.reserve(static_cast<size_t>(n) * D);
    for (int b = 0; b < n; ++b) {
      std::vector<double> z = mdn_sample(sess.density(b), temp.logit_scale, temp.std_scale, rng);
      rows[static_cast<size_t>(b)].insert(rows[static_cast<size_t>(b)].end(), z.begin(), z.end());
      zs.insert(zs.end(), z.begin(), z.end());
    }
    if (t + 1 < horizon) sess.push(zs);
  }
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return Tensor::from({n, horizon, D}, std::move(out));
}

// Single rollout as a list of latents.
inline std::vector<std::vector<double>> sample_sequence(const PriorModel& m,
                                                        const std::vector<std::vector<double>>& ctx,
                                                        int horizon, Temperature temp,
                                                        CounterRng& rng) {
  if (horizon == 0) return {};
  Tensor r = sample_rollouts(m, ctx, 1, horizon, temp, rng);
  std::vector<std::vector<double>> out;
  const int D = m.cfg.d_z;
  for (int t = 0; t < horizon; ++t)
    out.emplace_back(r.data().begin() + static_cast<size_t>(t) * D,
                     r.data().begin() + static_cast<size_t>(t + 1) * D);
  return out;
}

// Mean per-step log-probability of a latent sequence, teacher-forced in
// consecutive windows of the model's maximum length.
inline double sequence_logprob(const PriorModel& m, const std::vector<std::vector<double>>& zs) {
  if (zs.empty()) throw ShapeError("sequence_logprob: empty sequence");
  NoGradGuard ng;
  const int D = m.cfg.d_z;
  double acc = 0.0;
  int count = 0;
  for (size_t start = 0; start < zs.size(); start += static_cast<size_t>(m.cfg.max_len)) {
    const int len = static_cast<int>(std::min(zs.size() - start,
                                              static_cast<size_t>(m.cfg.max_len)));
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(len) * D);
    for (int t = 0; t < len; ++t) {
      if (static_cast<int>(zs[start + t].size()) != D)
        throw ShapeError("sequence_logprob: latent dim mismatch");
      flat.insert(flat.end(), zs[start + t].begin(), zs[start + t].end());
    }
    auto dens = forward_densities(m, Tensor::from({1, len, D}, std::move(flat)));
    for (int t = 0; t < len; ++t) {
      acc += mdn_log_prob(dens[0][static_cast<size_t>(t)], zs[start + t]);
      ++count;
    }
  }
  return acc / count;
}

// ---------------------------------------------------------------- dataset prior

// Non-parametric alternative: windows sampled uniformly from the encoded
// demonstration clips, ignoring any context.
struct DatasetPrior {
  int d_z = 0;
  std::vector<std::vector<std::vector<double>>> clip_latents;  // [clip][t][d_z]

  static DatasetPrior build(const data::DemoDataset& ds, const vae::Vae& v) {
    DatasetPrior p;
    p.d_z = v.cfg.d_z;
    for (const auto& c : ds.clips) p.clip_latents.push_back(vae::encode_clip_means(v, c.frames));
    return p;
  }

  struct Draw {
    int clip = 0;
    int start = 0;
    std::vector<std::vector<double>> latents;
  };

  Draw sample(int horizon, CounterRng& rng) const {
    if (horizon < 1) throw ConfigError("DatasetPrior::sample: horizon must be >= 1");
    size_t total = 0;
    for (const auto& c : clip_latents)
      if (static_cast<int>(c.size()) >= horizon) total += c.size() - horizon + 1;
    if (total == 0)
      throw ConfigError("DatasetPrior::sample: horizon longer than every encoded clip");
    size_t u = rng.below(total);
    for (size_t ci = 0; ci < clip_latents.size(); ++ci) {
      const auto& c = clip_latents[ci];
      if (static_cast<int>(c.size()) < horizon) continue;
      size_t windows = c.size() - horizon + 1;
      if (u < windows) {
        Draw d;
        d.clip = static_cast<int>(ci);
        d.start = static_cast<int>(u);
        d.latents.assign(c.begin() + static_cast<long>(u),
                         c.begin() + static_cast<long>(u) + horizon);
        return d;
      }
      u -= windows;
    }
    throw NumericError("DatasetPrior::sample: window accounting failed");
  }
};

// ---------------------------------------------------------------- training

namespace detail {

// Mixture log-probability of targets under raw head outputs, as a graph.
// Reuses precomputed slices so the entropy term can share one forward pass.
struct HeadSlices {
  Tensor log_weights;  // (B,T,K)
  Tensor means;        // (B,T,K,D)
  Tensor log_stds;     // (B,T,K,D) clamped
};

inline HeadSlices slice_head(const Tensor& raw, int K, int D) {
  const int B = raw.dim(0), T = raw.dim(1);
  HeadSlices hs;
  hs.log_weights = log_softmax(slice(raw, 2, 0, K));
  hs.means = reshape(slice(raw, 2, K, K * D), {B, T, K, D});
  hs.log_stds = clampt(reshape(slice(raw, 2, K + K * D, K * D), {B, T, K, D}),
                       kLogStdMin, kLogStdMax);
  return hs;
}

// Mean over (B,T) of log p(z) with z a constant tensor (B,T,D).
inline Tensor mixture_logprob_mean(const HeadSlices& hs, const Tensor& z, int K) {
  Tensor zz = unsqueeze_repeat(z, K);  // (B,T,K,D)
  Tensor u = div(sub(zz, hs.means), expt(hs.log_stds));
  Tensor comp = sub(scale(square(u), -0.5), hs.log_stds);
  Tensor comp_sum = add_scalar(sum_last(comp), -0.5 * kLogTwoPi * z.dim(2));
  return mean(logsumexp(add(hs.log_weights, comp_sum)));
}

struct EncodedClip {
  std::vector<double> mean, log_std;  // T * d_z
  int len = 0;
};

inline std::vector<EncodedClip> encode_corpus(const vae::Vae& v,
                                              const data::DemoDataset& ds) {
  NoGradGuard ng;
  std::vector<EncodedClip> out;
  for (const auto& c : ds.clips) {
    const int T = static_cast<int>(c.frames.size());
    std::vector<double> buf;
    buf.reserve(static_cast<size_t>(T) * ds.frame_dim);
    for (const auto& f : c.frames) buf.insert(buf.end(), f.begin(), f.end());
    auto [mu, ls] = v.encode_dist(Tensor::from({1, T, ds.frame_dim}, std::move(buf)));
    EncodedClip ec;
    ec.len = T;
    ec.mean = mu.data();
    ec.log_std = ls.data();
    out.push_back(std::move(ec));
  }
  return out;
}

}  // namespace detail

struct PriorTrainConfig {
  int batch = 32;
  int window = 64;
  int steps = 20000;
  double lr = 3e-4;
  int warmup = 100;
  double entropy_eps = 0.2;
  int holdout_every = 8;
  int log_every = 100;
  uint64_t seed = 1;
};

struct PriorTrainRow {
  long step = 0;
  double loss = 0, nll = 0, entropy = 0;
};

struct PriorTrainResult {
  PriorModel model;
  std::vector<PriorTrainRow> curve;
  double holdout_before = 0.0;  // mean per-step log-prob of held-out clips
  double holdout_after = 0.0;
};

// Mean per-step log-prob of deterministically encoded clips, in strided
// windows, under the current model.
inline double holdout_logprob(const PriorModel& m, const std::vector<detail::EncodedClip>& clips,
                              int window) {
  NoGradGuard ng;
  const int D = m.cfg.d_z;
  double acc = 0.0;
  long count = 0;
  for (const auto& c : clips) {
    for (int s = 0; s + window <= c.len; s += window) {
      std::vector<double> flat(static_cast<size_t>(window) * D);
      for (size_t i = 0; i < flat.size(); ++i)
        flat[i] = squash(c.mean[static_cast<size_t>(s) * D + i]);
      Tensor ctx = Tensor::from({1, window, D}, std::move(flat));
      auto dens = forward_densities(m, ctx);
      for (int t = 0; t < window; ++t) {
        std::vector<double> z(static_cast<size_t>(D));
        for (int d = 0; d < D; ++d) z[static_cast<size_t>(d)] =
            squash(c.mean[static_cast<size_t>(s + t) * D + d]);
        acc += mdn_log_prob(dens[0][static_cast<size_t>(t)], z);
        ++count;
      }
    }
  }
  if (count == 0) throw ConfigError("holdout_logprob: no full windows");
  return acc / count;
}

inline PriorTrainResult train_prior(const data::DemoDataset& ds, const vae::Vae& v,
                                    const PriorConfig& cfg, const PriorTrainConfig& tc) {
  if (v.cfg.d_z != cfg.d_z) throw ConfigError("train_prior: latent dim mismatch with the encoder");
  if (ds.frame_dim != v.cfg.frame_dim)
    throw ConfigError("train_prior: dataset frame_dim does not match the encoder");
  if (tc.window < 1 || tc.window > cfg.max_len)
    throw ConfigError("train_prior: window must be in [1, max_len]");

  CounterRng root(tc.seed);
  CounterRng init_rng = root.split("init");
  PriorTrainResult res;
  res.model = PriorModel::make(cfg, init_rng);

  auto [train, hold] = data::split_clips(ds, tc.holdout_every);
  if (train.clips.empty() || hold.clips.empty())
    throw ConfigError("train_prior: need both training and held-out clips");
  auto enc_train = detail::encode_corpus(v, train);
  auto enc_hold = detail::encode_corpus(v, hold);

  struct WindowRef {
    int clip = 0, start = 0;
  };
  std::vector<WindowRef> windows;
  for (size_t c = 0; c < enc_train.size(); ++c)
    for (int s = 0; s + tc.window <= enc_train[c].len; s += tc.window)
      windows.push_back({static_cast<int>(c), s});
  if (windows.size() < static_cast<size_t>(tc.batch))
    throw ConfigError("train_prior: fewer windows than one batch");

  res.holdout_before = holdout_logprob(res.model, enc_hold, tc.window);

  nn::NamedTensors ps = res.model.params();
  Adam opt(ps.tensors(), AdamConfig{tc.lr, 0.9, 0.999, 1e-8, tc.warmup});
  CounterRng shuffle_rng = root.split("shuffle");
  CounterRng noise_rng = root.split("noise");
  CounterRng ent_rng = root.split("entropy");

  const int D = cfg.d_z, K = cfg.mixtures, W = tc.window;
  size_t cursor = windows.size();
  double acc_loss = 0, acc_nll = 0, acc_ent = 0;
  int acc_n = 0;

  for (long step = 1; step <= tc.steps; ++step) {
    std::vector<double> in_buf, tg_buf;
    in_buf.reserve(static_cast<size_t>(tc.batch) * W * D);
    tg_buf.reserve(in_buf.capacity());
    for (int b = 0; b < tc.batch; ++b) {
      if (cursor >= windows.size()) {
        for (size_t i = windows.size(); i > 1; --i)
          std::swap(windows[i - 1], windows[shuffle_rng.below(i)]);
        cursor = 0;
      }
      auto [c, s] = windows[cursor++];
      const auto& ec = enc_train[static_cast<size_t>(c)];
      for (int t = 0; t < W; ++t)
        for (int d = 0; d < D; ++d) {
          size_t i = static_cast<size_t>(s + t) * D + d;
          in_buf.push_back(squash(ec.mean[i] + std::exp(ec.log_std[i]) * noise_rng.normal()));
          tg_buf.push_back(squash(ec.mean[i]));
        }
    }
    Tensor z_in = Tensor::from({tc.batch, W, D}, std::move(in_buf));
    Tensor z_tg = Tensor::from({tc.batch, W, D}, std::move(tg_buf));

    Tensor raw = res.model.forward_raw(z_in);
    detail::HeadSlices hs = detail::slice_head(raw, K, D);
    Tensor nll = neg(detail::mixture_logprob_mean(hs, z_tg, K));

    // Entropy term: -log p of fresh samples from the current densities,
    // with the samples held fixed (no gradient through the draw).
    std::vector<double> samp;
    samp.reserve(static_cast<size_t>(tc.batch) * W * D);
    {
      NoGradGuard ng;
      const int H = res.model.head_dim();
      for (int b = 0; b < tc.batch; ++b)
        for (int t = 0; t < W; ++t) {
          MixtureDensity md = unpack_density(
              raw.data().data() + (static_cast<size_t>(b) * W + t) * H, K, D);
          std::vector<double> z = mdn_sample(md, 1.0, 1.0, ent_rng);
          samp.insert(samp.end(), z.begin(), z.end());
        }
    }
    Tensor z_samp = Tensor::from({tc.batch, W, D}, std::move(samp));
    Tensor samp_logprob = detail::mixture_logprob_mean(hs, z_samp, K);
    Tensor loss = add(nll, scale(samp_logprob, tc.entropy_eps));

    opt.zero_grad();
    backward(loss);
    opt.step();

    acc_loss += loss.item();
    acc_nll += nll.item();
    acc_ent += -samp_logprob.item();
    ++acc_n;
    if (step % tc.log_every == 0 || step == tc.steps) {
      res.curve.push_back({step, acc_loss / acc_n, acc_nll / acc_n, acc_ent / acc_n});
      acc_loss = acc_nll = acc_ent = 0;
      acc_n = 0;
    }
  }

  res.holdout_after = holdout_logprob(res.model, enc_hold, tc.window);
  return res;
}

// ---------------------------------------------------------------- storage

inline void save_prior(const std::string& path, PriorModel& m,
                       const nlohmann::json& extra_meta = {}) {
  nlohmann::ordered_json meta;
  meta["kind"] = "prior";
  meta["config"] = m.cfg.to_json();
  if (!extra_meta.is_null() && !extra_meta.empty())
    for (auto& [k, val] : extra_meta.items()) meta[k] = val;
  ckpt::save_checkpoint(path, m.params(), meta);
}

inline PriorModel load_prior(const std::string& path) {
  nlohmann::json meta;
  nn::NamedTensors stored = ckpt::load_checkpoint(path, &meta);
  if (meta.value("kind", "") != "prior")
    throw FormatError(path + ": checkpoint kind is not 'prior'");
  PriorConfig cfg = PriorConfig::from_json(meta.at("config"));
  CounterRng dummy(0);
  PriorModel m = PriorModel::make(cfg, dummy);
  nn::NamedTensors ps = m.params();
  nn::copy_into(stored, ps);
  return m;
}

}  // namespace lsp::prior
