#pragma once

// Soft actor-critic over the latent action space. The sequence prior can be
// wired in three ways: as an exploration source emitting bursts of latents,
// as a support-matching regularizer on the actor density, or as the
// generator of temporally extended options scored by a step-conditioned
// critic. An action-repeat variant serves as a cheap temporal baseline.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lsp/checkpoint.hpp"
#include "lsp/common.hpp"
#include "lsp/lowlevel.hpp"
#include "lsp/nn.hpp"
#include "lsp/prior.hpp"
#include "lsp/tensor.hpp"
#include "lsp/world.hpp"

namespace lsp::highlevel {

constexpr double kActorLogStdMin = -5.0;
constexpr double kActorLogStdMax = 2.0;
constexpr double kLnTwo = 0.6931471805599453;

enum class Integration { None, Explore, Regularize, Options, Repeat };

inline std::string integration_name(Integration m) {
  switch (m) {
    case Integration::None: return "none";
    case Integration::Explore: return "explore";
    case Integration::Regularize: return "regularize";
    case Integration::Options: return "options";
    case Integration::Repeat: return "repeat";
  }
  throw ConfigError("integration_name: unknown mode");
}

inline Integration integration_from_name(const std::string& s) {
  if (s == "none") return Integration::None;
  if (s == "explore") return Integration::Explore;
  if (s == "regularize") return Integration::Regularize;
  if (s == "options") return Integration::Options;
  if (s == "repeat") return Integration::Repeat;
  throw ConfigError("unknown integration '" + s + "'");
}

struct HighLevelConfig {
  Integration integration = Integration::None;
  world::TaskKind task = world::TaskKind::GoToTargets;
  long budget = 300000;
  uint64_t seed = 1;
  int d_z = 8;
  std::vector<int> actor_hidden = {96, 96};
  std::vector<int> critic_hidden = {96, 96};
  double gamma = 0.99;
  double tau = 0.005;
  double lr = 1e-4;
  int batch = 64;
  long buffer_size = 200000;
  long warmup = 2000;
  int samples_between_updates = 64;
  int grad_steps_per_cycle = 8;
  bool auto_alpha = true;
  double init_alpha = 1.0;
  double epsilon_init = 0.1;
  long epsilon_anneal = 200000;
  double burst_lambda = 5.0;
  double delta_init = 0.01;
  long delta_anneal = 50000;
  bool literal_reg_sign = false;  // use the printed + sign instead of support matching
  int k_opt = 4;
  bool option_mean_mode = false;  // extend options with mixture means, not samples
  int ctx_len = 8;
  long eval_every = 10000;
  int eval_episodes = 10;

  double target_entropy() const { return -static_cast<double>(d_z); }

  nlohmann::ordered_json to_json() const {
    return {{"integration", integration_name(integration)},
            {"task", world::task_name(task)},
            {"budget", budget},
            {"seed", seed},
            {"d_z", d_z},
            {"actor_hidden", actor_hidden},
            {"critic_hidden", critic_hidden},
            {"gamma", gamma},
            {"tau", tau},
            {"lr", lr},
            {"batch", batch},
            {"buffer_size", buffer_size},
            {"warmup", warmup},
            {"samples_between_updates", samples_between_updates},
            {"grad_steps_per_cycle", grad_steps_per_cycle},
            {"auto_alpha", auto_alpha},
            {"init_alpha", init_alpha},
            {"epsilon_init", epsilon_init},
            {"epsilon_anneal", epsilon_anneal},
            {"burst_lambda", burst_lambda},
            {"delta_init", delta_init},
            {"delta_anneal", delta_anneal},
            {"literal_reg_sign", literal_reg_sign},
            {"k_opt", k_opt},
            {"option_mean_mode", option_mean_mode},
            {"ctx_len", ctx_len},
            {"eval_every", eval_every},
            {"eval_episodes", eval_episodes}};
  }
  static HighLevelConfig from_json(const nlohmann::json& j) {
    HighLevelConfig c;
    if (j.contains("integration")) c.integration = integration_from_name(j.at("integration"));
    if (j.contains("task")) c.task = world::task_from_name(j.at("task"));
    c.budget = j.value("budget", c.budget);
    c.seed = j.value("seed", c.seed);
    c.d_z = j.value("d_z", c.d_z);
    c.actor_hidden = j.value("actor_hidden", c.actor_hidden);
    c.critic_hidden = j.value("critic_hidden", c.critic_hidden);
    c.gamma = j.value("gamma", c.gamma);
    c.tau = j.value("tau", c.tau);
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.buffer_size = j.value("buffer_size", c.buffer_size);
    c.warmup = j.value("warmup", c.warmup);
    c.samples_between_updates = j.value("samples_between_updates", c.samples_between_updates);
    c.grad_steps_per_cycle = j.value("grad_steps_per_cycle", c.grad_steps_per_cycle);
    c.auto_alpha = j.value("auto_alpha", c.auto_alpha);
    c.init_alpha = j.value("init_alpha", c.init_alpha);
    c.epsilon_init = j.value("epsilon_init", c.epsilon_init);
    c.epsilon_anneal = j.value("epsilon_anneal", c.epsilon_anneal);
    c.burst_lambda = j.value("burst_lambda", c.burst_lambda);
    c.delta_init = j.value("delta_init", c.delta_init);
    c.delta_anneal = j.value("delta_anneal", c.delta_anneal);
    c.literal_reg_sign = j.value("literal_reg_sign", c.literal_reg_sign);
    c.k_opt = j.value("k_opt", c.k_opt);
    c.option_mean_mode = j.value("option_mean_mode", c.option_mean_mode);
    c.ctx_len = j.value("ctx_len", c.ctx_len);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    return c;
  }
};

// Linear ramp that lands exactly on zero at the end of the horizon.
inline double annealed(double init, long step, long horizon) {
  if (horizon <= 0 || step >= horizon) return 0.0;
  return init * (1.0 - static_cast<double>(step) / static_cast<double>(horizon));
}

// ---------------------------------------------------------- squashed gaussian

// log(1 - tanh(u)^2), stable on both tails via 2ln2 - 2|u| - 2 log(1+e^{-2|u|}).
inline Tensor log1m_tanh_sq(const Tensor& u) {
  Tensor au = abst(u);
  Tensor soft = logt(add_scalar(expt(scale(au, -2.0)), 1.0));
  return add_scalar(scale(add(au, soft), -2.0), 2.0 * kLnTwo);
}

struct SquashedSample {
  Tensor z;         // (B, d_z) in (-1,1)
  Tensor log_prob;  // (B)
};

struct Actor {
  int obs_dim = 0;
  int d_z = 0;
  nn::Mlp net;  // obs -> (mean | log_std)

  static Actor make(int obs_dim, int d_z, const std::vector<int>& hidden, CounterRng& rng) {
    Actor a;
    a.obs_dim = obs_dim;
    a.d_z = d_z;
    CounterRng r = rng.split("actor-init");
    a.net = nn::Mlp::make(obs_dim, hidden, 2 * d_z, r);
    return a;
  }

  std::pair<Tensor, Tensor> heads(const Tensor& s) const {
    if (s.ndim() != 2 || s.dim(1) != obs_dim) throw ShapeError("Actor::heads: expected (B, obs)");
    Tensor h = net.forward(s);
    return {slice(h, 1, 0, d_z), clampt(slice(h, 1, d_z, d_z), kActorLogStdMin, kActorLogStdMax)};
  }

  // Reparameterized draw z = tanh(mu + sigma*noise) with the squash-corrected
  // log density. The gaussian term uses the noise directly; its dependence on
  // the parameters through the sample cancels analytically.
  SquashedSample sample(const Tensor& s, const Tensor& noise) const {
    auto [mu, ls] = heads(s);
    Tensor u = add(mu, mul(expt(ls), noise));
    Tensor gauss =
        sum_last(sub(add_scalar(scale(square(noise), -0.5), -0.5 * prior::kLogTwoPi), ls));
    SquashedSample out;
    out.z = tanht(u);
    out.log_prob = sub(gauss, sum_last(log1m_tanh_sq(u)));
    return out;
  }

  // Per-row log density of fixed latents (constants in (-1,1)); gradients
  // flow into the actor parameters only.
  Tensor log_prob_of(const Tensor& s, const Tensor& z) const {
    if (z.ndim() != 2 || z.dim(0) != s.dim(0) || z.dim(1) != d_z)
      throw ShapeError("Actor::log_prob_of: latents must be (B, d_z)");
    const int B = z.dim(0);
    auto [mu, ls] = heads(s);
    std::vector<double> u_data(z.data());
    std::vector<double> corr(static_cast<size_t>(B), 0.0);
    for (int b = 0; b < B; ++b)
      for (int d = 0; d < d_z; ++d) {
        double& v = u_data[static_cast<size_t>(b) * d_z + d];
        v = std::min(prior::kSampleClip, std::max(-prior::kSampleClip, v));
        corr[static_cast<size_t>(b)] += std::log(1.0 - v * v);
        v = std::atanh(v);
      }
    Tensor u = Tensor::from(z.shape(), std::move(u_data));
    Tensor t = div(sub(u, mu), expt(ls));
    Tensor gauss = sum_last(sub(add_scalar(scale(square(t), -0.5), -0.5 * prior::kLogTwoPi), ls));
    return sub(gauss, Tensor::from({B}, std::move(corr)));
  }

  Tensor mean_action(const Tensor& s) const { return tanht(heads(s).first); }

  std::vector<double> act_mean(const std::vector<double>& obs) const {
    NoGradGuard ng;
    Tensor z = mean_action(Tensor::from({1, obs_dim}, obs));
    return z.data();
  }

  std::vector<double> act_sample(const std::vector<double>& obs, CounterRng& rng) const {
    NoGradGuard ng;
    Tensor noise = Tensor::randn({1, d_z}, rng);
    return sample(Tensor::from({1, obs_dim}, obs), noise).z.data();
  }

  void reg(nn::NamedTensors& ps) { net.reg(ps, "actor"); }
};

// ---------------------------------------------------------------- learner core

struct HighLevel {
  HighLevelConfig cfg;
  int obs_dim = 0;
  int onehot_dim = 0;  // step index input for the option critic; 0 without options
  Actor actor;
  nn::Mlp q1, q2, tq1, tq2;
  Tensor log_alpha;

  static HighLevel make(const HighLevelConfig& cfg, int obs_dim, CounterRng& rng) {
    HighLevel h;
    h.cfg = cfg;
    h.obs_dim = obs_dim;
    h.onehot_dim = cfg.integration == Integration::Options && cfg.k_opt > 1 ? cfg.k_opt : 0;
    h.actor = Actor::make(obs_dim, cfg.d_z, cfg.actor_hidden, rng);
    const int qin = obs_dim + cfg.d_z + h.onehot_dim;
    CounterRng r1 = rng.split("q1-init"), r2 = rng.split("q2-init");
    h.q1 = nn::Mlp::make(qin, cfg.critic_hidden, 1, r1);
    h.q2 = nn::Mlp::make(qin, cfg.critic_hidden, 1, r2);
    h.tq1 = nn::Mlp::make(qin, cfg.critic_hidden, 1, r1);
    h.tq2 = nn::Mlp::make(qin, cfg.critic_hidden, 1, r2);
    h.copy_targets();
    h.log_alpha = Tensor::filled({1}, std::log(cfg.init_alpha));
    h.log_alpha.set_requires_grad(true);
    return h;
  }

  void copy_targets() {
    NoGradGuard ng;
    auto cp = [](nn::Mlp& from, nn::Mlp& to) {
      nn::NamedTensors a, b;
      from.reg(a, "q");
      to.reg(b, "q");
      for (size_t i = 0; i < a.items.size(); ++i)
        b.items[i].second.data() = a.items[i].second.data();
    };
    cp(q1, tq1);
    cp(q2, tq2);
  }

  double alpha() const { return std::exp(log_alpha.data()[0]); }

  // (B, obs), (B, d_z), step index -> (B): critic value with the optional
  // one-hot step input appended.
  Tensor q_value(const nn::Mlp& q, const Tensor& s, const Tensor& z, int step_index) const {
    std::vector<Tensor> parts{s, z};
    if (onehot_dim > 0) {
      if (step_index < 0 || step_index >= onehot_dim)
        throw ConfigError("q_value: step index outside the option length");
      std::vector<double> oh(static_cast<size_t>(s.dim(0)) * onehot_dim, 0.0);
      for (int b = 0; b < s.dim(0); ++b)
        oh[static_cast<size_t>(b) * onehot_dim + step_index] = 1.0;
      parts.push_back(Tensor::from({s.dim(0), onehot_dim}, std::move(oh)));
    }
    return reshape(q.forward(concat(parts, 1)), {s.dim(0)});
  }

  // One-sample soft state value under the target critics, V(s) =
  // min(Q1',Q2')(s, z', 0) - alpha * log pi(z'|s).
  Tensor soft_value(const Tensor& s, const Tensor& noise) const {
    SquashedSample nx = actor.sample(s, noise);
    Tensor qmin = minimum(q_value(tq1, s, nx.z, 0), q_value(tq2, s, nx.z, 0));
    return sub(qmin, scale(nx.log_prob, alpha()));
  }

  void polyak_update(double tau) {
    NoGradGuard ng;
    auto mix = [tau](nn::Mlp& online, nn::Mlp& target) {
      nn::NamedTensors a, b;
      online.reg(a, "q");
      target.reg(b, "q");
      for (size_t i = 0; i < a.items.size(); ++i) {
        auto& from = a.items[i].second.data();
        auto& to = b.items[i].second.data();
        for (size_t j = 0; j < to.size(); ++j) to[j] = (1.0 - tau) * to[j] + tau * from[j];
      }
    };
    mix(q1, tq1);
    mix(q2, tq2);
  }

  nn::NamedTensors params() {
    nn::NamedTensors ps;
    actor.reg(ps);
    q1.reg(ps, "q1");
    q2.reg(ps, "q2");
    tq1.reg(ps, "tq1");
    tq2.reg(ps, "tq2");
    ps.add("log_alpha", log_alpha);
    return ps;
  }
};

// ---------------------------------------------------------------- batches

struct TransitionBatch {
  Tensor s;     // (B, obs)
  Tensor z;     // (B, d_z)
  Tensor r;     // (B)
  Tensor s2;    // (B, obs)
  Tensor done;  // (B) in {0,1}
};

struct SegmentBatch {
  Tensor s;        // (B, obs) state i steps into the option
  Tensor z;        // (B, d_z) option-defining latent
  std::vector<int> step_index;  // i per row
  Tensor rew_sum;  // (B) discounted in-option reward sum
  Tensor disc;     // (B) gamma^{remaining} masked by the done flag
  Tensor s2;       // (B, obs) state at option end
};

// Critic regression target y = r + gamma*(1-done)*V(s2), computed without
// gradients; `noise` drives the single value sample.
inline Tensor sac_targets(const HighLevel& hl, const TransitionBatch& b, const Tensor& noise) {
  NoGradGuard ng;
  Tensor disc = scale(sub(Tensor::filled({b.done.dim(0)}, 1.0), b.done), hl.cfg.gamma);
  return add(b.r, mul(disc, hl.soft_value(b.s2, noise)));
}

// Step-conditioned targets share the same value sample and combination so a
// one-step option reproduces the flat target bitwise.
inline Tensor option_targets(const HighLevel& hl, const SegmentBatch& b, const Tensor& noise) {
  NoGradGuard ng;
  return add(b.rew_sum, mul(b.disc, hl.soft_value(b.s2, noise)));
}

struct CriticLossOut {
  Tensor loss;
  double value = 0.0;
};

inline CriticLossOut critic_loss_graph(const HighLevel& hl, const Tensor& s, const Tensor& z,
                                       const std::vector<int>* step_index, const Tensor& y) {
  Tensor qa, qb;
  if (step_index == nullptr) {
    qa = hl.q_value(hl.q1, s, z, 0);
    qb = hl.q_value(hl.q2, s, z, 0);
  } else {
    // Mixed step indices: per-row one-hot built once, shared by both critics.
    const int B = s.dim(0), K = hl.onehot_dim;
    std::vector<Tensor> parts{s, z};
    if (K > 0) {
      std::vector<double> oh(static_cast<size_t>(B) * K, 0.0);
      for (int r = 0; r < B; ++r) {
        int i = (*step_index)[static_cast<size_t>(r)];
        if (i < 0 || i >= K) throw ConfigError("critic_loss_graph: step index outside option");
        oh[static_cast<size_t>(r) * K + i] = 1.0;
      }
      parts.push_back(Tensor::from({B, K}, std::move(oh)));
    }
    Tensor in = concat(parts, 1);
    qa = reshape(hl.q1.forward(in), {B});
    qb = reshape(hl.q2.forward(in), {B});
  }
  CriticLossOut out;
  out.loss = add(mean(square(sub(qa, y))), mean(square(sub(qb, y))));
  out.value = out.loss.item();
  return out;
}

struct ActorLossOut {
  Tensor loss;
  double value = 0.0;
  double mean_log_prob = 0.0;
};

// J_pi = E[alpha*log pi(z|s) - min Q(s,z,0)] with an optional prior term on
// fixed samples z0: support matching subtracts delta*log pi(z0|s); the
// literal printed sign adds it instead.
inline ActorLossOut actor_loss_graph(const HighLevel& hl, const Tensor& s, const Tensor& noise,
                                     const Tensor* z0, double delta, bool literal_sign) {
  SquashedSample smp = hl.actor.sample(s, noise);
  Tensor qmin = minimum(hl.q_value(hl.q1, s, smp.z, 0), hl.q_value(hl.q2, s, smp.z, 0));
  Tensor loss = mean(sub(scale(smp.log_prob, hl.alpha()), qmin));
  if (z0 != nullptr && delta != 0.0) {
    Tensor prior_logp = mean(hl.actor.log_prob_of(s, *z0));
    loss = literal_sign ? add(loss, scale(prior_logp, delta))
                        : sub(loss, scale(prior_logp, delta));
  }
  ActorLossOut out;
  out.loss = loss;
  out.value = loss.item();
  NoGradGuard ng;
  out.mean_log_prob = mean(smp.log_prob).item();
  return out;
}

// ---------------------------------------------------------------- replay

class TransitionBuffer {
 public:
  TransitionBuffer(long capacity, int obs_dim, int d_z, int ctx_len)
      : cap_(capacity), obs_(obs_dim), dz_(d_z), ctx_len_(ctx_len) {
    stride_ = obs_ + dz_ + 1 + obs_ + 1 + (ctx_len_ > 0 ? 1 + ctx_len_ * dz_ : 0);
    data_.reserve(static_cast<size_t>(std::min(cap_, 4096L)) * stride_);
  }

  long size() const { return size_; }

  void push(const std::vector<double>& s, const std::vector<double>& z, double r,
            const std::vector<double>& s2, bool done,
            const std::vector<std::vector<double>>& ctx) {
    if (static_cast<long>(data_.size()) < cap_ * stride_ && size_ < cap_)
      data_.resize(static_cast<size_t>(size_ + 1) * stride_);
    double* row = data_.data() + static_cast<size_t>(head_) * stride_;
    double* p = row;
    p = std::copy(s.begin(), s.end(), p);
    p = std::copy(z.begin(), z.end(), p);
    *p++ = r;
    p = std::copy(s2.begin(), s2.end(), p);
    *p++ = done ? 1.0 : 0.0;
    if (ctx_len_ > 0) {
      int n = static_cast<int>(std::min<size_t>(ctx.size(), static_cast<size_t>(ctx_len_)));
      *p++ = n;
      for (int i = 0; i < n; ++i)
        p = std::copy(ctx[ctx.size() - static_cast<size_t>(n - i)].begin(),
                      ctx[ctx.size() - static_cast<size_t>(n - i)].end(), p);
      std::fill(p, p + static_cast<size_t>(ctx_len_ - n) * dz_, 0.0);
    }
    head_ = (head_ + 1) % cap_;
    size_ = std::min(size_ + 1, cap_);
  }

  // Uniformly sampled batch; contexts (oldest to newest) are returned per row
  // when the buffer stores them.
  TransitionBatch sample(int batch, CounterRng& rng,
                         std::vector<std::vector<std::vector<double>>>* ctxs = nullptr) const {
    if (size_ == 0) throw ConfigError("TransitionBuffer::sample: empty buffer");
    std::vector<double> s, z, r, s2, done;
    if (ctxs != nullptr) ctxs->clear();
    for (int b = 0; b < batch; ++b) {
      const double* row =
          data_.data() + static_cast<size_t>(rng.below(static_cast<uint64_t>(size_))) * stride_;
      s.insert(s.end(), row, row + obs_);
      z.insert(z.end(), row + obs_, row + obs_ + dz_);
      r.push_back(row[obs_ + dz_]);
      s2.insert(s2.end(), row + obs_ + dz_ + 1, row + obs_ + dz_ + 1 + obs_);
      done.push_back(row[obs_ + dz_ + 1 + obs_]);
      if (ctxs != nullptr && ctx_len_ > 0) {
        const double* cp = row + obs_ + dz_ + 1 + obs_ + 1;
        int n = static_cast<int>(*cp++);
        std::vector<std::vector<double>> rows;
        for (int i = 0; i < n; ++i)
          rows.emplace_back(cp + static_cast<size_t>(i) * dz_,
                            cp + static_cast<size_t>(i + 1) * dz_);
        ctxs->push_back(std::move(rows));
      }
    }
    TransitionBatch out;
    out.s = Tensor::from({batch, obs_}, std::move(s));
    out.z = Tensor::from({batch, dz_}, std::move(z));
    out.r = Tensor::from({batch}, std::move(r));
    out.s2 = Tensor::from({batch, obs_}, std::move(s2));
    out.done = Tensor::from({batch}, std::move(done));
    return out;
  }

 private:
  long cap_, size_ = 0, head_ = 0;
  int obs_, dz_, ctx_len_;
  long stride_;
  std::vector<double> data_;
};

class SegmentBuffer {
 public:
  SegmentBuffer(long capacity, int obs_dim, int d_z, int k_opt)
      : cap_(capacity), obs_(obs_dim), dz_(d_z), k_(k_opt) {
    stride_ = 1 + obs_ + dz_ + 1 + k_ + obs_ + 1;  // i, s, z, n_r, rewards, s2, done
  }

  long size() const { return size_; }

  void push(int i, const std::vector<double>& s, const std::vector<double>& z,
            const std::vector<double>& rewards, const std::vector<double>& s2, bool done) {
    if (static_cast<int>(rewards.size()) > k_ - i)
      throw ConfigError("SegmentBuffer::push: too many rewards for the step index");
    if (static_cast<long>(data_.size()) < cap_ * stride_ && size_ < cap_)
      data_.resize(static_cast<size_t>(size_ + 1) * stride_);
    double* p = data_.data() + static_cast<size_t>(head_) * stride_;
    *p++ = i;
    p = std::copy(s.begin(), s.end(), p);
    p = std::copy(z.begin(), z.end(), p);
    *p++ = static_cast<double>(rewards.size());
    p = std::copy(rewards.begin(), rewards.end(), p);
    p = std::fill_n(p, static_cast<size_t>(k_) - rewards.size(), 0.0);
    p = std::copy(s2.begin(), s2.end(), p);
    *p++ = done ? 1.0 : 0.0;
    head_ = (head_ + 1) % cap_;
    size_ = std::min(size_ + 1, cap_);
  }

  SegmentBatch sample(int batch, double gamma, CounterRng& rng) const {
    if (size_ == 0) throw ConfigError("SegmentBuffer::sample: empty buffer");
    SegmentBatch out;
    std::vector<double> s, z, rew, disc, s2;
    for (int b = 0; b < batch; ++b) {
      const double* row =
          data_.data() + static_cast<size_t>(rng.below(static_cast<uint64_t>(size_))) * stride_;
      int i = static_cast<int>(row[0]);
      out.step_index.push_back(i);
      s.insert(s.end(), row + 1, row + 1 + obs_);
      z.insert(z.end(), row + 1 + obs_, row + 1 + obs_ + dz_);
      int nr = static_cast<int>(row[1 + obs_ + dz_]);
      const double* rp = row + 1 + obs_ + dz_ + 1;
      double acc = 0.0, g = 1.0;
      for (int j = 0; j < nr; ++j, g *= gamma) acc += g * rp[j];
      rew.push_back(acc);
      bool done = row[stride_ - 1] != 0.0;
      disc.push_back(done ? 0.0 : g);  // g == gamma^{n_r} after the loop
      s2.insert(s2.end(), row + 1 + obs_ + dz_ + 1 + k_, row + 1 + obs_ + dz_ + 1 + k_ + obs_);
    }
    out.s = Tensor::from({batch, obs_}, std::move(s));
    out.z = Tensor::from({batch, dz_}, std::move(z));
    out.rew_sum = Tensor::from({batch}, std::move(rew));
    out.disc = Tensor::from({batch}, std::move(disc));
    out.s2 = Tensor::from({batch, obs_}, std::move(s2));
    return out;
  }

 private:
  long cap_, size_ = 0, head_ = 0;
  int obs_, dz_, k_;
  long stride_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------- exploration

// Ring of the most recent executed latents; the prior conditions on it.
struct PriorContext {
  int cap = 0;
  std::deque<std::vector<double>> ring;

  explicit PriorContext(int cap = 0) : cap(cap) {}
  void clear() { ring.clear(); }
  void push(const std::vector<double>& z) {
    if (cap <= 0) return;
    ring.push_back(z);
    while (static_cast<int>(ring.size()) > cap) ring.pop_front();
  }
  std::vector<std::vector<double>> rows() const { return {ring.begin(), ring.end()}; }
};

// Epsilon-gated prior bursts: once a burst starts, the prior drives the next
// k = max(1, Poisson(lambda)) latents through an incremental rollout session
// seeded with the current context. Every executed latent lands in the ring.
class Explorer {
 public:
  Explorer(const prior::PriorModel* pm, int ctx_len, double lambda)
      : pm_(pm), ctx_(ctx_len), lambda_(lambda) {}

  void reset() {
    ctx_.clear();
    burst_left_ = 0;
    session_.reset();
  }

  bool in_burst() const { return burst_left_ > 0; }
  long prior_steps() const { return prior_steps_; }
  long bursts_started() const { return bursts_started_; }
  const PriorContext& context() const { return ctx_; }

  // One latent decision. `actor_z` is only invoked when the actor is the
  // source; `from_prior` reports which path produced the latent.
  std::vector<double> step(double eps, const std::function<std::vector<double>()>& actor_z,
                           CounterRng& rng, bool* from_prior) {
    std::vector<double> z;
    bool prior_src = false;
    if (burst_left_ > 0) {
      prior_src = true;
    } else if (eps > 0.0 && rng.uniform() < eps) {
      burst_left_ = static_cast<int>(std::max<uint64_t>(1, rng.poisson(lambda_)));
      ++bursts_started_;
      open_session();
      prior_src = true;
    }
    if (prior_src) {
      if (!session_) open_session();
      z = prior::mdn_sample(session_->density(0), 1.0, 1.0, rng);
      session_->push(z);
      --burst_left_;
      if (burst_left_ == 0) session_.reset();
      ++prior_steps_;
    } else {
      z = actor_z();
    }
    record_executed(z);
    if (from_prior != nullptr) *from_prior = prior_src;
    return z;
  }

  // Latents executed outside of step() (warmup draws) still extend the ring.
  void record_executed(const std::vector<double>& z) { ctx_.push(z); }

 private:
  void open_session() {
    if (pm_ == nullptr) throw ConfigError("Explorer: no prior model wired in");
    auto rows = ctx_.rows();
    if (rows.empty()) {
      session_.emplace(*pm_);
    } else {
      std::vector<double> flat;
      for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
      session_.emplace(*pm_, Tensor::from({1, static_cast<int>(rows.size()), pm_->cfg.d_z},
                                          std::move(flat)));
    }
  }

  const prior::PriorModel* pm_;
  PriorContext ctx_;
  double lambda_;
  int burst_left_ = 0;
  long prior_steps_ = 0;
  long bursts_started_ = 0;
  std::optional<prior::RolloutSession> session_;
};

// Mixture mean of a next-latent density, for the deterministic option mode.
inline std::vector<double> mixture_mean(const prior::MixtureDensity& md) {
  double lmax = *std::max_element(md.logits.begin(), md.logits.end());
  std::vector<double> w(md.logits.size());
  double norm = 0.0;
  for (size_t k = 0; k < w.size(); ++k) {
    w[k] = std::exp(md.logits[k] - lmax);
    norm += w[k];
  }
  std::vector<double> out(static_cast<size_t>(md.d_z), 0.0);
  for (int k = 0; k < md.n_comp; ++k)
    for (int d = 0; d < md.d_z; ++d)
      out[static_cast<size_t>(d)] +=
          w[static_cast<size_t>(k)] / norm * md.means[static_cast<size_t>(k * md.d_z + d)];
  return out;
}

// ---------------------------------------------------------------- training

struct RunRow {
  long env_steps = 0;
  long grad_steps = 0;
  double eval_return_mean = 0.0;
  double eval_return_median = 0.0;
  double eval_success = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double alpha = 0.0;
  double epsilon = 0.0;
  double delta = 0.0;
  double prior_fraction = 0.0;
};

inline std::string run_row_header() {
  return "env_steps,grad_steps,eval_return_mean,eval_return_median,eval_success,actor_loss,"
         "critic_loss,alpha,epsilon,delta,prior_fraction";
}

inline std::string run_row_csv(const RunRow& r) {
  std::ostringstream os;
  os << r.env_steps << ',' << r.grad_steps << ',' << fmt_double(r.eval_return_mean) << ','
     << fmt_double(r.eval_return_median) << ',' << fmt_double(r.eval_success) << ','
     << fmt_double(r.actor_loss) << ',' << fmt_double(r.critic_loss) << ','
     << fmt_double(r.alpha) << ',' << fmt_double(r.epsilon) << ',' << fmt_double(r.delta) << ','
     << fmt_double(r.prior_fraction);
  return os.str();
}

struct HighLevelTrainResult {
  HighLevel hl;
  std::vector<RunRow> rows;
  long prior_calls = 0;
  double final_eval_mean = 0.0;
};

struct EvalStats {
  double mean = 0.0;
  double median = 0.0;
  double success = 0.0;
};

namespace detail {

inline std::vector<double> proprio_of(const std::vector<double>& obs, int proprio_dim) {
  return {obs.begin(), obs.begin() + proprio_dim};
}

// Deterministic evaluation on fixed per-instance seeds: the actor takes mean
// actions; option extensions draw from a per-episode stream (or take mixture
// means), so repeated evaluations see identical conditions.
inline EvalStats evaluate(const HighLevel& hl, const lowlevel::LowLevel& pol,
                          const prior::PriorModel* pm, long* prior_calls) {
  const HighLevelConfig& cfg = hl.cfg;
  if (cfg.integration == Integration::Options && cfg.k_opt > 1 && pm == nullptr)
    throw ConfigError("evaluate: option extensions need the sequence prior");
  CounterRng root(cfg.seed);
  std::vector<double> returns;
  int successes = 0;
  const int P = pol.proprio_dim();
  for (int ep = 0; ep < cfg.eval_episodes; ++ep) {
    world::TaskEnv env(cfg.task, pol.wp);
    CounterRng ep_rng = root.split("eval-rng").split(static_cast<uint64_t>(ep));
    std::vector<double> obs = env.reset(root.split("eval-ep").split(static_cast<uint64_t>(ep)).next_u64());
    double ret = 0.0;
    PriorContext ctx(cfg.ctx_len);
    std::optional<prior::RolloutSession> sess;
    std::vector<double> z;
    int opt_i = 0;
    bool alive = true;
    int repeat_left = 0;
    while (alive) {
      if (cfg.integration == Integration::Options && cfg.k_opt > 1) {
        if (opt_i == 0) {
          z = hl.actor.act_mean(obs);
          auto rows = ctx.rows();
          if (rows.empty()) {
            sess.emplace(*pm);
          } else {
            std::vector<double> flat;
            for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
            sess.emplace(*pm, Tensor::from({1, static_cast<int>(rows.size()), cfg.d_z},
                                           std::move(flat)));
          }
          sess->push(z);
        } else {
          if (prior_calls != nullptr) ++*prior_calls;
          z = cfg.option_mean_mode ? mixture_mean(sess->density(0))
                                   : prior::mdn_sample(sess->density(0), 1.0, 1.0, ep_rng);
          sess->push(z);
        }
        opt_i = (opt_i + 1) % cfg.k_opt;
      } else if (cfg.integration == Integration::Repeat) {
        if (repeat_left == 0) {
          z = hl.actor.act_mean(obs);
          repeat_left = 2;
        }
        --repeat_left;
      } else {
        z = hl.actor.act_mean(obs);
      }
      ctx.push(z);
      world::StepResult sr = env.step(pol.act(proprio_of(obs, P), z));
      ret += sr.reward;
      obs = sr.obs;
      alive = !sr.done && !sr.truncated;
    }
    returns.push_back(ret);
    successes += env.succeeded() ? 1 : 0;
  }
  std::sort(returns.begin(), returns.end());
  EvalStats st;
  for (double r : returns) st.mean += r;
  st.mean /= returns.size();
  size_t n = returns.size();
  st.median = n % 2 == 1 ? returns[n / 2] : 0.5 * (returns[n / 2 - 1] + returns[n / 2]);
  st.success = static_cast<double>(successes) / static_cast<double>(cfg.eval_episodes);
  return st;
}

}  // namespace detail

inline HighLevelTrainResult train_highlevel(const HighLevelConfig& cfg,
                                            const lowlevel::LowLevel& pol,
                                            const prior::PriorModel* pm) {
  const bool needs_prior = cfg.integration == Integration::Explore ||
                           cfg.integration == Integration::Regularize ||
                           (cfg.integration == Integration::Options && cfg.k_opt > 1);
  if (needs_prior && pm == nullptr)
    throw ConfigError("train_highlevel: integration '" + integration_name(cfg.integration) +
                      "' needs a trained sequence prior");
  if (pol.cfg.d_z != cfg.d_z)
    throw ConfigError("train_highlevel: latent width differs between policy and learner");
  if (pm != nullptr && pm->cfg.d_z != cfg.d_z)
    throw ConfigError("train_highlevel: latent width differs between prior and learner");
  if (cfg.k_opt < 1) throw ConfigError("train_highlevel: option length must be >= 1");

  world::TaskEnv env(cfg.task, pol.wp);
  CounterRng root(cfg.seed);
  CounterRng init_rng = root.split("init");

  HighLevelTrainResult res;
  res.hl = HighLevel::make(cfg, env.obs_dim(), init_rng);
  HighLevel& hl = res.hl;

  nn::NamedTensors actor_ps, critic_ps;
  hl.actor.reg(actor_ps);
  hl.q1.reg(critic_ps, "q1");
  hl.q2.reg(critic_ps, "q2");
  Adam actor_opt(actor_ps.tensors(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0});
  Adam critic_opt(critic_ps.tensors(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0});
  Adam alpha_opt({hl.log_alpha}, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0});

  const bool use_segments = cfg.integration == Integration::Options && cfg.k_opt > 1;
  const bool store_ctx = cfg.integration == Integration::Regularize;
  TransitionBuffer tbuf(cfg.buffer_size, env.obs_dim(), cfg.d_z,
                        store_ctx ? cfg.ctx_len : 0);
  SegmentBuffer sbuf(cfg.buffer_size, env.obs_dim(), cfg.d_z, cfg.k_opt);

  CounterRng ep_seed_rng = root.split("episodes");
  CounterRng warmup_rng = root.split("warmup");
  CounterRng act_rng = root.split("actor-noise");
  CounterRng explore_rng = root.split("explore");
  CounterRng batch_rng = root.split("batch");
  CounterRng update_rng = root.split("update-noise");
  CounterRng reg_rng = root.split("reg-prior");

  Explorer explorer(pm, cfg.ctx_len, cfg.burst_lambda);
  const int P = pol.proprio_dim();

  long env_steps = 0, grad_steps = 0;
  double acc_actor = 0, acc_critic = 0;
  long acc_updates = 0, prior_src_steps = 0, steps_since_row = 0;

  auto make_row = [&](const EvalStats& ev) {
    RunRow row;
    row.env_steps = env_steps;
    row.grad_steps = grad_steps;
    row.eval_return_mean = ev.mean;
    row.eval_return_median = ev.median;
    row.eval_success = ev.success;
    row.actor_loss = acc_updates > 0 ? acc_actor / acc_updates : 0.0;
    row.critic_loss = acc_updates > 0 ? acc_critic / acc_updates : 0.0;
    row.alpha = hl.alpha();
    row.epsilon = cfg.integration == Integration::Explore
                      ? annealed(cfg.epsilon_init, env_steps, cfg.epsilon_anneal)
                      : 0.0;
    row.delta = cfg.integration == Integration::Regularize
                    ? annealed(cfg.delta_init, env_steps, cfg.delta_anneal)
                    : 0.0;
    row.prior_fraction =
        steps_since_row > 0 ? static_cast<double>(prior_src_steps) / steps_since_row : 0.0;
    res.rows.push_back(row);
    acc_actor = acc_critic = 0;
    acc_updates = 0;
    prior_src_steps = 0;
    steps_since_row = 0;
  };

  auto grad_cycle = [&] {
    long have = use_segments ? sbuf.size() : tbuf.size();
    if (env_steps < cfg.warmup || have < cfg.batch) return;
    for (int u = 0; u < cfg.grad_steps_per_cycle; ++u) {
      Tensor next_noise = Tensor::randn({cfg.batch, cfg.d_z}, update_rng);
      Tensor act_noise = Tensor::randn({cfg.batch, cfg.d_z}, update_rng);
      double critic_value, actor_value, mean_logp;
      if (use_segments) {
        SegmentBatch b = sbuf.sample(cfg.batch, cfg.gamma, batch_rng);
        Tensor y = option_targets(hl, b, next_noise);
        critic_opt.zero_grad();
        CriticLossOut cl = critic_loss_graph(hl, b.s, b.z, &b.step_index, y);
        backward(cl.loss);
        critic_opt.step();
        actor_opt.zero_grad();
        ActorLossOut al = actor_loss_graph(hl, b.s, act_noise, nullptr, 0.0, false);
        backward(al.loss);
        actor_opt.step();
        critic_value = cl.value;
        actor_value = al.value;
        mean_logp = al.mean_log_prob;
      } else {
        std::vector<std::vector<std::vector<double>>> ctxs;
        TransitionBatch b = tbuf.sample(cfg.batch, batch_rng, store_ctx ? &ctxs : nullptr);
        Tensor y = sac_targets(hl, b, next_noise);
        critic_opt.zero_grad();
        CriticLossOut cl = critic_loss_graph(hl, b.s, b.z, nullptr, y);
        backward(cl.loss);
        critic_opt.step();

        Tensor z0;
        double delta = 0.0;
        if (store_ctx) {
          delta = annealed(cfg.delta_init, env_steps, cfg.delta_anneal);
          if (delta != 0.0) {
            res.prior_calls += cfg.batch;
            auto dens = prior::next_densities(*pm, ctxs);
            std::vector<double> zd;
            zd.reserve(static_cast<size_t>(cfg.batch) * cfg.d_z);
            for (const auto& md : dens) {
              auto zrow = prior::mdn_sample(md, 1.0, 1.0, reg_rng);
              zd.insert(zd.end(), zrow.begin(), zrow.end());
            }
            z0 = Tensor::from({cfg.batch, cfg.d_z}, std::move(zd));
          }
        }
        actor_opt.zero_grad();
        ActorLossOut al = actor_loss_graph(hl, b.s, act_noise,
                                           delta != 0.0 ? &z0 : nullptr, delta,
                                           cfg.literal_reg_sign);
        backward(al.loss);
        actor_opt.step();
        critic_value = cl.value;
        actor_value = al.value;
        mean_logp = al.mean_log_prob;
      }
      check_finite("critic loss", critic_value);
      check_finite("actor loss", actor_value);
      check_finite("actor log-density", mean_logp);
      if (cfg.auto_alpha) {
        alpha_opt.zero_grad();
        Tensor aloss = scale(hl.log_alpha, -(mean_logp + cfg.target_entropy()));
        backward(aloss);
        alpha_opt.step();
      }
      hl.polyak_update(cfg.tau);
      acc_critic += critic_value;
      acc_actor += actor_value;
      ++acc_updates;
      ++grad_steps;
    }
  };

  make_row(detail::evaluate(hl, pol, pm, &res.prior_calls));

  while (env_steps < cfg.budget) {
    std::vector<double> obs = env.reset(ep_seed_rng.next_u64());
    explorer.reset();
    // Open option bookkeeping: states and rewards since the option started.
    std::vector<std::vector<double>> opt_states;
    std::vector<double> opt_rewards, opt_z;
    std::optional<prior::RolloutSession> opt_sess;
    // Action-repeat bookkeeping.
    std::vector<double> rep_obs, rep_z;
    double rep_reward = 0.0;
    int rep_phase = 0;
    bool rep_done = false;

    auto flush_option = [&](const std::vector<double>& end_obs, bool done_flag) {
      for (size_t i = 0; i < opt_states.size(); ++i) {
        std::vector<double> rewards(opt_rewards.begin() + static_cast<long>(i),
                                    opt_rewards.end());
        sbuf.push(static_cast<int>(i), opt_states[i], opt_z, rewards, end_obs, done_flag);
      }
      opt_states.clear();
      opt_rewards.clear();
      opt_sess.reset();
    };

    // Uniform latents during warmup, actor samples afterwards.
    auto fresh_z = [&](bool in_warmup) {
      if (!in_warmup) return hl.actor.act_sample(obs, act_rng);
      std::vector<double> z(static_cast<size_t>(cfg.d_z));
      for (auto& v : z) v = warmup_rng.uniform(-1.0, 1.0);
      return z;
    };

    auto open_option = [&](const std::vector<double>& z0) {
      auto rows = explorer.context().rows();
      if (rows.empty()) {
        opt_sess.emplace(*pm);
      } else {
        std::vector<double> flat;
        for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
        opt_sess.emplace(*pm, Tensor::from({1, static_cast<int>(rows.size()), cfg.d_z},
                                           std::move(flat)));
      }
      opt_sess->push(z0);
      opt_z = z0;
    };

    bool alive = true;
    while (alive && env_steps < cfg.budget) {
      const bool in_warmup = env_steps < cfg.warmup;
      // Contexts for the regularizer are captured before this step's latent
      // is appended: they are what the prior would condition on here.
      std::vector<std::vector<double>> ctx_snapshot;
      if (store_ctx) ctx_snapshot = explorer.context().rows();

      std::vector<double> z;
      bool from_prior = false;
      bool ring_pushed = false;
      switch (cfg.integration) {
        case Integration::Explore:
          if (in_warmup) {
            z = fresh_z(true);
          } else {
            double eps = annealed(cfg.epsilon_init, env_steps, cfg.epsilon_anneal);
            z = explorer.step(eps, [&] { return hl.actor.act_sample(obs, act_rng); },
                              explore_rng, &from_prior);
            if (from_prior) ++res.prior_calls;
            ring_pushed = true;
          }
          break;
        case Integration::Options:
          if (cfg.k_opt > 1) {
            if (opt_states.empty()) {
              open_option(fresh_z(in_warmup));
              z = opt_z;
            } else {
              ++res.prior_calls;
              from_prior = true;
              z = cfg.option_mean_mode ? mixture_mean(opt_sess->density(0))
                                       : prior::mdn_sample(opt_sess->density(0), 1.0, 1.0,
                                                           explore_rng);
              opt_sess->push(z);
            }
          } else {
            z = fresh_z(in_warmup);
          }
          break;
        case Integration::Repeat:
          if (rep_phase == 0) {
            z = fresh_z(in_warmup);
            rep_obs = obs;
            rep_z = z;
            rep_reward = 0.0;
            rep_done = false;
          } else {
            z = rep_z;
          }
          break;
        default:
          z = fresh_z(in_warmup);
          break;
      }
      if (!ring_pushed) explorer.record_executed(z);

      world::StepResult sr = env.step(pol.act(detail::proprio_of(obs, P), z));
      ++env_steps;
      ++steps_since_row;
      if (from_prior) ++prior_src_steps;
      const bool ep_end = sr.done || sr.truncated;

      if (use_segments) {
        opt_states.push_back(obs);
        opt_rewards.push_back(sr.reward);
        if (static_cast<int>(opt_states.size()) == cfg.k_opt)
          flush_option(sr.obs, sr.done);
        else if (ep_end)
          flush_option(sr.obs, true);
      } else if (cfg.integration == Integration::Repeat) {
        rep_reward += sr.reward;
        rep_done = rep_done || sr.done;
        ++rep_phase;
        if (rep_phase == 2 || ep_end) {
          tbuf.push(rep_obs, rep_z, rep_reward, sr.obs, rep_done, {});
          rep_phase = 0;
        }
      } else {
        tbuf.push(obs, z, sr.reward, sr.obs, sr.done, ctx_snapshot);
      }

      obs = sr.obs;
      alive = !ep_end;
      if (env_steps % cfg.samples_between_updates == 0) grad_cycle();
      if (env_steps % cfg.eval_every == 0)
        make_row(detail::evaluate(hl, pol, pm, &res.prior_calls));
    }
    if (use_segments && !opt_states.empty()) flush_option(obs, true);
  }

  res.final_eval_mean = res.rows.empty() ? 0.0 : res.rows.back().eval_return_mean;
  return res;
}

// ---------------------------------------------------------------- storage

inline void save_highlevel(const std::string& path, HighLevel& hl,
                           const nlohmann::json& extra_meta = {}) {
  nlohmann::ordered_json meta;
  meta["kind"] = "highlevel";
  meta["config"] = hl.cfg.to_json();
  meta["obs_dim"] = hl.obs_dim;
  if (!extra_meta.is_null() && !extra_meta.empty())
    for (auto& [k, val] : extra_meta.items()) meta[k] = val;
  nn::NamedTensors ps = hl.params();
  ckpt::save_checkpoint(path, ps, meta);
}

inline HighLevel load_highlevel(const std::string& path) {
  nlohmann::json meta;
  nn::NamedTensors stored = ckpt::load_checkpoint(path, &meta);
  if (meta.value("kind", "") != "highlevel")
    throw FormatError(path + ": checkpoint kind is not 'highlevel'");
  HighLevelConfig cfg = HighLevelConfig::from_json(meta.at("config"));
  CounterRng dummy(0);
  HighLevel hl = HighLevel::make(cfg, meta.at("obs_dim").get<int>(), dummy);
  nn::NamedTensors ps = hl.params();
  nn::copy_into(stored, ps);
  return hl;
}

}  // namespace lsp::highlevel
