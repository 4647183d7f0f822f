#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "helpers.hpp"
#include "lsp/highlevel.hpp"

using namespace lsp;
using namespace lsp::highlevel;

namespace {

HighLevelConfig tiny_cfg(Integration mode, int d_z, const std::vector<int>& hidden,
                         uint64_t seed) {
  HighLevelConfig c;
  c.integration = mode;
  c.d_z = d_z;
  c.actor_hidden = hidden;
  c.critic_hidden = hidden;
  c.seed = seed;
  return c;
}

void zero_params(nn::NamedTensors ps) {
  for (auto& [name, t] : ps.items) std::fill(t.data().begin(), t.data().end(), 0.0);
}

// The output bias is the only parameter with exactly `numel` entries in the
// small nets used here.
Tensor find_by_numel(nn::NamedTensors ps, int numel) {
  for (auto& [name, t] : ps.items)
    if (static_cast<int>(t.numel()) == numel) return t;
  throw std::logic_error("find_by_numel: no match");
}

double squashed_logp_scalar(double noise, double mu, double log_std) {
  double u = mu + std::exp(log_std) * noise;
  double t = std::tanh(u);
  return -0.5 * noise * noise - 0.5 * std::log(2.0 * kPi) - log_std - std::log(1.0 - t * t);
}

prior::PriorModel tiny_prior(int d_z, uint64_t seed, int max_len = 32) {
  prior::PriorConfig pc;
  pc.d_z = d_z;
  pc.d_model = 8;
  pc.blocks = 1;
  pc.hidden = 12;
  pc.mixtures = 2;
  pc.max_len = max_len;
  CounterRng rng(seed);
  return prior::PriorModel::make(pc, rng);
}

}  // namespace

TEST_CASE("squashed actor density integrates to one and matches its samples", "[highlevel]") {
  const int obs_dim = 3;
  CounterRng rng(11);
  Actor a = Actor::make(obs_dim, 1, {8}, rng);

  auto integral_at = [&](const std::vector<double>& obs_row) {
    const int n = 8000;  // Simpson intervals
    const double lim = 1.0 - 1e-6;
    std::vector<double> s_data, z_data;
    for (int i = 0; i <= n; ++i) {
      s_data.insert(s_data.end(), obs_row.begin(), obs_row.end());
      z_data.push_back(-lim + 2.0 * lim * i / n);
    }
    NoGradGuard ng;
    Tensor logp = a.log_prob_of(Tensor::from({n + 1, obs_dim}, std::move(s_data)),
                                Tensor::from({n + 1, 1}, std::move(z_data)));
    const auto& lp = logp.data();
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
      double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      acc += w * std::exp(lp[static_cast<size_t>(i)]);
    }
    return acc * (2.0 * lim / n) / 3.0;
  };

  // Random heads, scaled down so the pre-squash std stays near one.
  {
    nn::NamedTensors ps;
    a.reg(ps);
    for (auto& [name, t] : ps.items)
      for (auto& v : t.data()) v *= 0.1;
  }
  REQUIRE(integral_at({0.3, -0.7, 1.1}) == Catch::Approx(1.0).margin(1e-3));

  // Pinned off-center heads: mean tanh(0.8), std exp(-0.7).
  {
    nn::NamedTensors ps;
    a.reg(ps);
    zero_params(ps);
    Tensor bias = find_by_numel(ps, 2);
    bias.data() = {0.8, -0.7};
  }
  REQUIRE(integral_at({-1.0, 0.4, 0.2}) == Catch::Approx(1.0).margin(1e-3));

  // Reparameterized samples report the same density as the fixed-latent path.
  CounterRng rng2(12);
  Actor b = Actor::make(4, 3, {8}, rng2);
  Tensor s = Tensor::rand_uniform({16, 4}, rng2, -1.0, 1.0);
  Tensor noise = Tensor::randn({16, 3}, rng2);
  NoGradGuard ng;
  SquashedSample smp = b.sample(s, noise);
  Tensor again = b.log_prob_of(s, smp.z);
  REQUIRE(testutil::max_abs_diff(smp.log_prob.data(), again.data()) < 1e-9);
}

TEST_CASE("actor, critic and regularized losses pass finite-difference checks", "[highlevel]") {
  HighLevelConfig cfg = tiny_cfg(Integration::None, 2, {6}, 21);
  CounterRng rng(21);
  HighLevel hl = HighLevel::make(cfg, 4, rng);
  CounterRng dr(22);
  Tensor noise = Tensor::randn({3, 2}, dr);
  Tensor z0 = Tensor::rand_uniform({3, 2}, dr, -0.6, 0.6);

  testutil::GradCheck gc{-1.5, 1.5, 8, 1e-5, 2e-6, 31};
  gc.run("sampled log density wrt observations", {3, 4},
         [&](const Tensor& x) { return hl.actor.sample(x, noise).log_prob; });
  gc.run("fixed-latent log density wrt observations", {3, 4},
         [&](const Tensor& x) { return hl.actor.log_prob_of(x, z0); });

  Tensor s_fix = Tensor::rand_uniform({3, 4}, dr, -1.0, 1.0);
  gc.run("critic value wrt latents", {3, 2},
         [&](const Tensor& x) { return hl.q_value(hl.q1, s_fix, x, 0); });

  Tensor y_fix = Tensor::rand_uniform({3}, dr, -1.0, 1.0);
  gc.run("critic regression loss wrt latents", {3, 2}, [&](const Tensor& x) {
    return critic_loss_graph(hl, s_fix, x, nullptr, y_fix).loss;
  });

  gc.run("actor loss wrt observations", {3, 4}, [&](const Tensor& x) {
    return actor_loss_graph(hl, x, noise, nullptr, 0.0, false).loss;
  });
  gc.run("regularized actor loss wrt observations", {3, 4}, [&](const Tensor& x) {
    return actor_loss_graph(hl, x, noise, &z0, 0.37, false).loss;
  });

  // Option critic with mixed step indices.
  HighLevelConfig ocfg = tiny_cfg(Integration::Options, 2, {6}, 23);
  ocfg.k_opt = 3;
  CounterRng orng(23);
  HighLevel ohl = HighLevel::make(ocfg, 4, orng);
  std::vector<int> idx{0, 2, 1};
  gc.run("step-conditioned critic loss wrt latents", {3, 2}, [&](const Tensor& x) {
    return critic_loss_graph(ohl, s_fix, x, &idx, y_fix).loss;
  });
}

TEST_CASE("temperature moves toward the entropy target", "[highlevel]") {
  HighLevelConfig cfg = tiny_cfg(Integration::None, 8, {6}, 31);
  CounterRng rng(31);
  HighLevel hl = HighLevel::make(cfg, 4, rng);
  REQUIRE(cfg.target_entropy() == -8.0);

  auto alpha_after_step = [&](double mean_logp) {
    hl.log_alpha.data() = {0.0};
    Adam opt({hl.log_alpha}, AdamConfig{1e-2, 0.9, 0.999, 1e-8, 0});
    opt.zero_grad();
    Tensor aloss = scale(hl.log_alpha, -(mean_logp + cfg.target_entropy()));
    backward(aloss);
    double grad = hl.log_alpha.grad()[0];
    opt.step();
    REQUIRE(grad == Catch::Approx(-(mean_logp + cfg.target_entropy())).margin(1e-12));
    return hl.alpha();
  };

  // Entropy below target (very confident policy): alpha rises.
  REQUIRE(alpha_after_step(20.0) > 1.0);
  // Entropy above target: alpha falls.
  REQUIRE(alpha_after_step(-20.0) < 1.0);
}

TEST_CASE("critic targets match hand-computed values and use the pessimistic critic",
          "[highlevel]") {
  HighLevelConfig cfg = tiny_cfg(Integration::None, 1, {3}, 41);
  cfg.gamma = 0.9;
  CounterRng rng(41);
  HighLevel hl = HighLevel::make(cfg, 2, rng);
  {
    nn::NamedTensors ap;
    hl.actor.reg(ap);
    zero_params(ap);
    nn::NamedTensors q1p, q2p;
    hl.q1.reg(q1p, "q1");
    hl.q2.reg(q2p, "q2");
    zero_params(q1p);
    zero_params(q2p);
    find_by_numel(q1p, 1).data() = {0.7};
    find_by_numel(q2p, 1).data() = {0.4};
    hl.copy_targets();
    hl.log_alpha.data() = {std::log(0.5)};
  }

  TransitionBatch b;
  b.s = Tensor::from({2, 2}, {0.2, -0.1, 0.5, 0.3});
  b.z = Tensor::from({2, 1}, {0.1, -0.2});
  b.r = Tensor::from({2}, {1.0, -0.5});
  b.s2 = Tensor::from({2, 2}, {0.0, 0.4, -0.3, 0.2});
  b.done = Tensor::from({2}, {0.0, 1.0});
  Tensor noise = Tensor::from({2, 1}, {0.3, -1.2});

  Tensor y = sac_targets(hl, b, noise);
  double logp0 = squashed_logp_scalar(0.3, 0.0, 0.0);
  double y0 = 1.0 + 0.9 * (0.4 - 0.5 * logp0);
  REQUIRE(y.data()[0] == Catch::Approx(y0).margin(1e-12));
  // A terminal transition regresses on the reward alone, exactly.
  REQUIRE(y.data()[1] == -0.5);

  // Actor loss on the zeroed heads: mean(alpha*logp - min(Q1,Q2)).
  ActorLossOut al = actor_loss_graph(hl, b.s, noise, nullptr, 0.0, false);
  double logp1 = squashed_logp_scalar(-1.2, 0.0, 0.0);
  double want = 0.5 * (0.5 * logp0 - 0.4) + 0.5 * (0.5 * logp1 - 0.4);
  REQUIRE(al.value == Catch::Approx(want).margin(1e-12));
  REQUIRE(al.mean_log_prob == Catch::Approx(0.5 * (logp0 + logp1)).margin(1e-12));
}

TEST_CASE("one-step options reproduce flat targets; longer options match the discounted oracle",
          "[highlevel]") {
  // k_opt = 1 drops the step input entirely, so both target paths share nets.
  HighLevelConfig cfg = tiny_cfg(Integration::Options, 2, {5}, 51);
  cfg.k_opt = 1;
  cfg.gamma = 0.97;
  CounterRng rng(51);
  HighLevel hl = HighLevel::make(cfg, 3, rng);
  REQUIRE(hl.onehot_dim == 0);
  hl.log_alpha.data() = {std::log(0.3)};

  CounterRng dr(52);
  TransitionBatch b;
  b.s = Tensor::rand_uniform({3, 3}, dr, -1.0, 1.0);
  b.z = Tensor::rand_uniform({3, 2}, dr, -0.9, 0.9);
  b.r = Tensor::from({3}, {0.5, -1.0, 2.0});
  b.s2 = Tensor::rand_uniform({3, 3}, dr, -1.0, 1.0);
  b.done = Tensor::from({3}, {0.0, 1.0, 0.0});
  Tensor noise = Tensor::randn({3, 2}, dr);

  SegmentBatch seg;
  seg.s = b.s;
  seg.z = b.z;
  seg.step_index = {0, 0, 0};
  seg.rew_sum = Tensor::from({3}, b.r.data());
  NoGradGuard ng;
  seg.disc = scale(sub(Tensor::filled({3}, 1.0), b.done), cfg.gamma);
  seg.s2 = b.s2;

  Tensor y_flat = sac_targets(hl, b, noise);
  Tensor y_opt = option_targets(hl, seg, noise);
  for (int i = 0; i < 3; ++i)
    REQUIRE(std::fabs(y_flat.data()[i] - y_opt.data()[i]) <= 1e-10);

  // Two-step options against scalar arithmetic, on constant-output nets.
  HighLevelConfig c2 = tiny_cfg(Integration::Options, 1, {3}, 53);
  c2.k_opt = 2;
  c2.gamma = 0.8;
  CounterRng rng2(53);
  HighLevel h2 = HighLevel::make(c2, 2, rng2);
  REQUIRE(h2.onehot_dim == 2);
  {
    nn::NamedTensors ap;
    h2.actor.reg(ap);
    zero_params(ap);
    nn::NamedTensors q1p, q2p;
    h2.q1.reg(q1p, "q1");
    h2.q2.reg(q2p, "q2");
    zero_params(q1p);
    zero_params(q2p);
    find_by_numel(q1p, 1).data() = {0.6};
    find_by_numel(q2p, 1).data() = {0.9};
    h2.copy_targets();
    h2.log_alpha.data() = {std::log(0.25)};
  }
  SegmentBatch sg;
  sg.s = Tensor::from({3, 2}, {0.1, 0.2, -0.3, 0.0, 0.5, -0.5});
  sg.z = Tensor::from({3, 1}, {0.3, 0.3, -0.2});
  sg.step_index = {0, 1, 0};
  sg.rew_sum = Tensor::from({3}, {1.0 + 0.8 * 2.0, 2.0, 1.5});
  sg.disc = Tensor::from({3}, {0.64, 0.8, 0.0});
  sg.s2 = Tensor::from({3, 2}, {0.0, 0.1, 0.0, 0.1, 0.2, 0.2});
  Tensor n2 = Tensor::from({3, 1}, {0.2, -0.4, 1.0});
  Tensor y2 = option_targets(h2, sg, n2);
  double v0 = 0.6 - 0.25 * squashed_logp_scalar(0.2, 0.0, 0.0);
  double v1 = 0.6 - 0.25 * squashed_logp_scalar(-0.4, 0.0, 0.0);
  REQUIRE(y2.data()[0] == Catch::Approx(2.6 + 0.64 * v0).margin(1e-12));
  REQUIRE(y2.data()[1] == Catch::Approx(2.0 + 0.8 * v1).margin(1e-12));
  // A truncated segment keeps only its discounted reward sum.
  REQUIRE(y2.data()[2] == 1.5);

  // Step indices outside the option length are rejected.
  REQUIRE_THROWS_AS(h2.q_value(h2.q1, sg.s, sg.z, 2), ConfigError);
  std::vector<int> bad{0, 0, 2};
  bad[2] = 5;
  REQUIRE_THROWS_AS(critic_loss_graph(h2, sg.s, sg.z, &bad, sg.rew_sum), ConfigError);
}

TEST_CASE("support matching and the literal sign differ only in the prior term", "[highlevel]") {
  HighLevelConfig cfg = tiny_cfg(Integration::Regularize, 2, {6}, 61);
  CounterRng rng(61);
  HighLevel hl = HighLevel::make(cfg, 4, rng);
  CounterRng dr(62);
  Tensor s = Tensor::rand_uniform({5, 4}, dr, -1.0, 1.0);
  Tensor noise = Tensor::randn({5, 2}, dr);
  Tensor z0 = Tensor::rand_uniform({5, 2}, dr, -0.6, 0.6);

  double base = actor_loss_graph(hl, s, noise, nullptr, 0.0, false).value;
  double sup = actor_loss_graph(hl, s, noise, &z0, 0.4, false).value;
  double lit = actor_loss_graph(hl, s, noise, &z0, 0.4, true).value;
  double m;
  {
    NoGradGuard ng;
    m = mean(hl.actor.log_prob_of(s, z0)).item();
  }
  REQUIRE(sup == Catch::Approx(base - 0.4 * m).margin(1e-12));
  REQUIRE(lit == Catch::Approx(base + 0.4 * m).margin(1e-12));
  // Zero weight reproduces the plain loss bit for bit.
  REQUIRE(actor_loss_graph(hl, s, noise, &z0, 0.0, false).value == base);

  // With the critics frozen, a support-matching step raises the density the
  // actor assigns to the prior's samples.
  hl.log_alpha.data() = {std::log(0.01)};
  nn::NamedTensors ap;
  hl.actor.reg(ap);
  Adam opt(ap.tensors(), AdamConfig{3e-3, 0.9, 0.999, 1e-8, 0});
  double before;
  {
    NoGradGuard ng;
    before = mean(hl.actor.log_prob_of(s, z0)).item();
  }
  opt.zero_grad();
  ActorLossOut al = actor_loss_graph(hl, s, noise, &z0, 10.0, false);
  backward(al.loss);
  opt.step();
  double after;
  {
    NoGradGuard ng;
    after = mean(hl.actor.log_prob_of(s, z0)).item();
  }
  REQUIRE(after > before);
}

TEST_CASE("replay buffers evict oldest first and reproduce stored rows", "[highlevel]") {
  // FIFO eviction: 9 pushes into capacity 5 keep rewards 4..8 only.
  TransitionBuffer tb(5, 1, 1, 0);
  for (int i = 0; i < 9; ++i)
    tb.push({0.1 * i}, {0.0}, static_cast<double>(i), {0.2 * i}, false, {});
  REQUIRE(tb.size() == 5);
  CounterRng rng(71);
  std::set<int> seen;
  for (int trial = 0; trial < 60; ++trial) {
    TransitionBatch b = tb.sample(5, rng);
    for (double r : b.r.data()) {
      REQUIRE(r >= 4.0);
      REQUIRE(r <= 8.0);
      seen.insert(static_cast<int>(r));
    }
  }
  REQUIRE(seen.size() == 5);

  // Stored contexts come back oldest to newest, truncated to the ring size.
  TransitionBuffer cb(1, 2, 2, 3);
  std::vector<std::vector<double>> ctx{{0.1, 0.2}, {0.3, 0.4}, {0.5, 0.6}, {0.7, 0.8}};
  cb.push({1.0, 2.0}, {0.9, -0.9}, 3.0, {4.0, 5.0}, true, ctx);
  std::vector<std::vector<std::vector<double>>> got;
  TransitionBatch b = cb.sample(2, rng, &got);
  REQUIRE(got.size() == 2);
  for (const auto& rows : got) {
    REQUIRE(rows.size() == 3);
    REQUIRE(rows[0] == std::vector<double>{0.3, 0.4});
    REQUIRE(rows[2] == std::vector<double>{0.7, 0.8});
  }
  REQUIRE(b.done.data()[0] == 1.0);
  cb.push({1.0, 2.0}, {0.9, -0.9}, 3.0, {4.0, 5.0}, false, {});
  cb.sample(1, rng, &got);
  REQUIRE(got[0].empty());

  // Segment rows: discounted sums, remaining discount, and the done mask.
  SegmentBuffer sb(1, 2, 1, 3);
  sb.push(1, {0.5, 0.6}, {0.2}, {2.0, 3.0}, {0.7, 0.8}, false);
  SegmentBatch sg = sb.sample(3, 0.5, rng);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(sg.step_index[static_cast<size_t>(i)] == 1);
    REQUIRE(sg.rew_sum.data()[static_cast<size_t>(i)] == Catch::Approx(3.5).margin(1e-15));
    REQUIRE(sg.disc.data()[static_cast<size_t>(i)] == Catch::Approx(0.25).margin(1e-15));
  }
  sb.push(2, {0.5, 0.6}, {0.2}, {4.0}, {0.7, 0.8}, true);
  REQUIRE_THROWS_AS(sb.push(2, {0.5, 0.6}, {0.2}, {4.0, 1.0}, {0.7, 0.8}, false), ConfigError);
}

TEST_CASE("schedules anneal linearly and reach exactly zero", "[highlevel]") {
  REQUIRE(annealed(0.1, 0, 200000) == 0.1);
  REQUIRE(annealed(0.1, 100000, 200000) == Catch::Approx(0.05).margin(1e-15));
  REQUIRE(annealed(0.1, 200000, 200000) == 0.0);
  REQUIRE(annealed(0.1, 300000, 200000) == 0.0);
  REQUIRE(annealed(0.01, 49999, 50000) > 0.0);
  REQUIRE(annealed(0.01, 50000, 50000) == 0.0);
}

TEST_CASE("explorer bursts follow the prior and never straddle resets", "[highlevel]") {
  prior::PriorModel pm = tiny_prior(2, 81);

  // Epsilon zero: the actor is the only source.
  {
    Explorer ex(&pm, 4, 5.0);
    CounterRng rng(82);
    std::vector<double> marker{0.5, -0.5};
    for (int t = 0; t < 300; ++t) {
      bool from_prior = true;
      std::vector<double> z = ex.step(0.0, [&] { return marker; }, rng, &from_prior);
      REQUIRE_FALSE(from_prior);
      REQUIRE(z == marker);
    }
    REQUIRE(ex.prior_steps() == 0);
    REQUIRE(ex.bursts_started() == 0);
    REQUIRE(ex.context().rows().size() == 4);
  }

  // Burst statistics against the renewal oracle: burst lengths are
  // max(1, Poisson(5)) and the long-run prior fraction follows
  // eps*E / (eps*E + 1 - eps).
  {
    Explorer ex(&pm, 4, 5.0);
    CounterRng rng(83);
    CounterRng arng(84);
    const double eps = 0.25;
    const int steps = 10000;
    long prior_steps = 0;
    auto actor = [&] {
      return std::vector<double>{arng.uniform(-0.9, 0.9), arng.uniform(-0.9, 0.9)};
    };
    for (int t = 0; t < steps; ++t) {
      bool from_prior = false;
      std::vector<double> z = ex.step(eps, actor, rng, &from_prior);
      if (from_prior) ++prior_steps;
      REQUIRE(std::fabs(z[0]) < 1.0);
      REQUIRE(std::fabs(z[1]) < 1.0);
    }
    REQUIRE(prior_steps == ex.prior_steps());
    double expect_len = 5.0 + std::exp(-5.0);
    double mean_len = static_cast<double>(ex.prior_steps()) /
                      static_cast<double>(ex.bursts_started());
    REQUIRE(mean_len == Catch::Approx(expect_len).epsilon(0.05));
    double expect_frac = eps * expect_len / (eps * expect_len + 1.0 - eps);
    double frac = static_cast<double>(prior_steps) / steps;
    REQUIRE(frac == Catch::Approx(expect_frac).epsilon(0.20));
  }

  // A reset cancels an in-flight burst.
  {
    Explorer ex(&pm, 4, 5.0);
    CounterRng rng(85);
    auto actor = [] { return std::vector<double>{0.0, 0.0}; };
    bool caught_mid_burst = false;
    for (int attempt = 0; attempt < 20 && !caught_mid_burst; ++attempt) {
      ex.step(1.0, actor, rng, nullptr);
      caught_mid_burst = ex.in_burst();
    }
    REQUIRE(caught_mid_burst);
    ex.reset();
    REQUIRE_FALSE(ex.in_burst());
    REQUIRE(ex.context().rows().empty());
    bool from_prior = true;
    ex.step(0.0, actor, rng, &from_prior);
    REQUIRE_FALSE(from_prior);
  }
}

TEST_CASE("mixed-length context batches match per-row rollout densities", "[highlevel]") {
  prior::PriorModel pm = tiny_prior(2, 91, 8);
  CounterRng rng(92);
  auto row = [&] { return std::vector<double>{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)}; };

  std::vector<std::vector<std::vector<double>>> ctxs;
  ctxs.push_back({});
  ctxs.push_back({row()});
  ctxs.push_back({row(), row(), row()});
  ctxs.push_back({row(), row(), row()});
  // Longer than the window: only the newest max_len-1 latents count.
  std::vector<std::vector<double>> long_ctx;
  for (int i = 0; i < 12; ++i) long_ctx.push_back(row());
  ctxs.push_back(long_ctx);

  std::vector<prior::MixtureDensity> batched = prior::next_densities(pm, ctxs);
  REQUIRE(batched.size() == 5);
  for (size_t i = 0; i < ctxs.size(); ++i) {
    prior::MixtureDensity ref;
    if (ctxs[i].empty()) {
      prior::RolloutSession sess(pm);
      ref = sess.density(0);
    } else {
      std::vector<double> flat;
      for (const auto& r : ctxs[i]) flat.insert(flat.end(), r.begin(), r.end());
      prior::RolloutSession sess(
          pm, Tensor::from({1, static_cast<int>(ctxs[i].size()), 2}, std::move(flat)));
      ref = sess.density(0);
    }
    REQUIRE(batched[i].logits == ref.logits);
    REQUIRE(batched[i].means == ref.means);
    REQUIRE(batched[i].log_stds == ref.log_stds);
  }
}

TEST_CASE("checkpoints restore the learner exactly", "[highlevel]") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "lsp_hl_ckpt_test";
  fs::create_directories(dir);
  std::string path = (dir / "hl.ckpt").string();

  HighLevelConfig cfg = tiny_cfg(Integration::Options, 3, {7}, 101);
  cfg.k_opt = 4;
  cfg.init_alpha = 0.5;
  CounterRng rng(101);
  HighLevel hl = HighLevel::make(cfg, 6, rng);
  hl.log_alpha.data() = {std::log(0.37)};
  save_highlevel(path, hl);

  HighLevel back = load_highlevel(path);
  REQUIRE(back.cfg.integration == Integration::Options);
  REQUIRE(back.cfg.k_opt == 4);
  REQUIRE(back.obs_dim == 6);
  REQUIRE(back.onehot_dim == 4);
  REQUIRE(back.alpha() == Catch::Approx(0.37).margin(1e-15));

  CounterRng dr(102);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> obs;
    for (int i = 0; i < 6; ++i) obs.push_back(dr.uniform(-1.0, 1.0));
    REQUIRE(hl.actor.act_mean(obs) == back.actor.act_mean(obs));
  }
  NoGradGuard ng;
  Tensor s = Tensor::rand_uniform({4, 6}, dr, -1.0, 1.0);
  Tensor z = Tensor::rand_uniform({4, 3}, dr, -0.9, 0.9);
  for (int i = 0; i < 4; ++i) {
    REQUIRE(hl.q_value(hl.q1, s, z, 1).data() == back.q_value(back.q1, s, z, 1).data());
    REQUIRE(hl.q_value(hl.tq2, s, z, 0).data() == back.q_value(back.tq2, s, z, 0).data());
  }

  nlohmann::ordered_json meta;
  meta["kind"] = "other";
  nn::NamedTensors ps = hl.params();
  ckpt::save_checkpoint((dir / "bad.ckpt").string(), ps, meta);
  REQUIRE_THROWS_AS(load_highlevel((dir / "bad.ckpt").string()), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("training smoke: determinism, prior accounting, gating", "[highlevel][slow]") {
  CounterRng prng(111);
  lowlevel::LowLevelConfig lc;
  lc.hidden = 32;
  lc.depth = 2;
  lowlevel::LowLevel pol = lowlevel::LowLevel::make(lc, world::WorldParams{}, prng);

  prior::PriorConfig pc;
  pc.d_z = 8;
  pc.d_model = 16;
  pc.blocks = 1;
  pc.hidden = 16;
  pc.mixtures = 2;
  pc.max_len = 16;
  CounterRng prng2(112);
  prior::PriorModel pm = prior::PriorModel::make(pc, prng2);

  HighLevelConfig base;
  base.budget = 600;
  base.warmup = 100;
  base.samples_between_updates = 50;
  base.grad_steps_per_cycle = 2;
  base.batch = 16;
  base.buffer_size = 500;
  base.eval_every = 300;
  base.eval_episodes = 2;
  base.actor_hidden = {12, 12};
  base.critic_hidden = {12, 12};
  base.ctx_len = 4;
  base.k_opt = 3;
  base.epsilon_init = 0.3;
  base.epsilon_anneal = 400;
  base.delta_anneal = 400;
  base.burst_lambda = 2.0;
  base.seed = 7;

  auto rows_csv = [](const HighLevelTrainResult& r) {
    std::string all;
    for (const auto& row : r.rows) all += run_row_csv(row) + "\n";
    return all;
  };

  SECTION("plain runs are deterministic and never touch the prior") {
    HighLevelConfig cfg = base;
    cfg.integration = Integration::None;
    HighLevelTrainResult a = train_highlevel(cfg, pol, nullptr);
    REQUIRE(a.rows.size() == 3);
    REQUIRE(a.prior_calls == 0);
    REQUIRE(a.rows.back().env_steps == 600);
    REQUIRE(a.rows.back().grad_steps == 22);
    REQUIRE(a.rows.back().epsilon == 0.0);
    REQUIRE(a.rows.back().delta == 0.0);
    REQUIRE(a.rows.back().prior_fraction == 0.0);
    for (const auto& row : a.rows) {
      REQUIRE(std::isfinite(row.actor_loss));
      REQUIRE(std::isfinite(row.critic_loss));
      REQUIRE(row.alpha > 0.0);
    }
    HighLevelTrainResult b = train_highlevel(cfg, pol, nullptr);
    REQUIRE(rows_csv(a) == rows_csv(b));
  }

  SECTION("exploration bursts draw from the prior and require it") {
    HighLevelConfig cfg = base;
    cfg.integration = Integration::Explore;
    REQUIRE_THROWS_AS(train_highlevel(cfg, pol, nullptr), ConfigError);
    HighLevelTrainResult r = train_highlevel(cfg, pol, &pm);
    REQUIRE(r.prior_calls > 0);
    REQUIRE(r.rows.size() == 3);
    // Rows 0 and 1 cover steps with a live epsilon; the last eval point is
    // past the anneal horizon.
    REQUIRE(r.rows[1].prior_fraction > 0.0);
    REQUIRE(r.rows.back().epsilon == 0.0);
  }

  SECTION("the regularizer samples the prior for every update batch") {
    HighLevelConfig cfg = base;
    cfg.integration = Integration::Regularize;
    REQUIRE_THROWS_AS(train_highlevel(cfg, pol, nullptr), ConfigError);
    HighLevelTrainResult r = train_highlevel(cfg, pol, &pm);
    REQUIRE(r.prior_calls >= 16);
    REQUIRE(r.rows[1].delta > 0.0);
    REQUIRE(r.rows.back().delta == 0.0);
  }

  SECTION("options extend actor latents through the prior") {
    HighLevelConfig cfg = base;
    cfg.integration = Integration::Options;
    REQUIRE_THROWS_AS(train_highlevel(cfg, pol, nullptr), ConfigError);
    HighLevelTrainResult r = train_highlevel(cfg, pol, &pm);
    REQUIRE(r.prior_calls > 0);
    REQUIRE(r.rows.size() == 3);

    // One-step options degenerate to the flat learner: no prior involved.
    HighLevelConfig c1 = base;
    c1.integration = Integration::Options;
    c1.k_opt = 1;
    HighLevelTrainResult r1 = train_highlevel(c1, pol, nullptr);
    REQUIRE(r1.prior_calls == 0);
  }

  SECTION("action repeat never consults the prior") {
    HighLevelConfig cfg = base;
    cfg.integration = Integration::Repeat;
    HighLevelTrainResult r = train_highlevel(cfg, pol, nullptr);
    REQUIRE(r.prior_calls == 0);
    REQUIRE(r.rows.size() == 3);
  }

  SECTION("latent width mismatches are rejected before any environment step") {
    HighLevelConfig cfg = base;
    cfg.integration = Integration::None;
    cfg.d_z = 4;
    REQUIRE_THROWS_AS(train_highlevel(cfg, pol, nullptr), ConfigError);
  }
}
