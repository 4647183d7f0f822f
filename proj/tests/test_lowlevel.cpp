#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "helpers.hpp"
#include "lsp/lowlevel.hpp"

using namespace lsp;
using namespace lsp::lowlevel;

namespace {

data::DemoDataset small_corpus(int clips_per_style, int frames_per_clip, uint64_t seed) {
  data::CorpusConfig cc;
  cc.styles = {world::Style::SlowCruise, world::Style::FastCruise};
  cc.clips_per_style = clips_per_style;
  cc.frames_per_clip = frames_per_clip;
  cc.seed = seed;
  return data::generate_demos(world::WorldParams{}, cc);
}

LowLevel random_policy(uint64_t seed) {
  CounterRng rng(seed);
  return LowLevel::make(LowLevelConfig{}, world::WorldParams{}, rng);
}

std::vector<double> random_latent(CounterRng& rng, int d) {
  std::vector<double> z;
  for (int i = 0; i < d; ++i) z.push_back(rng.uniform() * 1.8 - 0.9);
  return z;
}

double action_dist(const world::Action& a, const world::Action& b) {
  auto fa = a.flat(), fb = b.flat();
  double s = 0.0;
  for (size_t i = 0; i < fa.size(); ++i) s += (fa[i] - fb[i]) * (fa[i] - fb[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("policy actions are deterministic and inside the limits", "[lowlevel]") {
  LowLevel p = random_policy(3);
  CounterRng rng(5);
  world::WorldParams wp;
  for (int trial = 0; trial < 20; ++trial) {
    kin::ChainState s;
    s.joints = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 1.0)};
    s.heading = rng.uniform(-3.0, 3.0);
    s.speed = rng.uniform(0.0, wp.v_max);
    kin::Frame pr = world::proprio(s);
    std::vector<double> z = random_latent(rng, 8);
    world::Action a = p.act(pr, z);
    world::Action b = p.act(pr, z);
    REQUIRE(action_dist(a, b) == 0.0);
    REQUIRE(std::fabs(a.accel) <= wp.a_max);
    REQUIRE(std::fabs(a.turn) <= wp.omega_max);
    for (double d : a.joint_deltas) REQUIRE(std::fabs(d) <= wp.delta_max);
  }

  // Zeroed weights give the zero action, and the zero policy's loss is the
  // mean squared action norm of the batch.
  LowLevel zp = random_policy(7);
  for (auto& [name, t] : zp.params().items) std::fill(t.data().begin(), t.data().end(), 0.0);
  kin::ChainState rest;
  rest.joints.assign(4, 0.0);
  world::Action za = zp.act(world::proprio(rest), std::vector<double>(8, 0.25));
  for (double v : za.flat()) REQUIRE(v == 0.0);

  CounterRng brng(11);
  Tensor x = Tensor::rand_uniform({5, zp.input_dim()}, brng, -0.9, 0.9);
  Tensor targets = Tensor::rand_uniform({5, zp.action_dim()}, brng, -0.2, 0.2);
  double norm2 = 0.0;
  for (double v : targets.data()) norm2 += v * v;
  NoGradGuard ng;
  double loss = bc_mse(zp.forward_actions(x), targets).item();
  REQUIRE(loss == Catch::Approx(norm2 / 5.0).epsilon(1e-12));

  REQUIRE_THROWS_AS(p.act(kin::Frame(11, 0.0), std::vector<double>(8, 0.0)), ShapeError);
  REQUIRE_THROWS_AS(p.act(kin::Frame(12, 0.0), std::vector<double>(7, 0.0)), ShapeError);
}

TEST_CASE("cloning loss gradients match finite differences", "[lowlevel]") {
  LowLevel p = random_policy(13);
  CounterRng rng(17);
  Tensor targets = Tensor::rand_uniform({4, p.action_dim()}, rng, -0.15, 0.15);
  testutil::GradCheck{-0.9, 0.9, 8, 1e-6, 5e-6, 19}.run(
      "frozen cloning loss wrt inputs", {4, p.input_dim()},
      [&](const Tensor& x) { return bc_mse(p.forward_actions(x), targets); });
}

TEST_CASE("joint objective flows through the sampled latent", "[lowlevel]") {
  CounterRng rng(23);
  LowLevel p = random_policy(29);
  JointEncoder enc = JointEncoder::make(p.proprio_dim(), p.cfg.d_z, rng);
  const int B = 3;
  Tensor proprio = Tensor::rand_uniform({B, p.proprio_dim()}, rng, -0.9, 0.9);
  Tensor targets = Tensor::rand_uniform({B, p.action_dim()}, rng, -0.15, 0.15);
  Tensor noise = Tensor::randn({B, p.cfg.d_z}, rng);
  testutil::GradCheck{-0.9, 0.9, 8, 1e-6, 5e-6, 31}.run(
      "joint loss wrt encoder obs", {B, enc.obs_dim}, [&](const Tensor& obs) {
        return joint_loss(p, enc, obs, proprio, targets, noise, 1e-3).loss;
      });

  // An encoder pinned at the unit gaussian pays no divergence penalty.
  JointEncoder zenc = JointEncoder::make(p.proprio_dim(), p.cfg.d_z, rng);
  nn::NamedTensors zps;
  zenc.reg(zps);
  for (auto& [name, t] : zps.items) std::fill(t.data().begin(), t.data().end(), 0.0);
  Tensor obs = Tensor::rand_uniform({B, enc.obs_dim}, rng, -0.9, 0.9);
  JointLossOut out = joint_loss(p, zenc, obs, proprio, targets, noise, 1e-3);
  REQUIRE(out.kl == 0.0);
  REQUIRE(out.loss.item() == out.mse);
}

TEST_CASE("supervised pairs line up with encoded clips and skip short ones", "[lowlevel]") {
  auto ds = small_corpus(1, 30, 41);
  data::DemoClip stub;
  stub.label = "stub";
  stub.frames.assign(8, kin::Frame(12, 0.0));  // below the encoder minimum
  ds.clips.push_back(stub);

  CounterRng vrng(5);
  vae::Vae v = vae::Vae::make(vae::VaeConfig{}, vrng);
  LowLevelConfig cfg;
  auto tab = lowlevel::detail::build_pairs(ds, &v, cfg, TrainMode::FrozenVae, false);
  // Each 30-frame clip offers pairs t = 0..25 (latent index t+4 capped at 29).
  REQUIRE(tab.rows() == 2 * 26);
  REQUIRE(tab.in_dim == 12 + 8);

  auto latents = vae::encode_clip_means(v, ds.clips[0].frames);
  const int t_probe = 7;
  const double* row = tab.inputs.data() + static_cast<size_t>(t_probe) * tab.in_dim;
  for (int i = 0; i < 12; ++i) REQUIRE(row[i] == ds.clips[0].frames[t_probe][static_cast<size_t>(i)]);
  for (int i = 0; i < 8; ++i)
    REQUIRE(row[12 + i] == latents[t_probe + cfg.lead][static_cast<size_t>(i)]);
  const double* act_row = tab.targets.data() + static_cast<size_t>(t_probe) * tab.act_dim;
  auto expect = ds.clips[0].actions[t_probe].flat();
  for (int i = 0; i < tab.act_dim; ++i) REQUIRE(act_row[i] == expect[static_cast<size_t>(i)]);

  auto joint_tab = lowlevel::detail::build_pairs(ds, nullptr, cfg, TrainMode::Joint, false);
  REQUIRE(joint_tab.rows() == 2 * 25);  // t = 0..24 so five future frames exist
  REQUIRE(joint_tab.in_dim == 5 * 12);
  REQUIRE(joint_tab.extra_dim == 12);
}

TEST_CASE("short training improves both cloning modes deterministically", "[lowlevel][slow]") {
  auto ds = small_corpus(2, 150, 43);
  CounterRng vrng(9);
  vae::Vae v = vae::Vae::make(vae::VaeConfig{}, vrng);

  LowLevelConfig cfg;
  LowLevelTrainConfig tc;
  tc.batch = 64;
  tc.steps = 300;
  tc.lr = 1e-3;
  tc.warmup = 20;
  tc.holdout_every = 4;
  tc.log_every = 100;
  tc.seed = 3;

  LowLevelTrainResult frozen = train_lowlevel(ds, &v, cfg, tc);
  REQUIRE(frozen.curve.size() == 3);
  REQUIRE(frozen.final_loss < frozen.initial_loss);
  REQUIRE(std::isfinite(frozen.holdout_mse));
  REQUIRE_FALSE(frozen.encoder.has_value());

  LowLevelTrainResult again = train_lowlevel(ds, &v, cfg, tc);
  REQUIRE(again.final_loss == frozen.final_loss);
  REQUIRE(again.holdout_mse == frozen.holdout_mse);

  tc.mode = TrainMode::Joint;
  LowLevelTrainResult joint = train_lowlevel(ds, nullptr, cfg, tc);
  REQUIRE(joint.encoder.has_value());
  REQUIRE(joint.final_loss < joint.initial_loss);
  REQUIRE(std::isfinite(joint.holdout_mse));
}

TEST_CASE("trained policy retraces clips better than random actions", "[lowlevel][slow]") {
  auto ds = small_corpus(2, 150, 47);
  CounterRng vrng(15);
  vae::Vae v = vae::Vae::make(vae::VaeConfig{}, vrng);

  LowLevelConfig cfg;
  LowLevelTrainConfig tc;
  tc.batch = 128;
  tc.steps = 500;
  tc.lr = 1e-3;
  tc.warmup = 20;
  tc.holdout_every = 4;
  tc.log_every = 250;
  tc.seed = 7;
  LowLevelTrainResult res = train_lowlevel(ds, &v, cfg, tc);

  ReenactStats enc = reenact_encoded(res.policy, v, ds, 50);
  CounterRng rrng(21);
  ReenactStats rnd = reenact_random(ds, res.policy.wp, 50, cfg.lead, rrng);
  REQUIRE(enc.windows == rnd.windows);
  REQUIRE(enc.mean_reward > rnd.mean_reward);

  // Conditioning sensitivity: identical latents give identical actions, and
  // latents from different styles move the action by a clear margin.
  auto latents_a = vae::encode_clip_means(v, ds.clips[0].frames);  // slow_cruise
  auto latents_b = vae::encode_clip_means(v, ds.clips[2].frames);  // fast_cruise
  kin::ChainGeom geom = res.policy.wp.geom();
  auto states = kin::defeaturize(geom, ds.clips[0].frames);
  double cross = 0.0, same = 0.0;
  int n = 0;
  for (int t = 10; t < 50; t += 10) {
    kin::Frame pr = world::proprio(states[static_cast<size_t>(t)]);
    world::Action aa = res.policy.act(pr, latents_a[static_cast<size_t>(t)]);
    world::Action ab = res.policy.act(pr, latents_b[static_cast<size_t>(t)]);
    world::Action aa2 = res.policy.act(pr, latents_a[static_cast<size_t>(t)]);
    cross += action_dist(aa, ab);
    same += action_dist(aa, aa2);
    ++n;
  }
  REQUIRE(same == 0.0);
  REQUIRE(cross / n > 10.0 * (same / n));
  REQUIRE(cross / n > 1e-4);
}

TEST_CASE("checkpoint round trip preserves the policy", "[lowlevel]") {
  LowLevel p = random_policy(51);
  auto path = std::filesystem::temp_directory_path() / "lsp_test_lowlevel.lspc";
  save_lowlevel(path.string(), p);
  LowLevel back = load_lowlevel(path.string());
  std::filesystem::remove(path);

  REQUIRE(back.cfg.lead == p.cfg.lead);
  REQUIRE(back.wp.n_links == p.wp.n_links);
  CounterRng rng(55);
  kin::ChainState s;
  s.joints = {0.3, -0.2, 0.5, 0.1};
  s.heading = 0.7;
  s.speed = 0.05;
  kin::Frame pr = world::proprio(s);
  std::vector<double> z = random_latent(rng, 8);
  REQUIRE(p.act(pr, z).flat() == back.act(pr, z).flat());
}
