#include <algorithm>
#include <cmath>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "helpers.hpp"
#include "lsp/metrics.hpp"

using namespace lsp;
using namespace lsp::metrics;

namespace {

struct Models {
  vae::Vae v;
  prior::PriorModel m;
  lowlevel::LowLevel pol;
};

Models tiny_models(uint64_t seed) {
  CounterRng rng(seed);
  vae::VaeConfig vc;
  vc.d_z = 4;
  vc.channels = 8;
  vc.latent_channels = 8;
  vc.res_blocks = 1;
  prior::PriorConfig pc;
  pc.d_z = 4;
  pc.d_model = 16;
  pc.blocks = 1;
  pc.hidden = 24;
  pc.mixtures = 2;
  pc.max_len = 16;
  lowlevel::LowLevelConfig lc;
  lc.d_z = 4;
  lc.hidden = 16;
  lc.depth = 2;
  CounterRng vr = rng.split("v"), pr = rng.split("p"), lr = rng.split("l");
  return Models{vae::Vae::make(vc, vr), prior::PriorModel::make(pc, pr),
                lowlevel::LowLevel::make(lc, world::WorldParams{}, lr)};
}

std::vector<kin::Frame> drive_clip(const world::WorldParams& wp, int n, double turn) {
  std::vector<kin::ChainState> states;
  kin::ChainState s;
  s.joints.assign(static_cast<size_t>(wp.n_links), 0.0);
  states.push_back(s);
  world::Action a = world::Action::zero(wp.n_links);
  a.accel = wp.a_max;
  a.turn = turn;
  for (int i = 1; i < n; ++i) {
    s = world::step(wp, s, a);
    states.push_back(s);
  }
  return kin::featurize(states);
}

}  // namespace

TEST_CASE("reenacting sampled sequences reports per-step statistics", "[metrics]") {
  Models md = tiny_models(21);
  ReenactReport r = prior_reenactment(md.v, md.m, md.pol, 3, 5, 42u);
  CHECK(r.sequences == 3);
  CHECK(r.steps == 15);
  CHECK(std::isfinite(r.mean_reward));
  CHECK(r.mean_base_dev >= 0.0);

  ReenactReport again = prior_reenactment(md.v, md.m, md.pol, 3, 5, 42u);
  CHECK(again.mean_reward == r.mean_reward);
  CHECK(again.mean_base_dev == r.mean_base_dev);
  ReenactReport other = prior_reenactment(md.v, md.m, md.pol, 3, 5, 43u);
  CHECK(other.mean_reward != r.mean_reward);

  CHECK_THROWS_AS(prior_reenactment(md.v, md.m, md.pol, 3, 0, 1u), ConfigError);
  CHECK_THROWS_AS(prior_reenactment(md.v, md.m, md.pol, 0, 5, 1u), ConfigError);
}

TEST_CASE("coverage scores match the sequence model directly", "[metrics]") {
  Models md = tiny_models(22);
  std::vector<std::vector<kin::Frame>> clips{drive_clip(md.pol.wp, 14, 0.01),
                                             drive_clip(md.pol.wp, 14, -0.03)};
  Coverage c = coverage_logprob(md.m, md.v, clips);
  CHECK(c.sequences == 2);
  CHECK(std::isfinite(c.mean));
  CHECK(c.stddev >= 0.0);

  double a = prior::sequence_logprob(md.m, vae::encode_clip_means(md.v, clips[0]));
  double b = prior::sequence_logprob(md.m, vae::encode_clip_means(md.v, clips[1]));
  CHECK(c.mean == Catch::Approx(0.5 * (a + b)).margin(1e-12));
  CHECK(c.stddev == Catch::Approx(0.5 * std::abs(a - b)).margin(1e-12));

  Coverage single = coverage_logprob(md.m, md.v, {clips[0]});
  CHECK(single.sequences == 1);
  CHECK(single.stddev == 0.0);
  CHECK(single.mean == Catch::Approx(a).margin(1e-12));

  CHECK_THROWS_AS(coverage_logprob(md.m, md.v, {}), ConfigError);
  std::vector<std::vector<kin::Frame>> short_clip{
      drive_clip(md.pol.wp, md.v.min_encode_len() - 1, 0.0)};
  CHECK_THROWS_AS(coverage_logprob(md.m, md.v, short_clip), ConfigError);
}

TEST_CASE("controller rollouts produce one featurized clip per episode", "[metrics]") {
  Models md = tiny_models(23);
  std::vector<double> z(static_cast<size_t>(md.pol.cfg.d_z), 0.3);
  LatentFn fixed = [&](const std::vector<double>&) { return z; };
  auto clips = controller_rollout_frames(world::TaskKind::GoToTargets, md.pol, fixed, 2, 20, 5u);
  REQUIRE(clips.size() == 2u);
  for (const auto& clip : clips) {
    CHECK(clip.size() == 21u);  // start state plus one per step
    for (const auto& f : clip)
      CHECK(static_cast<int>(f.size()) == kin::feature_dim(md.pol.wp.n_links));
  }
  auto again = controller_rollout_frames(world::TaskKind::GoToTargets, md.pol, fixed, 2, 20, 5u);
  CHECK(again[0] == clips[0]);
  CHECK_THROWS_AS(controller_rollout_frames(world::TaskKind::GoToTargets, md.pol, fixed, 0, 20, 5u),
                  ConfigError);
  CHECK_THROWS_AS(controller_rollout_frames(world::TaskKind::GoToTargets, md.pol, fixed, 2, 1, 5u),
                  ConfigError);
}

TEST_CASE("random walks record every step inside the arena", "[metrics]") {
  Models md = tiny_models(24);
  nlohmann::ordered_json j = random_walk_dump(world::TaskKind::GoToTargets, md.pol, 37, 8u);
  CHECK(j.at("task") == "go_to_targets");
  CHECK(j.at("steps") == 37);
  size_t total = 0;
  for (const auto& ep : j.at("episodes")) {
    total += ep.size();
    for (const auto& p : ep) {
      CHECK(std::abs(p[0].get<double>()) <= 5.0);
      CHECK(std::abs(p[1].get<double>()) <= 5.0);
    }
  }
  CHECK(total == 37u);
  CHECK(random_walk_dump(world::TaskKind::GoToTargets, md.pol, 37, 8u) == j);
  CHECK_THROWS_AS(random_walk_dump(world::TaskKind::GoToTargets, md.pol, 0, 8u), ConfigError);
}
