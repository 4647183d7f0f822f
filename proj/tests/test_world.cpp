#include <filesystem>

#include "catch2/catch_amalgamated.hpp"
#include "helpers.hpp"
#include "lsp/dataset.hpp"
#include "lsp/world.hpp"

using namespace lsp;
using namespace lsp::world;

namespace {

kin::ChainState roll(const WorldParams& wp, kin::ChainState s, const std::vector<Action>& acts) {
  for (const auto& a : acts) s = step(wp, s, a);
  return s;
}

Action random_action(CounterRng& rng, int n) {
  Action a = Action::zero(n);
  a.accel = rng.uniform(-0.1, 0.1);
  a.turn = rng.uniform(-1.0, 1.0);
  for (auto& d : a.joint_deltas) d = rng.uniform(-1.0, 1.0);
  return a;
}

}  // namespace

TEST_CASE("actions are clipped component-wise", "[world]") {
  WorldParams wp;
  Action a = Action::zero(4);
  a.accel = 1.0;
  a.turn = -3.0;
  a.joint_deltas = {0.5, -0.5, 0.1, 0.0};
  Action c = clip_action(wp, a);
  REQUIRE(c.accel == wp.a_max);
  REQUIRE(c.turn == -wp.omega_max);
  REQUIRE(c.joint_deltas[0] == wp.delta_max);
  REQUIRE(c.joint_deltas[1] == -wp.delta_max);
  REQUIRE(c.joint_deltas[2] == 0.1);

  Action wrong = Action::zero(3);
  REQUIRE_THROWS_AS(clip_action(wp, wrong), lsp::ShapeError);
}

TEST_CASE("one step follows the update order", "[world]") {
  WorldParams wp;
  kin::ChainState s;
  s.speed = 0.1;
  s.heading = 0.0;
  s.joints = {0.1, -0.1, 0.0, 0.2};

  Action a = Action::zero(4);
  a.accel = 0.05;  // clips to 0.02
  a.turn = 1.0;    // clips to omega_max
  a.joint_deltas = {1.0, 0.0, -1.0, 0.0};

  kin::ChainState n = step(wp, s, a);
  double speed = 0.95 * 0.1 + 0.02;
  REQUIRE(n.speed == Catch::Approx(speed).margin(1e-15));
  REQUIRE(n.heading == Catch::Approx(wp.omega_max).margin(1e-15));
  REQUIRE(n.px == Catch::Approx(speed * std::cos(wp.omega_max)).margin(1e-15));
  REQUIRE(n.py == Catch::Approx(speed * std::sin(wp.omega_max)).margin(1e-15));
  REQUIRE(n.joints[0] == Catch::Approx(0.1 + wp.delta_max).margin(1e-15));
  REQUIRE(n.joints[2] == Catch::Approx(-wp.delta_max).margin(1e-15));
}

TEST_CASE("speed stays within bounds under any policy", "[world]") {
  WorldParams wp;
  CounterRng rng(3);
  kin::ChainState s;
  s.joints.assign(4, 0.0);
  for (int t = 0; t < 500; ++t) {
    s = step(wp, s, random_action(rng, 4));
    REQUIRE(s.speed >= 0.0);
    REQUIRE(s.speed <= wp.v_max);
    REQUIRE(s.heading >= -kPi);
    REQUIRE(s.heading < kPi);
  }
}

TEST_CASE("proprio velocity equals the realized displacement", "[world]") {
  WorldParams wp;
  CounterRng rng(5);
  kin::ChainState s;
  s.joints.assign(4, 0.0);
  for (int t = 0; t < 50; ++t) {
    kin::ChainState prev = s;
    s = step(wp, s, random_action(rng, 4));
    kin::Frame f = proprio(s);
    REQUIRE(f[0] == Catch::Approx(s.px - prev.px).margin(1e-12));
    REQUIRE(f[1] == Catch::Approx(s.py - prev.py).margin(1e-12));
    REQUIRE(f[2] == Catch::Approx(std::cos(s.heading)).margin(1e-15));
    REQUIRE(f[3] == Catch::Approx(std::sin(s.heading)).margin(1e-15));
  }
}

TEST_CASE("stored clip actions replay to the stored frames", "[world][dataset]") {
  WorldParams wp;
  data::CorpusConfig cfg;
  cfg.clips_per_style = 1;
  cfg.frames_per_clip = 120;
  cfg.seed = 77;
  data::DemoDataset ds = data::generate_demos(wp, cfg);
  REQUIRE(ds.clips.size() == 5);

  for (const auto& clip : ds.clips) {
    REQUIRE(clip.actions.size() + 1 == clip.frames.size());
    // Clips start at rest from the origin; pose comes from the first frame.
    auto states0 = kin::defeaturize(wp.geom(), clip.frames);
    kin::ChainState s;
    s.heading = states0[0].heading;
    s.joints = states0[0].joints;
    s.speed = 0.0;

    std::vector<kin::ChainState> states{s};
    for (const auto& a : clip.actions) {
      s = step(wp, s, a);
      states.push_back(s);
    }
    auto frames = kin::featurize(states);
    double max_diff = 0;
    for (size_t t = 0; t < frames.size(); ++t)
      max_diff = std::max(max_diff, testutil::max_abs_diff(frames[t], clip.frames[t]));
    REQUIRE(max_diff <= 1e-9);
  }
}

TEST_CASE("corpus generation is reproducible and seed sensitive", "[world][dataset]") {
  WorldParams wp;
  data::CorpusConfig cfg;
  cfg.clips_per_style = 2;
  cfg.frames_per_clip = 60;
  cfg.seed = 9;
  auto a = data::generate_demos(wp, cfg);
  auto b = data::generate_demos(wp, cfg);
  REQUIRE(data::serialize_dataset(a) == data::serialize_dataset(b));

  cfg.seed = 10;
  auto c = data::generate_demos(wp, cfg);
  REQUIRE(data::serialize_dataset(a) != data::serialize_dataset(c));
  REQUIRE(a.clips[0].label == "slow_cruise/0");
  REQUIRE(a.total_frames() == 5 * 2 * 60);
}

TEST_CASE("movement styles are visibly distinct", "[world][dataset]") {
  WorldParams wp;
  data::CorpusConfig cfg;
  cfg.clips_per_style = 1;
  cfg.frames_per_clip = 400;
  cfg.seed = 21;
  auto ds = data::generate_demos(wp, cfg);

  auto mean_speed = [&](const data::DemoClip& c) {
    double s = 0;
    for (const auto& f : c.frames) s += std::hypot(f[0], f[1]);
    return s / static_cast<double>(c.frames.size());
  };
  auto total_turn = [&](const data::DemoClip& c) {
    auto states = kin::defeaturize(wp.geom(), c.frames);
    double s = 0;
    for (size_t t = 1; t < states.size(); ++t)
      s += wrap_angle(states[t].heading - states[t - 1].heading);
    return std::fabs(s);
  };

  const auto& slow = ds.clips[0];
  const auto& fast = ds.clips[1];
  const auto& spin = ds.clips[2];
  REQUIRE(mean_speed(fast) > 2.0 * mean_speed(slow));
  REQUIRE(mean_speed(spin) < 0.2 * mean_speed(fast));
  REQUIRE(total_turn(spin) > 3.0 * total_turn(slow));
}

TEST_CASE("dataset file round trip is exact", "[world][dataset]") {
  WorldParams wp;
  data::CorpusConfig cfg;
  cfg.clips_per_style = 1;
  cfg.frames_per_clip = 40;
  cfg.seed = 31;
  auto ds = data::generate_demos(wp, cfg);

  auto path = std::filesystem::temp_directory_path() / "lsp_test_demos.lspd";
  data::save_dataset(path.string(), ds);
  auto back = data::load_dataset(path.string());

  REQUIRE(back.n_links == ds.n_links);
  REQUIRE(back.seed == ds.seed);
  REQUIRE(back.clips.size() == ds.clips.size());
  for (size_t c = 0; c < ds.clips.size(); ++c) {
    REQUIRE(back.clips[c].label == ds.clips[c].label);
    REQUIRE(back.clips[c].frames == ds.clips[c].frames);
    for (size_t i = 0; i < ds.clips[c].actions.size(); ++i)
      REQUIRE(back.clips[c].actions[i].flat() == ds.clips[c].actions[i].flat());
  }
  std::filesystem::remove(path);
}

TEST_CASE("corrupt dataset files are rejected with context", "[world][dataset]") {
  WorldParams wp;
  data::CorpusConfig cfg;
  cfg.clips_per_style = 1;
  cfg.frames_per_clip = 10;
  auto ds = data::generate_demos(wp, cfg);
  std::string buf = data::serialize_dataset(ds);

  std::string bad_magic = buf;
  bad_magic[0] = 'X';
  REQUIRE_THROWS_AS(data::parse_dataset(bad_magic, "t"), lsp::FormatError);

  std::string bad_version = buf;
  bad_version[4] = 9;
  REQUIRE_THROWS_AS(data::parse_dataset(bad_version, "t"), lsp::FormatError);

  std::string truncated = buf.substr(0, buf.size() - 100);
  try {
    data::parse_dataset(truncated, "t");
    FAIL("expected FormatError");
  } catch (const lsp::FormatError& e) {
    REQUIRE(std::string(e.what()).find("truncated") != std::string::npos);
  }

  REQUIRE_THROWS_AS(data::parse_dataset(std::string("LS"), "t"), lsp::FormatError);
}

TEST_CASE("holdout split peels off every n-th clip", "[world][dataset]") {
  WorldParams wp;
  data::CorpusConfig cfg;
  cfg.clips_per_style = 4;
  cfg.frames_per_clip = 10;
  auto ds = data::generate_demos(wp, cfg);
  auto [train, hold] = data::split_clips(ds, 4);
  REQUIRE(train.clips.size() == 15);
  REQUIRE(hold.clips.size() == 5);
  REQUIRE(hold.clips[0].label == "slow_cruise/3");
  REQUIRE_THROWS_AS(data::split_clips(ds, 1), lsp::ConfigError);
}

TEST_CASE("task names resolve and reject unknowns", "[world][task]") {
  REQUIRE(task_from_name("go_to_targets") == TaskKind::GoToTargets);
  REQUIRE(task_from_name("maze") == TaskKind::Maze);
  REQUIRE(task_from_name("speed_gaps") == TaskKind::SpeedGaps);
  REQUIRE_THROWS_AS(task_from_name("flying"), lsp::ConfigError);
  REQUIRE(task_name(TaskKind::Maze) == "maze");
}

TEST_CASE("task resets are deterministic per episode seed", "[world][task]") {
  WorldParams wp;
  TaskEnv a(TaskKind::GoToTargets, wp), b(TaskKind::GoToTargets, wp);
  auto oa = a.reset(123), ob = b.reset(123);
  REQUIRE(oa == ob);
  REQUIRE(static_cast<int>(oa.size()) == a.obs_dim());
  auto oc = b.reset(124);
  REQUIRE(oa != oc);
}

TEST_CASE("goal task pays sparse rewards when goals are reached", "[world][task]") {
  WorldParams wp;
  TaskEnv env(TaskKind::GoToTargets, wp);
  env.reset(7);

  // Steer greedily toward the goal using the egocentric observation.
  double ret = 0;
  int reached = 0;
  for (int t = 0; t < 1000; ++t) {
    auto obs = env.observe();
    double gx = obs[12], gy = obs[13];  // goal vector in chain frame
    Action a = Action::zero(wp.n_links);
    a.accel = wp.a_max;
    a.turn = clampd(std::atan2(gy, gx), -wp.omega_max, wp.omega_max);
    auto r = env.step(a);
    ret += r.reward;
    if (r.reward > 0.5) ++reached;
    if (r.done) break;
  }
  REQUIRE(reached >= 2);
  REQUIRE(env.successes() == reached);
  REQUIRE(env.succeeded());
  REQUIRE(ret == Catch::Approx(static_cast<double>(reached)));
}

TEST_CASE("maze wall blocks the straight path", "[world][task]") {
  WorldParams wp;
  TaskEnv env(TaskKind::Maze, wp);
  env.reset(3);

  // Drive hard toward +x; the wall slab must stop the base.
  for (int t = 0; t < 400; ++t) {
    Action a = Action::zero(wp.n_links);
    a.accel = wp.a_max;
    a.turn = clampd(wrap_angle(0.0 - env.state().heading), -wp.omega_max, wp.omega_max);
    env.step(a);
    bool inside = env.state().px > -0.5 && env.state().px < 0.5 && env.state().py > -3.0 &&
                  env.state().py < 1.0;
    REQUIRE_FALSE(inside);
  }
  REQUIRE(env.state().px <= -0.5);
  REQUIRE_FALSE(env.succeeded());
}

TEST_CASE("speed gaps demand momentum", "[world][task]") {
  WorldParams wp;

  auto run = [&](double target_speed) {
    TaskEnv env(TaskKind::SpeedGaps, wp);
    env.reset(11);
    double ret = 0;
    for (int t = 0; t < 1000; ++t) {
      Action a = Action::zero(wp.n_links);
      double accel_needed = target_speed * (1.0 - wp.damping) + 0.5 * (target_speed - env.state().speed);
      a.accel = clampd(accel_needed, -wp.a_max, wp.a_max);
      a.turn = clampd(wrap_angle(0.0 - env.state().heading), -wp.omega_max, wp.omega_max);
      auto r = env.step(a);
      ret += r.reward;
      if (r.truncated) break;
    }
    return std::pair<double, int>{ret, env.successes()};
  };

  auto fast = run(0.15);
  auto slow = run(0.05);
  REQUIRE(fast.second >= 2);     // carries momentum across gaps
  REQUIRE(slow.second == 0);     // never admitted past the first gap
  REQUIRE(fast.first > slow.first);
}

TEST_CASE("episodes truncate at the step limit", "[world][task]") {
  WorldParams wp;
  TaskEnv env(TaskKind::GoToTargets, wp);
  env.reset(1);
  StepResult last;
  for (int t = 0; t < env.episode_limit(); ++t) last = env.step(Action::zero(wp.n_links));
  REQUIRE(last.truncated);
  REQUIRE_FALSE(last.done);
  REQUIRE(env.steps_taken() == env.episode_limit());
}
