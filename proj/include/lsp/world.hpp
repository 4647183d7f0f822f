#pragma once

// Planar chain world: bounded first-order base dynamics with damped forward
// speed, scripted demonstration controllers in five movement styles, and the
// downstream control tasks layered on top of the bare dynamics.

#include <string>
#include <vector>

#include "json.hpp"
#include "lsp/common.hpp"
#include "lsp/kinematics.hpp"

namespace lsp::world {

struct WorldParams {
  int n_links = 4;
  double link_len = 0.25;
  double v_max = 0.15;          // forward speed ceiling per step
  double damping = 0.95;        // speed carried over between steps
  double a_max = 0.02;          // acceleration clip
  double omega_max = kPi / 16;  // heading change clip
  double delta_max = 0.25;      // joint angle change clip

  kin::ChainGeom geom() const { return kin::ChainGeom::uniform(n_links, link_len); }

  nlohmann::ordered_json to_json() const {
    return {{"n_links", n_links},     {"link_len", link_len},   {"v_max", v_max},
            {"damping", damping},     {"a_max", a_max},         {"omega_max", omega_max},
            {"delta_max", delta_max}};
  }
  static WorldParams from_json(const nlohmann::json& j) {
    WorldParams p;
    p.n_links = j.value("n_links", p.n_links);
    p.link_len = j.value("link_len", p.link_len);
    p.v_max = j.value("v_max", p.v_max);
    p.damping = j.value("damping", p.damping);
    p.a_max = j.value("a_max", p.a_max);
    p.omega_max = j.value("omega_max", p.omega_max);
    p.delta_max = j.value("delta_max", p.delta_max);
    return p;
  }
};

struct Action {
  double accel = 0.0;
  double turn = 0.0;
  std::vector<double> joint_deltas;

  static Action zero(int n_links) {
    Action a;
    a.joint_deltas.assign(static_cast<size_t>(n_links), 0.0);
    return a;
  }
  static int dim(int n_links) { return 2 + n_links; }
  std::vector<double> flat() const {
    std::vector<double> v{accel, turn};
    v.insert(v.end(), joint_deltas.begin(), joint_deltas.end());
    return v;
  }
  static Action from_flat(const std::vector<double>& v, int n_links) {
    if (static_cast<int>(v.size()) != dim(n_links))
      throw ShapeError("Action::from_flat: wrong length");
    Action a;
    a.accel = v[0];
    a.turn = v[1];
    a.joint_deltas.assign(v.begin() + 2, v.end());
    return a;
  }
};

inline double clampd(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

inline Action clip_action(const WorldParams& wp, Action a) {
  if (static_cast<int>(a.joint_deltas.size()) != wp.n_links)
    throw ShapeError("clip_action: joint delta count does not match world");
  a.accel = clampd(a.accel, -wp.a_max, wp.a_max);
  a.turn = clampd(a.turn, -wp.omega_max, wp.omega_max);
  for (auto& d : a.joint_deltas) d = clampd(d, -wp.delta_max, wp.delta_max);
  return a;
}

// Applies one control step: speed decays then integrates clipped
// acceleration, heading turns, the base advances along the new heading, and
// joints move by clipped deltas. Speed stays in [0, v_max].
inline kin::ChainState step(const WorldParams& wp, const kin::ChainState& s, const Action& act) {
  Action a = clip_action(wp, act);
  kin::ChainState n = s;
  n.speed = clampd(wp.damping * s.speed + a.accel, 0.0, wp.v_max);
  n.heading = wrap_angle(s.heading + a.turn);
  n.px = s.px + n.speed * std::cos(n.heading);
  n.py = s.py + n.speed * std::sin(n.heading);
  for (int j = 0; j < wp.n_links; ++j)
    n.joints[static_cast<size_t>(j)] =
        wrap_angle(s.joints[static_cast<size_t>(j)] + a.joint_deltas[static_cast<size_t>(j)]);
  return n;
}

// Observable features of the current state. The velocity slot holds the
// displacement that produced this state (speed along the current heading),
// so it never leaks information about the upcoming action.
inline kin::Frame proprio(const kin::ChainState& s) {
  return kin::featurize_one(s, s.speed * std::cos(s.heading), s.speed * std::sin(s.heading));
}

// ---------------------------------------------------------------- experts

enum class Style { SlowCruise, FastCruise, Spin, Zigzag, StopAndGo };

inline const std::vector<Style>& all_styles() {
  static const std::vector<Style> v{Style::SlowCruise, Style::FastCruise, Style::Spin,
                                    Style::Zigzag, Style::StopAndGo};
  return v;
}

inline std::string style_name(Style s) {
  switch (s) {
    case Style::SlowCruise: return "slow_cruise";
    case Style::FastCruise: return "fast_cruise";
    case Style::Spin: return "spin";
    case Style::Zigzag: return "zigzag";
    case Style::StopAndGo: return "stop_and_go";
  }
  throw ConfigError("style_name: unknown style");
}

inline Style style_from_name(const std::string& name) {
  for (Style s : all_styles())
    if (style_name(s) == name) return s;
  throw ConfigError("style_from_name: unknown style '" + name + "'");
}

// Persistent controller scratch carried across a clip.
struct ExpertMemory {
  double wx = 0.0, wy = 0.0;  // current waypoint
  double spin_sign = 1.0;
  double zig_sign = 1.0;
  bool coasting = false;
  int clock = 0;
};

namespace detail {

struct StyleSpec {
  double v_frac;       // cruise speed as a fraction of v_max
  double turn_gain;    // fraction of omega_max applied toward the bearing
  double gait_amp;     // joint sinusoid amplitude
  double gait_freq;    // joint sinusoid angular frequency per step
};

inline StyleSpec style_spec(Style s) {
  switch (s) {
    case Style::SlowCruise: return {0.30, 0.5, 0.25, 0.15};
    case Style::FastCruise: return {0.90, 0.9, 0.45, 0.35};
    case Style::Spin: return {0.02, 1.0, 0.35, 0.30};
    case Style::Zigzag: return {0.60, 0.8, 0.30, 0.25};
    case Style::StopAndGo: return {0.70, 0.6, 0.40, 0.30};
  }
  throw ConfigError("style_spec: unknown style");
}

}  // namespace detail

// One scripted control decision. Deterministic given (state, t, memory, rng
// stream); the returned action is already clipped to the world's bounds.
inline Action expert_action(const WorldParams& wp, Style style, const kin::ChainState& s, int t,
                            ExpertMemory& mem, CounterRng& rng) {
  auto spec = detail::style_spec(style);
  Action a = Action::zero(wp.n_links);

  auto renew_waypoint = [&]() {
    mem.wx = rng.uniform(-3.0, 3.0);
    mem.wy = rng.uniform(-3.0, 3.0);
  };
  if (t == 0) {
    renew_waypoint();
    mem.spin_sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
    mem.zig_sign = 1.0;
    mem.coasting = false;
    mem.clock = 0;
  }

  double dist = std::hypot(mem.wx - s.px, mem.wy - s.py);
  if (dist < 0.3 || mem.clock > 250) {
    renew_waypoint();
    mem.clock = 0;
    dist = std::hypot(mem.wx - s.px, mem.wy - s.py);
  }
  ++mem.clock;

  double bearing = std::atan2(mem.wy - s.py, mem.wx - s.px);
  double v_des = spec.v_frac * wp.v_max;

  switch (style) {
    case Style::Spin:
      a.turn = mem.spin_sign * wp.omega_max;
      break;
    case Style::Zigzag: {
      if (t % 40 == 0 && t > 0) mem.zig_sign = -mem.zig_sign;
      double target = bearing + mem.zig_sign * 0.8;
      a.turn = spec.turn_gain * wp.omega_max *
               clampd(wrap_angle(target - s.heading) / wp.omega_max, -1.0, 1.0);
      break;
    }
    default:
      a.turn = spec.turn_gain * wp.omega_max *
               clampd(wrap_angle(bearing - s.heading) / wp.omega_max, -1.0, 1.0);
      break;
  }

  if (style == Style::StopAndGo) {
    int phase = t % 100;
    if (phase == 0) mem.coasting = false;
    if (phase == 60) mem.coasting = true;
    if (mem.coasting) v_des = 0.0;
  }

  // Feedforward term cancels damping at the target speed; feedback closes
  // the remaining gap.
  a.accel = v_des * (1.0 - wp.damping) + 0.5 * (v_des - s.speed);

  double amp = spec.gait_amp * (0.35 + 0.65 * (s.speed / wp.v_max));
  for (int j = 0; j < wp.n_links; ++j) {
    double target = amp * std::sin(spec.gait_freq * t - 1.1 * j);
    a.joint_deltas[static_cast<size_t>(j)] = target - s.joints[static_cast<size_t>(j)];
  }
  return clip_action(wp, a);
}

// Canonical clip start: at rest, random pose, base at the origin.
inline kin::ChainState initial_state(const WorldParams& wp, CounterRng& rng) {
  kin::ChainState s;
  s.heading = rng.uniform(-kPi, kPi);
  s.speed = 0.0;
  for (int j = 0; j < wp.n_links; ++j) s.joints.push_back(rng.uniform(-0.3, 0.3));
  return s;
}

// ---------------------------------------------------------------- tasks

enum class TaskKind { GoToTargets, Maze, SpeedGaps };

inline std::string task_name(TaskKind k) {
  switch (k) {
    case TaskKind::GoToTargets: return "go_to_targets";
    case TaskKind::Maze: return "maze";
    case TaskKind::SpeedGaps: return "speed_gaps";
  }
  throw ConfigError("task_name: unknown task");
}

inline TaskKind task_from_name(const std::string& name) {
  if (name == "go_to_targets") return TaskKind::GoToTargets;
  if (name == "maze") return TaskKind::Maze;
  if (name == "speed_gaps") return TaskKind::SpeedGaps;
  throw ConfigError("task_from_name: unknown task '" + name + "'");
}

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;       // terminal state; no bootstrapping past it
  bool truncated = false;  // episode hit the step limit
};

// Episodic control task over the chain world. Value type: copying an env
// copies the full episode state.
class TaskEnv {
 public:
  TaskEnv(TaskKind kind, WorldParams wp) : kind_(kind), wp_(wp) {}

  TaskKind kind() const { return kind_; }
  const WorldParams& params() const { return wp_; }
  const kin::ChainState& state() const { return state_; }
  int episode_limit() const { return 1000; }
  int obs_dim() const { return kin::feature_dim(wp_.n_links) + 4; }
  int steps_taken() const { return t_; }

  // Success statistic of the episode so far: at least one goal, the maze
  // exit, or one gap crossing depending on the task.
  bool succeeded() const { return successes_ > 0; }
  int successes() const { return successes_; }

  std::vector<double> reset(uint64_t episode_seed) {
    rng_ = CounterRng(episode_seed).split("episode");
    t_ = 0;
    successes_ = 0;
    state_ = kin::ChainState{};
    state_.joints.assign(static_cast<size_t>(wp_.n_links), 0.0);
    switch (kind_) {
      case TaskKind::GoToTargets:
        state_.heading = rng_.uniform(-kPi, kPi);
        sample_goal(goal_);
        sample_goal(next_goal_);
        break;
      case TaskKind::Maze:
        state_.px = -2.0;
        state_.py = -1.5;
        state_.heading = rng_.uniform(-kPi, kPi);
        goal_ = {2.0, -1.5};
        break;
      case TaskKind::SpeedGaps:
        state_.px = -4.5;
        state_.py = 0.0;
        state_.heading = rng_.uniform(-0.3, 0.3);
        next_gap_ = 0;
        break;
    }
    return observe();
  }

  StepResult step(const Action& act) {
    if (state_.joints.empty()) throw ShapeError("TaskEnv::step: call reset first");
    kin::ChainState prev = state_;
    state_ = world::step(wp_, state_, act);
    clamp_arena();

    StepResult r;
    r.reward = 0.0;
    ++t_;
    switch (kind_) {
      case TaskKind::GoToTargets: {
        if (std::hypot(goal_[0] - state_.px, goal_[1] - state_.py) < kGoalRadius) {
          r.reward += 1.0;
          ++successes_;
          goal_ = next_goal_;
          sample_goal(next_goal_);
        }
        break;
      }
      case TaskKind::Maze: {
        resolve_wall(prev);
        double d = std::hypot(goal_[0] - state_.px, goal_[1] - state_.py);
        r.reward += -0.01 * d;
        if (d < kGoalRadius) {
          r.reward += 5.0;
          ++successes_;
          r.done = true;
        }
        break;
      }
      case TaskKind::SpeedGaps: {
        if (next_gap_ < static_cast<int>(kGaps.size())) {
          double gap_start = kGaps[static_cast<size_t>(next_gap_)][0];
          double gap_end = kGaps[static_cast<size_t>(next_gap_)][1];
          double need = kGaps[static_cast<size_t>(next_gap_)][2];
          if (state_.px >= gap_start && prev.px < gap_end) {
            if (state_.speed >= need) {
              if (state_.px >= gap_end) {
                r.reward += 1.0;
                ++successes_;
                ++next_gap_;
              }
            } else {
              // Not enough momentum: slide back to the approach side.
              state_.px = gap_start - 0.2;
              state_.speed = 0.0;
              r.reward += -0.1;
            }
          }
        }
        // Gentle progress shaping keeps the corridor task learnable.
        r.reward += 0.01 * (state_.px - prev.px);
        break;
      }
    }
    if (t_ >= episode_limit()) r.truncated = true;
    r.obs = observe();
    return r;
  }

  // Rotates a world offset into the chain frame (x along the heading).
  std::array<double, 2> egocentric(double dx, double dy) const {
    double c = std::cos(state_.heading), s = std::sin(state_.heading);
    return {c * dx + s * dy, -s * dx + c * dy};
  }

  std::vector<double> observe() const {
    std::vector<double> obs = proprio(state_);
    switch (kind_) {
      case TaskKind::GoToTargets: {
        auto a = egocentric(goal_[0] - state_.px, goal_[1] - state_.py);
        auto b = egocentric(next_goal_[0] - state_.px, next_goal_[1] - state_.py);
        obs.insert(obs.end(), {a[0], a[1], b[0], b[1]});
        break;
      }
      case TaskKind::Maze: {
        auto a = egocentric(goal_[0] - state_.px, goal_[1] - state_.py);
        obs.insert(obs.end(), {a[0], a[1], state_.px, state_.py});
        break;
      }
      case TaskKind::SpeedGaps: {
        double dist = 10.0, width = 0.0, need = 0.0;
        if (next_gap_ < static_cast<int>(kGaps.size())) {
          dist = clampd(kGaps[static_cast<size_t>(next_gap_)][0] - state_.px, -1.0, 10.0);
          width = kGaps[static_cast<size_t>(next_gap_)][1] - kGaps[static_cast<size_t>(next_gap_)][0];
          need = kGaps[static_cast<size_t>(next_gap_)][2];
        }
        obs.insert(obs.end(), {dist, width, need, state_.speed});
        break;
      }
    }
    return obs;
  }

  static constexpr double kGoalRadius = 0.6;
  static constexpr double kArena = 5.0;

 private:
  void sample_goal(std::array<double, 2>& g) {
    g[0] = rng_.uniform(-4.0, 4.0);
    g[1] = rng_.uniform(-4.0, 4.0);
  }

  void clamp_arena() {
    state_.px = clampd(state_.px, -kArena, kArena);
    state_.py = clampd(state_.py, -kArena, kArena);
  }

  // Axis-aligned wall slab x in [-0.5, 0.5], y in [-3, 1]; the base may not
  // enter, so crossings push it back to the side it came from.
  void resolve_wall(const kin::ChainState& prev) {
    const double x0 = -0.5, x1 = 0.5, y0 = -3.0, y1 = 1.0;
    if (state_.px > x0 && state_.px < x1 && state_.py > y0 && state_.py < y1) {
      if (prev.px <= x0)
        state_.px = x0;
      else if (prev.px >= x1)
        state_.px = x1;
      else if (prev.py <= y0)
        state_.py = y0;
      else if (prev.py >= y1)
        state_.py = y1;
      else
        state_.px = x0;  // fully inside should not happen; eject left
      state_.speed = 0.0;
    }
  }

  // {gap start x, gap end x, minimum crossing speed}
  static constexpr std::array<std::array<double, 3>, 3> kGaps{
      {{-1.5, -1.1, 0.08}, {1.0, 1.5, 0.11}, {3.2, 3.8, 0.14}}};

  TaskKind kind_;
  WorldParams wp_;
  kin::ChainState state_;
  CounterRng rng_{0};
  int t_ = 0;
  int successes_ = 0;
  std::array<double, 2> goal_{0, 0}, next_goal_{0, 0};
  int next_gap_ = 0;
};

}  // namespace lsp::world
