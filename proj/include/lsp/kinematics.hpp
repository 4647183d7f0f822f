#pragma once

// Planar articulated-chain geometry: forward kinematics, conversion between
// dynamic states and translation-invariant feature frames, and the
// reconstruction score used for training and imitation rewards.
//
// A state is (base position, heading, forward speed, relative joint angles).
// Segment i points along heading + sum(joints[0..i]); link i spans from
// point i to point i+1 of the kinematic chain, with point 0 at the base.
//
// A feature frame holds, in order: base velocity (2), unit heading (2) and
// one unit direction per segment (2 each), all in world axes. Velocities are
// forward differences (frame t holds pos[t+1] - pos[t]); the final frame
// repeats the previous difference.

#include <array>
#include <vector>

#include "lsp/common.hpp"
#include "lsp/tensor.hpp"

namespace lsp::kin {

using Vec2 = std::array<double, 2>;

struct ChainGeom {
  std::vector<double> link_lengths;

  static ChainGeom uniform(int n, double len) {
    ChainGeom g;
    g.link_lengths.assign(static_cast<size_t>(n), len);
    return g;
  }
  int n() const { return static_cast<int>(link_lengths.size()); }
};

struct ChainState {
  double px = 0.0, py = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  std::vector<double> joints;
};

inline int feature_dim(int n_links) { return 4 + 2 * n_links; }

// Chain points in world coordinates; result has n+1 entries, [0] is the base.
inline std::vector<Vec2> forward_kinematics(const ChainGeom& geom, const ChainState& s) {
  if (static_cast<int>(s.joints.size()) != geom.n())
    throw ShapeError("forward_kinematics: joint count does not match geometry");
  std::vector<Vec2> pts(static_cast<size_t>(geom.n()) + 1);
  pts[0] = {s.px, s.py};
  double dir = s.heading;
  for (int i = 0; i < geom.n(); ++i) {
    dir += s.joints[static_cast<size_t>(i)];
    pts[static_cast<size_t>(i) + 1] = {
        pts[static_cast<size_t>(i)][0] + geom.link_lengths[static_cast<size_t>(i)] * std::cos(dir),
        pts[static_cast<size_t>(i)][1] + geom.link_lengths[static_cast<size_t>(i)] * std::sin(dir)};
  }
  return pts;
}

// Absolute segment directions (radians): heading + cumulative joint angles.
inline std::vector<double> segment_dirs(const ChainState& s) {
  std::vector<double> d(s.joints.size());
  double dir = s.heading;
  for (size_t i = 0; i < s.joints.size(); ++i) {
    dir += s.joints[i];
    d[i] = dir;
  }
  return d;
}

using Frame = std::vector<double>;

inline Frame featurize_one(const ChainState& s, double vx, double vy) {
  Frame f;
  f.reserve(static_cast<size_t>(feature_dim(static_cast<int>(s.joints.size()))));
  f.push_back(vx);
  f.push_back(vy);
  f.push_back(std::cos(s.heading));
  f.push_back(std::sin(s.heading));
  for (double d : segment_dirs(s)) {
    f.push_back(std::cos(d));
    f.push_back(std::sin(d));
  }
  return f;
}

inline std::vector<Frame> featurize(const std::vector<ChainState>& states) {
  if (states.size() < 2)
    throw ShapeError("featurize: need at least two states for velocity differences");
  std::vector<Frame> out;
  out.reserve(states.size());
  for (size_t t = 0; t < states.size(); ++t) {
    size_t a = t + 1 < states.size() ? t : t - 1;
    double vx = states[a + 1].px - states[a].px;
    double vy = states[a + 1].py - states[a].py;
    out.push_back(featurize_one(states[t], vx, vy));
  }
  return out;
}

// Inverts featurize up to the unknown absolute start position. Speeds are
// recovered from the previous velocity; the first frame reuses its own.
inline std::vector<ChainState> defeaturize(const ChainGeom& geom, const std::vector<Frame>& frames,
                                           Vec2 start = {0.0, 0.0}) {
  const int n = geom.n();
  const int d = feature_dim(n);
  std::vector<ChainState> out;
  out.reserve(frames.size());
  double px = start[0], py = start[1];
  for (size_t t = 0; t < frames.size(); ++t) {
    const Frame& f = frames[t];
    if (static_cast<int>(f.size()) != d)
      throw ShapeError("defeaturize: frame dim " + std::to_string(f.size()) + ", expected " +
                       std::to_string(d));
    ChainState s;
    s.px = px;
    s.py = py;
    auto unit = [&](double x, double y) -> Vec2 {
      double norm = std::sqrt(x * x + y * y);
      if (!(norm > 1e-8))
        throw NumericError("defeaturize: zero-norm direction vector at frame " +
                           std::to_string(t));
      return {x / norm, y / norm};
    };
    Vec2 h = unit(f[2], f[3]);
    s.heading = std::atan2(h[1], h[0]);
    double prev = s.heading;
    s.joints.resize(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
      Vec2 u = unit(f[4 + 2 * j], f[5 + 2 * j]);
      double dir = std::atan2(u[1], u[0]);
      s.joints[static_cast<size_t>(j)] = wrap_angle(dir - prev);
      prev = dir;
    }
    if (t == 0) {
      s.speed = std::sqrt(f[0] * f[0] + f[1] * f[1]);
    } else {
      const Frame& pf = frames[t - 1];
      s.speed = std::sqrt(pf[0] * pf[0] + pf[1] * pf[1]);
    }
    out.push_back(std::move(s));
    px += f[0];
    py += f[1];
  }
  return out;
}

// Translates a sequence so its first base position is the origin.
inline std::vector<ChainState> rebase(std::vector<ChainState> states) {
  if (states.empty()) return states;
  double ox = states[0].px, oy = states[0].py;
  for (auto& s : states) {
    s.px -= ox;
    s.py -= oy;
  }
  return states;
}

// ------------------------------------------------------------ recon score

// Loss for a predicted state against a reference state. Lower is better;
// an exact match scores -0.95. The imitation reward is the negated total.
struct ReconParts {
  double pos_l1 = 0.0;    // mean L1 over chain points
  double rot_l1 = 0.0;    // mean L1 over heading and segment direction vectors
  double root_r = 0.0;    // exp(-10 * squared base offset)
  double end_r = 0.0;     // exp(-40 * squared chain-tip offset)
  double joint_r = 0.0;   // exp(-2 * mean squared wrapped joint-angle error)
  double total = 0.0;
};

inline ReconParts recon_parts(const ChainGeom& geom, const ChainState& pred,
                              const ChainState& ref) {
  const int n = geom.n();
  ReconParts out;

  auto pp = forward_kinematics(geom, pred);
  auto rp = forward_kinematics(geom, ref);
  for (int i = 0; i <= n; ++i)
    out.pos_l1 += std::fabs(pp[static_cast<size_t>(i)][0] - rp[static_cast<size_t>(i)][0]) +
                  std::fabs(pp[static_cast<size_t>(i)][1] - rp[static_cast<size_t>(i)][1]);
  out.pos_l1 /= (n + 1);

  auto pd = segment_dirs(pred);
  auto rd = segment_dirs(ref);
  out.rot_l1 = std::fabs(std::cos(pred.heading) - std::cos(ref.heading)) +
               std::fabs(std::sin(pred.heading) - std::sin(ref.heading));
  for (int i = 0; i < n; ++i)
    out.rot_l1 += std::fabs(std::cos(pd[static_cast<size_t>(i)]) - std::cos(rd[static_cast<size_t>(i)])) +
                  std::fabs(std::sin(pd[static_cast<size_t>(i)]) - std::sin(rd[static_cast<size_t>(i)]));
  out.rot_l1 /= (n + 1);

  double droot = (pred.px - ref.px) * (pred.px - ref.px) + (pred.py - ref.py) * (pred.py - ref.py);
  out.root_r = std::exp(-10.0 * droot);
  double dend = (pp[static_cast<size_t>(n)][0] - rp[static_cast<size_t>(n)][0]) *
                    (pp[static_cast<size_t>(n)][0] - rp[static_cast<size_t>(n)][0]) +
                (pp[static_cast<size_t>(n)][1] - rp[static_cast<size_t>(n)][1]) *
                    (pp[static_cast<size_t>(n)][1] - rp[static_cast<size_t>(n)][1]);
  out.end_r = std::exp(-40.0 * dend);
  double jsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double dj = wrap_angle(pred.joints[static_cast<size_t>(i)] - ref.joints[static_cast<size_t>(i)]);
    jsq += dj * dj;
  }
  out.joint_r = std::exp(-2.0 * jsq / n);

  double r = (0.1 * out.root_r + 0.15 * out.end_r) + 0.65 * out.joint_r;
  out.total = -0.5 * (1.0 - (out.pos_l1 + out.rot_l1) / 0.6) - 0.5 * r;
  return out;
}

inline double recon_total(const ChainGeom& geom, const std::vector<ChainState>& pred,
                          const std::vector<ChainState>& ref) {
  if (pred.size() != ref.size() || pred.empty())
    throw ShapeError("recon_total: sequences must be non-empty and equal length");
  double s = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) s += recon_parts(geom, pred[t], ref[t]).total;
  return s / static_cast<double>(pred.size());
}

inline double imitation_reward(const ChainGeom& geom, const ChainState& pred,
                               const ChainState& ref) {
  return -recon_parts(geom, pred, ref).total;
}

// ------------------------------------------------------------ graph recon

struct ReconLoss {
  Tensor total;        // scalar mean over batch and time
  double pos_l1 = 0.0;  // diagnostics, means over batch and time
  double rot_l1 = 0.0;
  double reward = 0.0;  // mean of -total per frame
};

// Differentiable reconstruction loss of decoded feature frames (B,T,D)
// against reference state sequences rebased to the origin.
inline ReconLoss recon_loss_graph(const ChainGeom& geom, const Tensor& frames,
                                  const std::vector<std::vector<ChainState>>& refs) {
  const int n = geom.n();
  if (frames.ndim() != 3 || frames.dim(2) != feature_dim(n))
    throw ShapeError("recon_loss_graph: frames must be (B,T," +
                     std::to_string(feature_dim(n)) + ")");
  const int B = frames.dim(0), T = frames.dim(1);
  if (static_cast<int>(refs.size()) != B)
    throw ShapeError("recon_loss_graph: batch size mismatch");
  for (const auto& r : refs)
    if (static_cast<int>(r.size()) != T)
      throw ShapeError("recon_loss_graph: reference length mismatch");

  auto chan = [&](int c) { return reshape(slice(frames, 2, c, 1), {B, T}); };

  // Predicted base path: positions integrate the velocity channel, with the
  // first position pinned at the origin.
  Tensor vx = chan(0), vy = chan(1);
  auto integrate = [&](const Tensor& v) {
    Tensor cs = cumsum(v, 1);
    if (T == 1) return Tensor::zeros({B, T});
    return concat({Tensor::zeros({B, 1}), slice(cs, 1, 0, T - 1)}, 1);
  };
  Tensor px = integrate(vx), py = integrate(vy);

  // Unit direction pairs: heading plus one per segment.
  std::vector<Tensor> ux(static_cast<size_t>(n) + 1), uy(static_cast<size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    Tensor x = chan(2 + 2 * i), y = chan(3 + 2 * i);
    Tensor norm = sqrtt(add(square(x), square(y)));
    for (double v : norm.data())
      if (!(v > 1e-8))
        throw NumericError("recon_loss_graph: zero-norm direction vector in decoded frames");
    ux[static_cast<size_t>(i)] = div(x, norm);
    uy[static_cast<size_t>(i)] = div(y, norm);
  }

  // Reference constants.
  auto ref_tensor = [&](auto&& fill) {
    std::vector<double> buf(static_cast<size_t>(B) * T);
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t) buf[static_cast<size_t>(b) * T + t] = fill(b, t);
    return Tensor::from({B, T}, std::move(buf));
  };

  std::vector<std::vector<std::vector<Vec2>>> ref_pts(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    ref_pts[static_cast<size_t>(b)].reserve(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t)
      ref_pts[static_cast<size_t>(b)].push_back(
          forward_kinematics(geom, refs[static_cast<size_t>(b)][static_cast<size_t>(t)]));
  }

  // Predicted chain points by accumulating scaled unit directions.
  std::vector<Tensor> PX(static_cast<size_t>(n) + 1), PY(static_cast<size_t>(n) + 1);
  PX[0] = px;
  PY[0] = py;
  for (int i = 0; i < n; ++i) {
    double L = geom.link_lengths[static_cast<size_t>(i)];
    PX[static_cast<size_t>(i) + 1] = add(PX[static_cast<size_t>(i)], scale(ux[static_cast<size_t>(i) + 1], L));
    PY[static_cast<size_t>(i) + 1] = add(PY[static_cast<size_t>(i)], scale(uy[static_cast<size_t>(i) + 1], L));
  }

  Tensor pos_l1;
  for (int i = 0; i <= n; ++i) {
    Tensor rx = ref_tensor([&](int b, int t) { return ref_pts[b][t][static_cast<size_t>(i)][0]; });
    Tensor ry = ref_tensor([&](int b, int t) { return ref_pts[b][t][static_cast<size_t>(i)][1]; });
    Tensor term = add(abst(sub(PX[static_cast<size_t>(i)], rx)), abst(sub(PY[static_cast<size_t>(i)], ry)));
    pos_l1 = pos_l1.defined() ? add(pos_l1, term) : term;
  }
  pos_l1 = scale(pos_l1, 1.0 / (n + 1));

  Tensor rot_l1;
  for (int i = 0; i <= n; ++i) {
    Tensor rx = ref_tensor([&](int b, int t) {
      const ChainState& s = refs[b][static_cast<size_t>(t)];
      return i == 0 ? std::cos(s.heading) : std::cos(segment_dirs(s)[static_cast<size_t>(i - 1)]);
    });
    Tensor ry = ref_tensor([&](int b, int t) {
      const ChainState& s = refs[b][static_cast<size_t>(t)];
      return i == 0 ? std::sin(s.heading) : std::sin(segment_dirs(s)[static_cast<size_t>(i - 1)]);
    });
    Tensor term = add(abst(sub(ux[static_cast<size_t>(i)], rx)), abst(sub(uy[static_cast<size_t>(i)], ry)));
    rot_l1 = rot_l1.defined() ? add(rot_l1, term) : term;
  }
  rot_l1 = scale(rot_l1, 1.0 / (n + 1));

  Tensor rbx = ref_tensor([&](int b, int t) { return refs[b][static_cast<size_t>(t)].px; });
  Tensor rby = ref_tensor([&](int b, int t) { return refs[b][static_cast<size_t>(t)].py; });
  Tensor root_r = expt(scale(add(square(sub(px, rbx)), square(sub(py, rby))), -10.0));

  Tensor rex = ref_tensor([&](int b, int t) { return ref_pts[b][t][static_cast<size_t>(n)][0]; });
  Tensor rey = ref_tensor([&](int b, int t) { return ref_pts[b][t][static_cast<size_t>(n)][1]; });
  Tensor end_r = expt(scale(
      add(square(sub(PX[static_cast<size_t>(n)], rex)), square(sub(PY[static_cast<size_t>(n)], rey))), -40.0));

  // Relative joint angles from consecutive unit directions via atan2 of the
  // cross and dot products, compared against the wrapped reference angles.
  Tensor jsq;
  for (int j = 0; j < n; ++j) {
    Tensor cross = sub(mul(ux[static_cast<size_t>(j)], uy[static_cast<size_t>(j) + 1]),
                       mul(uy[static_cast<size_t>(j)], ux[static_cast<size_t>(j) + 1]));
    Tensor dot = add(mul(ux[static_cast<size_t>(j)], ux[static_cast<size_t>(j) + 1]),
                     mul(uy[static_cast<size_t>(j)], uy[static_cast<size_t>(j) + 1]));
    Tensor prel = atan2t(cross, dot);
    Tensor rrel = ref_tensor(
        [&](int b, int t) { return wrap_angle(refs[b][static_cast<size_t>(t)].joints[static_cast<size_t>(j)]); });
    Tensor diff = sub(prel, rrel);
    Tensor wrapped = atan2t(sint(diff), cost(diff));
    jsq = jsq.defined() ? add(jsq, square(wrapped)) : square(wrapped);
  }
  Tensor joint_r = expt(scale(jsq, -2.0 / n));

  Tensor r = add(add(scale(root_r, 0.1), scale(end_r, 0.15)), scale(joint_r, 0.65));
  Tensor total =
      add(scale(add_scalar(neg(scale(add(pos_l1, rot_l1), 1.0 / 0.6)), 1.0), -0.5), scale(r, -0.5));

  ReconLoss out;
  out.total = mean(total);
  {
    NoGradGuard ng;
    out.pos_l1 = mean(pos_l1).item();
    out.rot_l1 = mean(rot_l1).item();
    out.reward = -out.total.item();
  }
  return out;
}

}  // namespace lsp::kin
