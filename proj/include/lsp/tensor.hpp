#pragma once

// Reverse-mode autodiff over dense f64 tensors, plus the Adam optimizer.
//
// Conventions:
//   - Row-major storage, shapes are small vectors of int.
//   - Sequence tensors are laid out (batch, time, channels).
//   - Ops build a DAG of shared TensorImpl nodes; backward() walks it once
//     in reverse topological order. Running backward through the same
//     interior node twice is an error; leaves accumulate across graphs.
//   - Binary elementwise ops broadcast when one shape is a suffix of the
//     other (bias over channels, masks over batched score matrices).
//   - Every op validates that its output is finite and names itself when
//     it is not.

#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "lsp/common.hpp"

namespace lsp {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("shape dims must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// ---------------------------------------------------------------- grad mode

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---------------------------------------------------------------- node

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same numel as data
  bool requires_grad = false;
  bool is_leaf = true;
  bool backward_spent = false;  // interior nodes may serve one backward pass
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Receives *this (with grad populated) and pushes gradient to parents.
  std::function<void(const TensorImpl&)> backward_fn;

  size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double v) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(shape_numel(shape), v);
    impl->shape = std::move(shape);
    return Tensor(impl);
  }

  static Tensor from(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("Tensor::from: data size does not match shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return Tensor(impl);
  }

  static Tensor scalar(double v) { return filled({1}, v); }

  static Tensor randn(Shape shape, CounterRng& rng, double std = 1.0) {
    auto t = zeros(std::move(shape));
    for (double& v : t.impl_->data) v = std * rng.normal();
    return t;
  }

  static Tensor rand_uniform(Shape shape, CounterRng& rng, double lo, double hi) {
    auto t = zeros(std::move(shape));
    for (double& v : t.impl_->data) v = rng.uniform(lo, hi);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const {
    int nd = static_cast<int>(impl_->shape.size());
    if (i < 0) i += nd;
    if (i < 0 || i >= nd) throw ShapeError("Tensor::dim: axis out of range");
    return impl_->shape[static_cast<size_t>(i)];
  }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  size_t numel() const { return impl_->numel(); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  const std::vector<double>& grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }

  double item() const {
    if (numel() != 1) throw ShapeError("Tensor::item: tensor is not scalar");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    if (!impl_->is_leaf) throw ShapeError("set_requires_grad: only valid on leaf tensors");
    impl_->requires_grad = v;
    return *this;
  }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

inline Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                          std::vector<std::shared_ptr<TensorImpl>> parents,
                          std::function<void(const TensorImpl&)> backward_fn) {
  check_finite(op, data.data(), data.size());
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->op = op;
  bool track = grad_enabled();
  if (track) {
    bool any = false;
    for (auto& p : parents)
      if (p->requires_grad) any = true;
    track = any;
  }
  if (track) {
    impl->requires_grad = true;
    impl->is_leaf = false;
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(impl);
}

inline void accum(TensorImpl& dst, const std::vector<double>& g) {
  dst.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------- backward

inline void backward(const Tensor& root) {
  auto r = root.impl();
  if (!r) throw ShapeError("backward: undefined tensor");
  if (root.numel() != 1) throw ShapeError("backward: root must be scalar");
  if (!r->requires_grad)
    throw ShapeError("backward: root does not require grad");

  // Iterative post-order DFS for reverse topological order.
  std::vector<TensorImpl*> topo;
  {
    std::vector<std::pair<TensorImpl*, size_t>> st;
    std::unordered_map<TensorImpl*, int> state;  // 0 new, 1 open, 2 done
    st.emplace_back(r.get(), 0);
    state[r.get()] = 1;
    while (!st.empty()) {
      auto& [node, idx] = st.back();
      if (idx < node->parents.size()) {
        TensorImpl* p = node->parents[idx++].get();
        if (!p->requires_grad) continue;
        auto it = state.find(p);
        if (it == state.end() || it->second == 0) {
          state[p] = 1;
          st.emplace_back(p, 0);
        }
      } else {
        state[node] = 2;
        topo.push_back(node);
        st.pop_back();
      }
    }
  }

  // Spent-node check: interior nodes may only participate in one backward.
  for (TensorImpl* n : topo) {
    if (!n->is_leaf && n->backward_spent)
      throw ShapeError(std::string("backward: graph through op '") + n->op +
                       "' was already consumed by a previous backward pass");
  }

  r->ensure_grad();
  r->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl* n = *it;
    if (n->is_leaf) continue;
    n->backward_spent = true;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------- elementwise

namespace detail {

// Broadcast plan for binary ops: shapes equal, or one is a suffix of the
// other and cycles through the flat index space of the larger.
struct BcPlan {
  Shape out_shape;
  size_t n_out = 0, n_a = 0, n_b = 0;
};

inline bool shape_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  size_t off = big.size() - small.size();
  for (size_t i = 0; i < small.size(); ++i)
    if (small[i] != big[off + i]) return false;
  return true;
}

inline BcPlan bc_plan(const char* op, const Tensor& a, const Tensor& b) {
  BcPlan p;
  p.n_a = a.numel();
  p.n_b = b.numel();
  if (a.shape() == b.shape()) {
    p.out_shape = a.shape();
  } else if (shape_suffix(b.shape(), a.shape())) {
    p.out_shape = a.shape();
  } else if (shape_suffix(a.shape(), b.shape())) {
    p.out_shape = b.shape();
  } else {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  p.n_out = shape_numel(p.out_shape);
  return p;
}

template <class F>
Tensor ew_binary(const char* op, const Tensor& a, const Tensor& b) {
  BcPlan plan = bc_plan(op, a, b);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(plan.n_out);
  const size_t na = plan.n_a, nb = plan.n_b;
  for (size_t i = 0; i < plan.n_out; ++i) out[i] = F::f(av[i % na], bv[i % nb]);

  auto pa = a.impl();
  auto pb = b.impl();
  return make_result(
      op, plan.out_shape, std::move(out), {pa, pb}, [pa, pb, na, nb](const TensorImpl& self) {
        const size_t n = self.numel();
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (size_t i = 0; i < n; ++i)
            pa->grad[i % na] += self.grad[i] * F::dfa(pa->data[i % na], pb->data[i % nb]);
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (size_t i = 0; i < n; ++i)
            pb->grad[i % nb] += self.grad[i] * F::dfb(pa->data[i % na], pb->data[i % nb]);
        }
      });
}

template <class F>
Tensor ew_unary(const char* op, const Tensor& x) {
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = F::f(xv[i]);
  auto px = x.impl();
  return make_result(op, x.shape(), std::move(out), {px}, [px](const TensorImpl& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (size_t i = 0; i < self.numel(); ++i)
      px->grad[i] += self.grad[i] * F::df(px->data[i], self.data[i]);
  });
}

}  // namespace detail

// f(a, b) with partials; y is never needed for binaries here.
#define LSP_BINOP(NAME, FEXPR, DAEXPR, DBEXPR)                      \
  namespace detail {                                                \
  struct NAME##_fn {                                                \
    static double f(double a, double b) { return FEXPR; }           \
    static double dfa(double a, double b) {                         \
      (void)a; (void)b; return DAEXPR;                              \
    }                                                               \
    static double dfb(double a, double b) {                         \
      (void)a; (void)b; return DBEXPR;                              \
    }                                                               \
  };                                                                \
  }                                                                 \
  inline Tensor NAME(const Tensor& a, const Tensor& b) {            \
    return detail::ew_binary<detail::NAME##_fn>(#NAME, a, b);       \
  }

LSP_BINOP(add, a + b, 1.0, 1.0)
LSP_BINOP(sub, a - b, 1.0, -1.0)
LSP_BINOP(mul, a * b, b, a)
LSP_BINOP(div, a / b, 1.0 / b, -a / (b * b))
LSP_BINOP(atan2t, std::atan2(a, b), b / (a * a + b * b), -a / (a * a + b * b))
LSP_BINOP(minimum, a <= b ? a : b, a <= b ? 1.0 : 0.0, a <= b ? 0.0 : 1.0)
LSP_BINOP(maximum, a >= b ? a : b, a >= b ? 1.0 : 0.0, a >= b ? 0.0 : 1.0)
#undef LSP_BINOP

// f(x) with derivative as a function of input x and output y.
#define LSP_UNOP(NAME, FEXPR, DEXPR)                              \
  namespace detail {                                              \
  struct NAME##_fn {                                              \
    static double f(double x) { return FEXPR; }                   \
    static double df(double x, double y) {                        \
      (void)x; (void)y; return DEXPR;                             \
    }                                                             \
  };                                                              \
  }                                                               \
  inline Tensor NAME(const Tensor& x) {                           \
    return detail::ew_unary<detail::NAME##_fn>(#NAME, x);         \
  }

LSP_UNOP(neg, -x, -1.0)
LSP_UNOP(expt, std::exp(x), y)
LSP_UNOP(logt, std::log(x), 1.0 / x)
LSP_UNOP(sqrtt, std::sqrt(x), 0.5 / y)
LSP_UNOP(tanht, std::tanh(x), 1.0 - y * y)
LSP_UNOP(sint, std::sin(x), std::cos(x))
LSP_UNOP(cost, std::cos(x), -std::sin(x))
LSP_UNOP(abst, std::fabs(x), x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0))
LSP_UNOP(square, x* x, 2.0 * x)
LSP_UNOP(atanht, std::atanh(x), 1.0 / (1.0 - x * x))
#undef LSP_UNOP

inline Tensor gelu(const Tensor& x) {
  struct fn {
    static double f(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }
    static double df(double x, double y) {
      (void)y;
      double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779;
      return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)) + x * phi;
    }
  };
  return detail::ew_unary<fn>("gelu", x);
}

inline Tensor scale(const Tensor& x, double c) {
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
  auto px = x.impl();
  return detail::make_result("scale", x.shape(), std::move(out), {px},
                             [px, c](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t i = 0; i < self.numel(); ++i)
                                 px->grad[i] += c * self.grad[i];
                             });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + c;
  auto px = x.impl();
  return detail::make_result("add_scalar", x.shape(), std::move(out), {px},
                             [px](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t i = 0; i < self.numel(); ++i)
                                 px->grad[i] += self.grad[i];
                             });
}

inline Tensor clampt(const Tensor& x, double lo, double hi) {
  if (!(lo < hi)) throw ShapeError("clampt: lo must be < hi");
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = std::min(hi, std::max(lo, xv[i]));
  auto px = x.impl();
  return detail::make_result("clamp", x.shape(), std::move(out), {px},
                             [px, lo, hi](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t i = 0; i < self.numel(); ++i) {
                                 double v = px->data[i];
                                 if (v >= lo && v <= hi) px->grad[i] += self.grad[i];
                               }
                             });
}

inline Tensor detach(const Tensor& x) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = x.shape();
  impl->data = x.data();
  impl->op = "detach";
  return Tensor(impl);
}

// ---------------------------------------------------------------- kernels

namespace detail {

// All kernels keep saxpy-shaped inner loops (independent accumulation chains
// vectorize without float reassociation) and process four rows per pass so
// each loaded B panel line is reused, which is where the single-core win is.
// Every output element still accumulates in ascending k (or m) order, so
// results are bit-identical to the unblocked forms.

// C(M,N) = A(M,K) * B(K,N), optionally accumulating into C.
inline void mm_nn(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
  int m = 0;
  for (; m + 4 <= M; m += 4) {
    const double* a0 = A + static_cast<size_t>(m) * K;
    const double* a1 = a0 + K;
    const double* a2 = a1 + K;
    const double* a3 = a2 + K;
    double* c0 = C + static_cast<size_t>(m) * N;
    double* c1 = c0 + N;
    double* c2 = c1 + N;
    double* c3 = c2 + N;
    if (!acc)
      for (int n = 0; n < N; ++n) c0[n] = c1[n] = c2[n] = c3[n] = 0.0;
    for (int k = 0; k < K; ++k) {
      double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
      const double* b = B + static_cast<size_t>(k) * N;
      for (int n = 0; n < N; ++n) {
        double bn = b[n];
        c0[n] += v0 * bn;
        c1[n] += v1 * bn;
        c2[n] += v2 * bn;
        c3[n] += v3 * bn;
      }
    }
  }
  for (; m < M; ++m) {
    double* c = C + static_cast<size_t>(m) * N;
    if (!acc)
      for (int n = 0; n < N; ++n) c[n] = 0.0;
    const double* arow = A + static_cast<size_t>(m) * K;
    for (int k = 0; k < K; ++k) {
      double a = arow[k];
      const double* b = B + static_cast<size_t>(k) * N;
      for (int n = 0; n < N; ++n) c[n] += a * b[n];
    }
  }
}

// C(M,N) = A(M,K) * B(N,K)^T. B is transposed into scratch first; dot-product
// reductions would defeat vectorization.
inline void mm_nt(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
  std::vector<double> bt(static_cast<size_t>(K) * N);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k)
      bt[static_cast<size_t>(k) * N + n] = B[static_cast<size_t>(n) * K + k];
  mm_nn(A, bt.data(), C, M, K, N, acc);
}

// C(K,N) = A(M,K)^T * B(M,N).
inline void mm_tn(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
  if (!acc)
    for (size_t i = 0; i < static_cast<size_t>(K) * N; ++i) C[i] = 0.0;
  int m = 0;
  for (; m + 4 <= M; m += 4) {
    const double* a0 = A + static_cast<size_t>(m) * K;
    const double* a1 = a0 + K;
    const double* a2 = a1 + K;
    const double* a3 = a2 + K;
    const double* b0 = B + static_cast<size_t>(m) * N;
    const double* b1 = b0 + N;
    const double* b2 = b1 + N;
    const double* b3 = b2 + N;
    for (int k = 0; k < K; ++k) {
      double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
      double* crow = C + static_cast<size_t>(k) * N;
      for (int n = 0; n < N; ++n) {
        double s = crow[n];
        s += v0 * b0[n];
        s += v1 * b1[n];
        s += v2 * b2[n];
        s += v3 * b3[n];
        crow[n] = s;
      }
    }
  }
  for (; m < M; ++m) {
    const double* arow = A + static_cast<size_t>(m) * K;
    const double* brow = B + static_cast<size_t>(m) * N;
    for (int k = 0; k < K; ++k) {
      double a = arow[k];
      double* crow = C + static_cast<size_t>(k) * N;
      for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------- matmul

// a: (..., M, K); b: (K, N) or (..., K, N) with identical leading dims.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) throw ShapeError("matmul: operands must have >= 2 dims");
  int M = a.dim(-2), K = a.dim(-1);
  int Kb = b.dim(-2), N = b.dim(-1);
  if (K != Kb)
    throw ShapeError("matmul: inner dims disagree " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  bool shared_b = (b.ndim() == 2 && a.ndim() >= 2);
  size_t batch = a.numel() / (static_cast<size_t>(M) * K);
  if (!shared_b) {
    Shape ab(a.shape().begin(), a.shape().end() - 2);
    Shape bb(b.shape().begin(), b.shape().end() - 2);
    if (ab != bb) throw ShapeError("matmul: batch dims disagree");
  }

  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<double> out(batch * M * N);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (size_t i = 0; i < batch; ++i) {
    detail::mm_nn(ap + i * M * K, shared_b ? bp : bp + i * static_cast<size_t>(K) * N,
                  out.data() + i * static_cast<size_t>(M) * N, M, K, N, false);
  }

  auto pa = a.impl();
  auto pb = b.impl();
  return detail::make_result(
      "matmul", std::move(out_shape), std::move(out), {pa, pb},
      [pa, pb, M, K, N, batch, shared_b](const TensorImpl& self) {
        const double* g = self.grad.data();
        if (pa->requires_grad) {
          pa->ensure_grad();
          const double* bp = pb->data.data();
          for (size_t i = 0; i < batch; ++i)
            detail::mm_nt(g + i * static_cast<size_t>(M) * N,
                          shared_b ? bp : bp + i * static_cast<size_t>(K) * N,
                          pa->grad.data() + i * static_cast<size_t>(M) * K, M, N, K, true);
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          const double* ap = pa->data.data();
          for (size_t i = 0; i < batch; ++i)
            detail::mm_tn(ap + i * static_cast<size_t>(M) * K, g + i * static_cast<size_t>(M) * N,
                          pb->grad.data() + (shared_b ? 0 : i * static_cast<size_t>(K) * N), M, K,
                          N, true);
        }
      });
}

inline Tensor transpose_last(const Tensor& x) {
  if (x.ndim() < 2) throw ShapeError("transpose_last: needs >= 2 dims");
  int M = x.dim(-2), N = x.dim(-1);
  size_t batch = x.numel() / (static_cast<size_t>(M) * N);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  std::vector<double> out(x.numel());
  const double* xp = x.data().data();
  for (size_t i = 0; i < batch; ++i) {
    const double* src = xp + i * static_cast<size_t>(M) * N;
    double* dst = out.data() + i * static_cast<size_t>(M) * N;
    for (int m = 0; m < M; ++m)
      for (int n = 0; n < N; ++n) dst[static_cast<size_t>(n) * M + m] = src[static_cast<size_t>(m) * N + n];
  }
  auto px = x.impl();
  return detail::make_result("transpose_last", std::move(out_shape), std::move(out), {px},
                             [px, M, N, batch](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               const double* g = self.grad.data();
                               for (size_t i = 0; i < batch; ++i) {
                                 const double* src = g + i * static_cast<size_t>(M) * N;
                                 double* dst = px->grad.data() + i * static_cast<size_t>(M) * N;
                                 for (int n = 0; n < N; ++n)
                                   for (int m = 0; m < M; ++m)
                                     dst[static_cast<size_t>(m) * N + n] += src[static_cast<size_t>(n) * M + m];
                               }
                             });
}

// ---------------------------------------------------------------- conv1d

namespace detail {

// Gathers x(B,T,C) into col(B*T, K*C) where output row (b,t), tap j reads
// input step t + (flip ? pad - j : j - pad); out-of-range steps contribute 0.
inline void im2col(const double* x, double* col, int B, int T, int C, int K, int pad, bool flip) {
  for (int b = 0; b < B; ++b) {
    const double* xb = x + static_cast<size_t>(b) * T * C;
    for (int t = 0; t < T; ++t) {
      double* row = col + (static_cast<size_t>(b) * T + t) * K * C;
      for (int j = 0; j < K; ++j) {
        int src = flip ? t + pad - j : t + j - pad;
        double* dst = row + static_cast<size_t>(j) * C;
        if (src < 0 || src >= T) {
          std::fill(dst, dst + C, 0.0);
        } else {
          const double* s = xb + static_cast<size_t>(src) * C;
          std::copy(s, s + C, dst);
        }
      }
    }
  }
}

inline void col2im_add(const double* col, double* dx, int B, int T, int C, int K, int pad,
                       bool flip) {
  for (int b = 0; b < B; ++b) {
    double* xb = dx + static_cast<size_t>(b) * T * C;
    for (int t = 0; t < T; ++t) {
      const double* row = col + (static_cast<size_t>(b) * T + t) * K * C;
      for (int j = 0; j < K; ++j) {
        int src = flip ? t + pad - j : t + j - pad;
        if (src < 0 || src >= T) continue;
        double* dst = xb + static_cast<size_t>(src) * C;
        const double* s = row + static_cast<size_t>(j) * C;
        for (int c = 0; c < C; ++c) dst[c] += s[c];
      }
    }
  }
}

inline Tensor conv1d_core(const char* name, const Tensor& x, const Tensor& w, const Tensor& bias,
                          int pad, bool flip) {
  if (x.ndim() != 3) throw ShapeError(std::string(name) + ": input must be (B,T,C)");
  if (w.ndim() != 2) throw ShapeError(std::string(name) + ": weight must be (K*Cin, Cout)");
  int B = x.dim(0), T = x.dim(1), C = x.dim(2);
  int KC = w.dim(0), Cout = w.dim(1);
  if (KC % C != 0)
    throw ShapeError(std::string(name) + ": weight rows not a multiple of input channels");
  int K = KC / C;
  if (pad < 0) pad = (K - 1) / 2;
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Cout))
    throw ShapeError(std::string(name) + ": bias must be (Cout)");

  auto col = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * T * KC);
  im2col(x.data().data(), col->data(), B, T, C, K, pad, flip);

  std::vector<double> out(static_cast<size_t>(B) * T * Cout);
  mm_nn(col->data(), w.data().data(), out.data(), B * T, KC, Cout, false);
  if (bias.defined()) {
    const double* bp = bias.data().data();
    for (size_t r = 0; r < static_cast<size_t>(B) * T; ++r) {
      double* orow = out.data() + r * Cout;
      for (int c = 0; c < Cout; ++c) orow[c] += bp[c];
    }
  }

  auto px = x.impl();
  auto pw = w.impl();
  std::vector<std::shared_ptr<TensorImpl>> parents{px, pw};
  std::shared_ptr<TensorImpl> pbias;
  if (bias.defined()) {
    pbias = bias.impl();
    parents.push_back(pbias);
  }
  return make_result(
      name, {B, T, Cout}, std::move(out), std::move(parents),
      [px, pw, pbias, col, B, T, C, K, KC, Cout, pad, flip](const TensorImpl& self) {
        const double* g = self.grad.data();
        if (pw->requires_grad) {
          pw->ensure_grad();
          mm_tn(col->data(), g, pw->grad.data(), B * T, KC, Cout, true);
        }
        if (pbias && pbias->requires_grad) {
          pbias->ensure_grad();
          for (size_t r = 0; r < static_cast<size_t>(B) * T; ++r) {
            const double* grow = g + r * Cout;
            for (int c = 0; c < Cout; ++c) pbias->grad[c] += grow[c];
          }
        }
        if (px->requires_grad) {
          px->ensure_grad();
          std::vector<double> dcol(col->size());
          mm_nt(g, pw->data.data(), dcol.data(), B * T, Cout, KC, false);
          col2im_add(dcol.data(), px->grad.data(), B, T, C, K, pad, flip);
        }
      });
}

}  // namespace detail

// Stride-1 1-D convolution over (B,T,C) input; weight (K*Cin, Cout) rows
// ordered tap-major. pad < 0 means symmetric same-length padding (K odd).
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int pad = -1) {
  return detail::conv1d_core("conv1d", x, w, bias, pad, false);
}

// Adjoint of conv1d in its input argument: for same-length symmetric padding,
// <conv1d(x,w), y> == <x, conv_transpose1d(y,w)>.
inline Tensor conv_transpose1d(const Tensor& x, const Tensor& w, const Tensor& bias,
                               int pad = -1) {
  return detail::conv1d_core("conv_transpose1d", x, w, bias, pad, true);
}

// ---------------------------------------------------------------- rows ops

namespace detail {

inline std::pair<size_t, int> rows_of(const Tensor& x) {
  if (x.ndim() < 1) throw ShapeError("row op: tensor has no dims");
  int C = x.dim(-1);
  return {x.numel() / static_cast<size_t>(C), C};
}

}  // namespace detail

// Normalizes the last dim to zero mean and unit variance (no affine part).
inline Tensor layernorm(const Tensor& x, double eps = 1e-5) {
  auto [rows, C] = detail::rows_of(x);
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(rows);
  const double* xp = x.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = xp + r * C;
    double mu = 0.0;
    for (int c = 0; c < C; ++c) mu += xr[c];
    mu /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= C;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    double* orow = out.data() + r * C;
    for (int c = 0; c < C; ++c) orow[c] = (xr[c] - mu) * is;
  }
  auto px = x.impl();
  auto istd = std::make_shared<std::vector<double>>(std::move(inv_std));
  size_t rows_c = rows;
  int C_c = C;
  return detail::make_result(
      "layernorm", x.shape(), std::move(out), {px}, [px, istd, rows_c, C_c](const TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t r = 0; r < rows_c; ++r) {
          const double* y = self.data.data() + r * C_c;
          const double* g = self.grad.data() + r * C_c;
          double* dx = px->grad.data() + r * C_c;
          double gmean = 0.0, gymean = 0.0;
          for (int c = 0; c < C_c; ++c) {
            gmean += g[c];
            gymean += g[c] * y[c];
          }
          gmean /= C_c;
          gymean /= C_c;
          double is = (*istd)[r];
          for (int c = 0; c < C_c; ++c) dx[c] += is * (g[c] - gmean - y[c] * gymean);
        }
      });
}

inline Tensor softmax(const Tensor& x) {
  auto [rows, C] = detail::rows_of(x);
  std::vector<double> out(x.numel());
  const double* xp = x.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = xp + r * C;
    double* orow = out.data() + r * C;
    double mx = xr[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
    double s = 0.0;
    for (int c = 0; c < C; ++c) {
      orow[c] = std::exp(xr[c] - mx);
      s += orow[c];
    }
    double inv = 1.0 / s;
    for (int c = 0; c < C; ++c) orow[c] *= inv;
  }
  auto px = x.impl();
  size_t rows_c = rows;
  int C_c = C;
  return detail::make_result("softmax", x.shape(), std::move(out), {px},
                             [px, rows_c, C_c](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t r = 0; r < rows_c; ++r) {
                                 const double* y = self.data.data() + r * C_c;
                                 const double* g = self.grad.data() + r * C_c;
                                 double* dx = px->grad.data() + r * C_c;
                                 double dot = 0.0;
                                 for (int c = 0; c < C_c; ++c) dot += g[c] * y[c];
                                 for (int c = 0; c < C_c; ++c) dx[c] += y[c] * (g[c] - dot);
                               }
                             });
}

inline Tensor log_softmax(const Tensor& x) {
  auto [rows, C] = detail::rows_of(x);
  std::vector<double> out(x.numel());
  const double* xp = x.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = xp + r * C;
    double* orow = out.data() + r * C;
    double mx = xr[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += std::exp(xr[c] - mx);
    double lse = mx + std::log(s);
    for (int c = 0; c < C; ++c) orow[c] = xr[c] - lse;
  }
  auto px = x.impl();
  size_t rows_c = rows;
  int C_c = C;
  return detail::make_result("log_softmax", x.shape(), std::move(out), {px},
                             [px, rows_c, C_c](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t r = 0; r < rows_c; ++r) {
                                 const double* y = self.data.data() + r * C_c;
                                 const double* g = self.grad.data() + r * C_c;
                                 double* dx = px->grad.data() + r * C_c;
                                 double gsum = 0.0;
                                 for (int c = 0; c < C_c; ++c) gsum += g[c];
                                 for (int c = 0; c < C_c; ++c) dx[c] += g[c] - std::exp(y[c]) * gsum;
                               }
                             });
}

// log(sum(exp(x))) over the last dim; output drops that dim.
inline Tensor logsumexp(const Tensor& x) {
  auto [rows, C] = detail::rows_of(x);
  if (x.ndim() < 2) throw ShapeError("logsumexp: needs >= 2 dims");
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> out(rows);
  const double* xp = x.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = xp + r * C;
    double mx = xr[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += std::exp(xr[c] - mx);
    out[r] = mx + std::log(s);
  }
  auto px = x.impl();
  size_t rows_c = rows;
  int C_c = C;
  return detail::make_result("logsumexp", std::move(out_shape), std::move(out), {px},
                             [px, rows_c, C_c](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t r = 0; r < rows_c; ++r) {
                                 double o = self.data[r];
                                 double g = self.grad[r];
                                 const double* xr = px->data.data() + r * C_c;
                                 double* dx = px->grad.data() + r * C_c;
                                 for (int c = 0; c < C_c; ++c) dx[c] += g * std::exp(xr[c] - o);
                               }
                             });
}

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto px = x.impl();
  return detail::make_result("sum", {1}, {s}, {px}, [px](const TensorImpl& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    double g = self.grad[0];
    for (double& v : px->grad) v += g;
  });
}

inline Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  double inv = 1.0 / static_cast<double>(x.numel());
  auto px = x.impl();
  return detail::make_result("mean", {1}, {s * inv}, {px}, [px, inv](const TensorImpl& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    double g = self.grad[0] * inv;
    for (double& v : px->grad) v += g;
  });
}

// Sums the last dim away.
inline Tensor sum_last(const Tensor& x) {
  if (x.ndim() < 2) throw ShapeError("sum_last: needs >= 2 dims");
  auto [rows, C] = detail::rows_of(x);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> out(rows, 0.0);
  const double* xp = x.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = xp + r * C;
    for (int c = 0; c < C; ++c) out[r] += xr[c];
  }
  auto px = x.impl();
  size_t rows_c = rows;
  int C_c = C;
  return detail::make_result("sum_last", std::move(out_shape), std::move(out), {px},
                             [px, rows_c, C_c](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t r = 0; r < rows_c; ++r) {
                                 double g = self.grad[r];
                                 double* dx = px->grad.data() + r * C_c;
                                 for (int c = 0; c < C_c; ++c) dx[c] += g;
                               }
                             });
}

// ---------------------------------------------------------------- shape ops

namespace detail {

struct DimSplit {
  size_t outer, inner;
  int n;
};

inline DimSplit dim_split(const Tensor& x, int dim) {
  int nd = x.ndim();
  if (dim < 0) dim += nd;
  if (dim < 0 || dim >= nd) throw ShapeError("dim out of range");
  DimSplit s{1, 1, x.dim(dim)};
  for (int i = 0; i < dim; ++i) s.outer *= static_cast<size_t>(x.dim(i));
  for (int i = dim + 1; i < nd; ++i) s.inner *= static_cast<size_t>(x.dim(i));
  return s;
}

inline int norm_dim(const Tensor& x, int dim) {
  int nd = x.ndim();
  if (dim < 0) dim += nd;
  if (dim < 0 || dim >= nd) throw ShapeError("dim out of range");
  return dim;
}

}  // namespace detail

inline Tensor cumsum(const Tensor& x, int dim) {
  auto sp = detail::dim_split(x, dim);
  std::vector<double> out(x.numel());
  const double* xp = x.data().data();
  for (size_t o = 0; o < sp.outer; ++o)
    for (size_t in = 0; in < sp.inner; ++in) {
      double acc = 0.0;
      for (int i = 0; i < sp.n; ++i) {
        size_t idx = (o * sp.n + static_cast<size_t>(i)) * sp.inner + in;
        acc += xp[idx];
        out[idx] = acc;
      }
    }
  auto px = x.impl();
  return detail::make_result("cumsum", x.shape(), std::move(out), {px},
                             [px, sp](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t o = 0; o < sp.outer; ++o)
                                 for (size_t in = 0; in < sp.inner; ++in) {
                                   double acc = 0.0;
                                   for (int i = sp.n - 1; i >= 0; --i) {
                                     size_t idx = (o * sp.n + static_cast<size_t>(i)) * sp.inner + in;
                                     acc += self.grad[idx];
                                     px->grad[idx] += acc;
                                   }
                                 }
                             });
}

inline Tensor slice(const Tensor& x, int dim, int start, int len) {
  auto sp = detail::dim_split(x, dim);
  int d = detail::norm_dim(x, dim);
  if (start < 0 || len <= 0 || start + len > sp.n)
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for dim size " +
                     std::to_string(sp.n));
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(d)] = len;
  std::vector<double> out(sp.outer * static_cast<size_t>(len) * sp.inner);
  const double* xp = x.data().data();
  for (size_t o = 0; o < sp.outer; ++o)
    for (int i = 0; i < len; ++i) {
      const double* src = xp + (o * sp.n + static_cast<size_t>(start + i)) * sp.inner;
      double* dst = out.data() + (o * len + static_cast<size_t>(i)) * sp.inner;
      std::copy(src, src + sp.inner, dst);
    }
  auto px = x.impl();
  return detail::make_result("slice", std::move(out_shape), std::move(out), {px},
                             [px, sp, start, len](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t o = 0; o < sp.outer; ++o)
                                 for (int i = 0; i < len; ++i) {
                                   const double* src =
                                       self.grad.data() + (o * len + static_cast<size_t>(i)) * sp.inner;
                                   double* dst = px->grad.data() +
                                                 (o * sp.n + static_cast<size_t>(start + i)) * sp.inner;
                                   for (size_t c = 0; c < sp.inner; ++c) dst[c] += src[c];
                                 }
                             });
}

inline Tensor concat(const std::vector<Tensor>& xs, int dim) {
  if (xs.empty()) throw ShapeError("concat: empty input list");
  int d = detail::norm_dim(xs[0], dim);
  Shape out_shape = xs[0].shape();
  int total = 0;
  for (const auto& t : xs) {
    if (t.ndim() != xs[0].ndim()) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < t.ndim(); ++i)
      if (i != d && t.dim(i) != xs[0].dim(i))
        throw ShapeError("concat: non-concat dims must match");
    total += t.dim(d);
  }
  out_shape[static_cast<size_t>(d)] = total;

  auto sp0 = detail::dim_split(xs[0], d);
  size_t outer = sp0.outer, inner = sp0.inner;
  std::vector<double> out(outer * static_cast<size_t>(total) * inner);
  std::vector<int> sizes;
  for (const auto& t : xs) sizes.push_back(t.dim(d));
  size_t off = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    const double* xp = xs[k].data().data();
    int n = sizes[k];
    for (size_t o = 0; o < outer; ++o) {
      const double* src = xp + o * static_cast<size_t>(n) * inner;
      double* dst = out.data() + (o * total + off) * inner;
      std::copy(src, src + static_cast<size_t>(n) * inner, dst);
    }
    off += static_cast<size_t>(n);
  }

  std::vector<std::shared_ptr<TensorImpl>> parents;
  for (const auto& t : xs) parents.push_back(t.impl());
  auto parents_copy = parents;
  int total_c = total;
  return detail::make_result(
      "concat", std::move(out_shape), std::move(out), std::move(parents),
      [parents_copy, sizes, outer, inner, total_c](const TensorImpl& self) {
        size_t off = 0;
        for (size_t k = 0; k < parents_copy.size(); ++k) {
          auto& p = parents_copy[k];
          int n = sizes[k];
          if (p->requires_grad) {
            p->ensure_grad();
            for (size_t o = 0; o < outer; ++o) {
              const double* src = self.grad.data() + (o * total_c + off) * inner;
              double* dst = p->grad.data() + o * static_cast<size_t>(n) * inner;
              for (size_t c = 0; c < static_cast<size_t>(n) * inner; ++c) dst[c] += src[c];
            }
          }
          off += static_cast<size_t>(n);
        }
      });
}

inline Tensor index_select(const Tensor& x, int dim, const std::vector<int>& idx) {
  auto sp = detail::dim_split(x, dim);
  int d = detail::norm_dim(x, dim);
  for (int i : idx)
    if (i < 0 || i >= sp.n) throw ShapeError("index_select: index out of range");
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(d)] = static_cast<int>(idx.size());
  std::vector<double> out(sp.outer * idx.size() * sp.inner);
  const double* xp = x.data().data();
  for (size_t o = 0; o < sp.outer; ++o)
    for (size_t i = 0; i < idx.size(); ++i) {
      const double* src = xp + (o * sp.n + static_cast<size_t>(idx[i])) * sp.inner;
      double* dst = out.data() + (o * idx.size() + i) * sp.inner;
      std::copy(src, src + sp.inner, dst);
    }
  auto px = x.impl();
  return detail::make_result("index_select", std::move(out_shape), std::move(out), {px},
                             [px, sp, idx](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t o = 0; o < sp.outer; ++o)
                                 for (size_t i = 0; i < idx.size(); ++i) {
                                   const double* src =
                                       self.grad.data() + (o * idx.size() + i) * sp.inner;
                                   double* dst = px->grad.data() +
                                                 (o * sp.n + static_cast<size_t>(idx[i])) * sp.inner;
                                   for (size_t c = 0; c < sp.inner; ++c) dst[c] += src[c];
                                 }
                             });
}

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: numel mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape));
  auto px = x.impl();
  std::vector<double> out = x.data();
  return detail::make_result("reshape", std::move(new_shape), std::move(out), {px},
                             [px](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t i = 0; i < self.numel(); ++i)
                                 px->grad[i] += self.grad[i];
                             });
}

// (..., C) -> (..., n, C): inserts an axis before the last dim and repeats.
inline Tensor unsqueeze_repeat(const Tensor& x, int n) {
  if (n <= 0) throw ShapeError("unsqueeze_repeat: n must be positive");
  auto [rows, C] = detail::rows_of(x);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  out_shape.push_back(n);
  out_shape.push_back(C);
  std::vector<double> out(rows * static_cast<size_t>(n) * C);
  const double* xp = x.data().data();
  for (size_t r = 0; r < rows; ++r)
    for (int k = 0; k < n; ++k)
      std::copy(xp + r * C, xp + (r + 1) * C,
                out.data() + (r * n + static_cast<size_t>(k)) * C);
  auto px = x.impl();
  size_t rows_c = rows;
  int C_c = C;
  return detail::make_result("unsqueeze_repeat", std::move(out_shape), std::move(out), {px},
                             [px, rows_c, C_c, n](const TensorImpl& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (size_t r = 0; r < rows_c; ++r)
                                 for (int k = 0; k < n; ++k) {
                                   const double* src =
                                       self.grad.data() + (r * n + static_cast<size_t>(k)) * C_c;
                                   double* dst = px->grad.data() + r * C_c;
                                   for (int c = 0; c < C_c; ++c) dst[c] += src[c];
                                 }
                             });
}

// ---------------------------------------------------------------- optimizer

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Learning rate ramps linearly from lr/warmup_steps to lr over the first
  // warmup_steps updates; 0 disables the ramp.
  int warmup_steps = 0;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto& p : params_) {
      if (!p.requires_grad()) throw ShapeError("Adam: parameter does not require grad");
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long steps_taken() const { return t_; }

  double effective_lr() const {
    long t = t_ == 0 ? 1 : t_;
    if (cfg_.warmup_steps <= 0) return cfg_.lr;
    double f = static_cast<double>(t) / cfg_.warmup_steps;
    return cfg_.lr * std::min(1.0, f);
  }

  void step() {
    ++t_;
    double lr = effective_lr();
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto& g = p.grad();
      check_finite("Adam::step gradient", g.data(), g.size());
      auto& d = p.data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < d.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        double mh = m[j] / bc1;
        double vh = v[j] / bc2;
        d[j] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::vector<Tensor>& params() { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace lsp
