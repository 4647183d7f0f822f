#pragma once

// Parameterized layers over the autodiff core: linear, 1-D conv, layer norm
// with affine part, MLPs (optionally with input skip connections), and a
// single-head causal transformer block. Parameters register into a
// NamedTensors registry for optimizers and checkpoints.

#include <string>
#include <utility>
#include <vector>

#include "lsp/common.hpp"
#include "lsp/tensor.hpp"

namespace lsp::nn {

struct NamedTensors {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& name, const Tensor& t) {
    if (find(name)) throw ShapeError("NamedTensors: duplicate name '" + name + "'");
    items.emplace_back(name, t);
  }
  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor& at(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw FormatError("NamedTensors: missing tensor '" + name + "'");
    return *t;
  }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(items.size());
    for (const auto& [n, t] : items) out.push_back(t);
    return out;
  }
  size_t size() const { return items.size(); }
};

// Copies values from src into identically named and shaped dst parameters.
// Both registries must cover exactly the same names.
inline void copy_into(const NamedTensors& src, NamedTensors& dst) {
  if (src.size() != dst.size())
    throw FormatError("parameter count mismatch: stored " + std::to_string(src.size()) +
                      ", model " + std::to_string(dst.size()));
  for (auto& [name, t] : dst.items) {
    const Tensor* s = src.find(name);
    if (!s) throw FormatError("stored parameters missing tensor '" + name + "'");
    if (s->shape() != t.shape())
      throw FormatError("shape mismatch for tensor '" + name + "': stored " +
                        shape_str(s->shape()) + ", model " + shape_str(t.shape()));
    Tensor& mut = t;
    mut.data() = s->data();
  }
}

inline Tensor param(Shape shape, CounterRng& rng, double std) {
  Tensor t = std == 0.0 ? Tensor::zeros(std::move(shape)) : Tensor::randn(std::move(shape), rng, std);
  t.set_requires_grad(true);
  return t;
}

// ---------------------------------------------------------------- layers

struct Linear {
  Tensor w, b;  // w: (in, out)

  static Linear make(int in, int out, CounterRng& rng) {
    Linear l;
    l.w = param({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    l.b = param({out}, rng, 0.0);
    return l;
  }
  Tensor forward(const Tensor& x) const { return add(matmul(x, w), b); }
  void reg(NamedTensors& ps, const std::string& prefix) {
    ps.add(prefix + ".w", w);
    ps.add(prefix + ".b", b);
  }
};

struct Conv1d {
  Tensor w, b;  // w: (k*cin, cout), taps ordered earliest first
  int k = 1;
  bool transpose = false;

  static Conv1d make(int cin, int cout, int k, CounterRng& rng, bool transpose = false) {
    if (k % 2 == 0) throw ShapeError("Conv1d: kernel width must be odd for same-length output");
    Conv1d c;
    c.k = k;
    c.transpose = transpose;
    c.w = param({k * cin, cout}, rng, 1.0 / std::sqrt(static_cast<double>(k * cin)));
    c.b = param({cout}, rng, 0.0);
    return c;
  }
  Tensor forward(const Tensor& x) const {
    return transpose ? conv_transpose1d(x, w, b) : conv1d(x, w, b);
  }
  void reg(NamedTensors& ps, const std::string& prefix) {
    ps.add(prefix + ".w", w);
    ps.add(prefix + ".b", b);
  }
};

struct LayerNorm {
  Tensor g, b;

  static LayerNorm make(int dim, CounterRng& rng) {
    LayerNorm l;
    l.g = param({dim}, rng, 0.0);
    for (auto& v : l.g.data()) v = 1.0;
    l.b = param({dim}, rng, 0.0);
    return l;
  }
  Tensor forward(const Tensor& x) const { return add(mul(layernorm(x), g), b); }
  void reg(NamedTensors& ps, const std::string& prefix) {
    ps.add(prefix + ".g", g);
    ps.add(prefix + ".b", b);
  }
};

// Feed-forward stack with gelu hidden activations. With input_skip set, the
// raw input is concatenated onto every hidden activation before the next
// layer, which keeps early observations visible deep in the stack.
struct Mlp {
  std::vector<Linear> layers;
  bool input_skip = false;

  static Mlp make(int in, const std::vector<int>& hidden, int out, CounterRng& rng,
                  bool input_skip = false) {
    Mlp m;
    m.input_skip = input_skip;
    int prev = in;
    for (size_t i = 0; i < hidden.size(); ++i) {
      m.layers.push_back(Linear::make(prev, hidden[i], rng));
      prev = hidden[i] + (input_skip ? in : 0);
    }
    m.layers.push_back(Linear::make(prev, out, rng));
    return m;
  }

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (size_t i = 0; i + 1 < layers.size(); ++i) {
      h = gelu(layers[i].forward(h));
      if (input_skip) h = concat({h, x}, h.ndim() - 1);
    }
    return layers.back().forward(h);
  }

  void reg(NamedTensors& ps, const std::string& prefix) {
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].reg(ps, prefix + ".l" + std::to_string(i));
  }
};

// Same-width residual conv block: x + conv(gelu(x)).
struct ConvResBlock {
  Conv1d c;

  static ConvResBlock make(int channels, int k, CounterRng& rng) {
    ConvResBlock b;
    b.c = Conv1d::make(channels, channels, k, rng);
    return b;
  }
  Tensor forward(const Tensor& x) const { return add(x, c.forward(gelu(x))); }
  void reg(NamedTensors& ps, const std::string& prefix) { c.reg(ps, prefix + ".c"); }
};

// ---------------------------------------------------------------- attention

// Additive attention mask: position t may only read keys at or before t.
inline Tensor causal_mask(int T) {
  Tensor m = Tensor::zeros({T, T});
  for (int i = 0; i < T; ++i)
    for (int j = i + 1; j < T; ++j) m.data()[static_cast<size_t>(i) * T + j] = -1e30;
  return m;
}

// Single-head block with post-layer normalization: each sublayer output is
// normalized after the residual add.
struct TransformerBlock {
  Linear q, k, v, o, fc1, fc2;
  LayerNorm ln1, ln2;
  int d_model = 0;

  static TransformerBlock make(int d_model, int d_hidden, CounterRng& rng) {
    TransformerBlock b;
    b.d_model = d_model;
    b.q = Linear::make(d_model, d_model, rng);
    b.k = Linear::make(d_model, d_model, rng);
    b.v = Linear::make(d_model, d_model, rng);
    b.o = Linear::make(d_model, d_model, rng);
    b.fc1 = Linear::make(d_model, d_hidden, rng);
    b.fc2 = Linear::make(d_hidden, d_model, rng);
    b.ln1 = LayerNorm::make(d_model, rng);
    b.ln2 = LayerNorm::make(d_model, rng);
    return b;
  }

  // Per-position keys and values kept so a sequence can be extended one step
  // at a time with outputs identical to the masked full pass.
  struct KvCache {
    Tensor keys, values;  // (B, len, C)
    int len = 0;
  };

  // x: (B,T,C); mask: (T,T) additive.
  Tensor forward(const Tensor& x, const Tensor& mask) const {
    Tensor qs = q.forward(x), ks = k.forward(x), vs = v.forward(x);
    Tensor scores = scale(matmul(qs, transpose_last(ks)), 1.0 / std::sqrt(static_cast<double>(d_model)));
    Tensor attn = softmax(add(scores, mask));
    Tensor y = o.forward(matmul(attn, vs));
    Tensor h = ln1.forward(add(x, y));
    Tensor f = fc2.forward(gelu(fc1.forward(h)));
    return ln2.forward(add(h, f));
  }

  // Full pass that also fills the cache for later forward_step calls.
  Tensor forward_fill(const Tensor& x, const Tensor& mask, KvCache& cache) const {
    Tensor qs = q.forward(x), ks = k.forward(x), vs = v.forward(x);
    cache.keys = ks;
    cache.values = vs;
    cache.len = x.dim(1);
    Tensor scores = scale(matmul(qs, transpose_last(ks)), 1.0 / std::sqrt(static_cast<double>(d_model)));
    Tensor attn = softmax(add(scores, mask));
    Tensor y = o.forward(matmul(attn, vs));
    Tensor h = ln1.forward(add(x, y));
    Tensor f = fc2.forward(gelu(fc1.forward(h)));
    return ln2.forward(add(h, f));
  }

  // Appends one position (x: (B,1,C)) to the cache and returns its output.
  // The new position attends to every cached key; masked-out future entries
  // in the full pass contribute exact zeros, so results match bitwise.
  Tensor forward_step(const Tensor& x, KvCache& cache) const {
    if (cache.len < 1) throw ShapeError("TransformerBlock::forward_step: cache not filled");
    Tensor qs = q.forward(x);
    cache.keys = concat({cache.keys, k.forward(x)}, 1);
    cache.values = concat({cache.values, v.forward(x)}, 1);
    cache.len += 1;
    Tensor scores = scale(matmul(qs, transpose_last(cache.keys)), 1.0 / std::sqrt(static_cast<double>(d_model)));
    Tensor attn = softmax(scores);
    Tensor y = o.forward(matmul(attn, cache.values));
    Tensor h = ln1.forward(add(x, y));
    Tensor f = fc2.forward(gelu(fc1.forward(h)));
    return ln2.forward(add(h, f));
  }

  void reg(NamedTensors& ps, const std::string& prefix) {
    q.reg(ps, prefix + ".q");
    k.reg(ps, prefix + ".k");
    v.reg(ps, prefix + ".v");
    o.reg(ps, prefix + ".o");
    fc1.reg(ps, prefix + ".fc1");
    fc2.reg(ps, prefix + ".fc2");
    ln1.reg(ps, prefix + ".ln1");
    ln2.reg(ps, prefix + ".ln2");
  }
};

}  // namespace lsp::nn
