#include <filesystem>

#include "catch2/catch_amalgamated.hpp"
#include "helpers.hpp"
#include "lsp/checkpoint.hpp"
#include "lsp/nn.hpp"

using namespace lsp;
using namespace lsp::nn;

TEST_CASE("linear layer computes xw + b", "[nn]") {
  Linear l;
  l.w = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  l.b = Tensor::from({3}, {0.5, -0.5, 1.0});
  Tensor x = Tensor::from({1, 2}, {1.0, 2.0});
  Tensor y = l.forward(x);
  REQUIRE(y.data()[0] == Catch::Approx(1 + 8 + 0.5));
  REQUIRE(y.data()[1] == Catch::Approx(2 + 10 - 0.5));
  REQUIRE(y.data()[2] == Catch::Approx(3 + 12 + 1.0));

  // The same layer applies across batch and time dims.
  Tensor xs = Tensor::from({2, 2, 2}, {1, 2, 1, 2, 1, 2, 1, 2});
  Tensor ys = l.forward(xs);
  REQUIRE(ys.shape() == Shape{2, 2, 3});
  for (int r = 0; r < 4; ++r) REQUIRE(ys.data()[r * 3] == Catch::Approx(9.5));
}

TEST_CASE("mlp with input skips exposes the input at every depth", "[nn]") {
  CounterRng rng(1);
  Mlp m = Mlp::make(3, {8, 8, 8}, 2, rng, true);
  REQUIRE(m.layers.size() == 4);
  REQUIRE(m.layers[1].w.dim(0) == 11);
  REQUIRE(m.layers.back().w.dim(0) == 11);

  Tensor x = Tensor::rand_uniform({5, 3}, rng, -1, 1);
  Tensor y = m.forward(x);
  REQUIRE(y.shape() == Shape{5, 2});

  Mlp plain = Mlp::make(3, {8, 8}, 2, rng, false);
  REQUIRE(plain.layers[1].w.dim(0) == 8);
  REQUIRE(plain.forward(x).shape() == Shape{5, 2});
}

TEST_CASE("mlp gradients reach all parameters", "[nn][fd]") {
  CounterRng rng(2);
  Mlp m = Mlp::make(3, {6, 6}, 2, rng, true);
  Tensor x = Tensor::rand_uniform({4, 3}, rng, -1, 1);
  backward(mean(square(m.forward(x))));
  NamedTensors ps;
  m.reg(ps, "mlp");
  for (auto& [name, t] : ps.items) {
    double gmax = 0;
    for (double g : t.grad()) gmax = std::max(gmax, std::fabs(g));
    INFO(name);
    REQUIRE(gmax > 0.0);
  }

  testutil::GradCheck gc;
  gc.points = 8;
  gc.run("mlp_input", {4, 3}, [&](const Tensor& t) { return m.forward(t); });
}

TEST_CASE("layernorm layer at identity init matches the raw op", "[nn]") {
  CounterRng rng(3);
  LayerNorm ln = LayerNorm::make(8, rng);
  Tensor x = Tensor::rand_uniform({4, 8}, rng, -2, 2);
  REQUIRE(testutil::max_abs_diff(ln.forward(x).data(), layernorm(x).data()) == 0.0);
}

TEST_CASE("conv layer wraps both directions", "[nn]") {
  CounterRng rng(4);
  Conv1d c = Conv1d::make(3, 5, 3, rng);
  Conv1d ct = Conv1d::make(3, 5, 3, rng, true);
  Tensor x = Tensor::rand_uniform({2, 6, 3}, rng, -1, 1);
  REQUIRE(c.forward(x).shape() == Shape{2, 6, 5});
  REQUIRE(ct.forward(x).shape() == Shape{2, 6, 5});
  REQUIRE_THROWS_AS(Conv1d::make(3, 5, 2, rng), lsp::ShapeError);
}

TEST_CASE("causal attention block ignores future tokens exactly", "[nn][attention]") {
  CounterRng rng(5);
  const int B = 2, T = 6, C = 16;
  TransformerBlock blk = TransformerBlock::make(C, 32, rng);
  Tensor mask = causal_mask(T);

  Tensor x = Tensor::rand_uniform({B, T, C}, rng, -1, 1);
  Tensor y1 = blk.forward(x, mask);

  // Rewrite the last two time steps entirely; earlier outputs must be
  // bitwise identical.
  Tensor x2 = Tensor::from(x.shape(), x.data());
  for (int b = 0; b < B; ++b)
    for (int t = T - 2; t < T; ++t)
      for (int c = 0; c < C; ++c)
        x2.data()[(static_cast<size_t>(b) * T + t) * C + c] = rng.uniform(-5, 5);
  Tensor y2 = blk.forward(x2, mask);

  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T - 2; ++t)
      for (int c = 0; c < C; ++c) {
        size_t i = (static_cast<size_t>(b) * T + t) * C + c;
        REQUIRE(y1.data()[i] == y2.data()[i]);
      }
}

TEST_CASE("transformer block gradients match finite differences", "[nn][fd]") {
  CounterRng rng(6);
  const int T = 4, C = 8;
  TransformerBlock blk = TransformerBlock::make(C, 16, rng);
  Tensor mask = causal_mask(T);
  testutil::GradCheck gc;
  gc.points = 8;
  gc.lo = -1.0;
  gc.hi = 1.0;
  gc.run("transformer_block", {1, T, C}, [&](const Tensor& x) { return blk.forward(x, mask); });
}

TEST_CASE("named tensor registry rejects duplicates", "[nn]") {
  NamedTensors ps;
  ps.add("a", Tensor::zeros({2}));
  REQUIRE_THROWS_AS(ps.add("a", Tensor::zeros({2})), lsp::ShapeError);
  REQUIRE(ps.find("missing") == nullptr);
  REQUIRE_THROWS_AS(ps.at("missing"), lsp::FormatError);
}

TEST_CASE("copy_into validates names and shapes", "[nn]") {
  NamedTensors src, dst;
  src.add("w", Tensor::from({2}, {1, 2}));
  dst.add("w", Tensor::zeros({2}));
  copy_into(src, dst);
  REQUIRE(dst.at("w").data() == std::vector<double>{1, 2});

  NamedTensors wrong_shape;
  wrong_shape.add("w", Tensor::zeros({3}));
  REQUIRE_THROWS_AS(copy_into(src, wrong_shape), lsp::FormatError);

  NamedTensors wrong_name;
  wrong_name.add("v", Tensor::zeros({2}));
  REQUIRE_THROWS_AS(copy_into(src, wrong_name), lsp::FormatError);

  NamedTensors extra = src;
  extra.add("u", Tensor::zeros({1}));
  REQUIRE_THROWS_AS(copy_into(extra, dst), lsp::FormatError);
}

TEST_CASE("checkpoint round trip preserves bits and metadata", "[nn][checkpoint]") {
  CounterRng rng(7);
  NamedTensors ps;
  ps.add("enc.w", Tensor::randn({4, 3}, rng));
  ps.add("enc.b", Tensor::randn({3}, rng));
  ps.add("head", Tensor::randn({3, 2, 2}, rng));
  nlohmann::json meta{{"kind", "test"}, {"d_z", 8}};

  auto path = std::filesystem::temp_directory_path() / "lsp_test_ckpt.lspc";
  ckpt::save_checkpoint(path.string(), ps, meta);
  nlohmann::json meta2;
  NamedTensors back = ckpt::load_checkpoint(path.string(), &meta2);

  REQUIRE(meta2["kind"] == "test");
  REQUIRE(meta2["d_z"] == 8);
  REQUIRE(back.size() == ps.size());
  for (auto& [name, t] : ps.items) {
    REQUIRE(back.at(name).shape() == t.shape());
    REQUIRE(back.at(name).data() == t.data());
  }

  auto info = ckpt::inspect_checkpoint(path.string());
  REQUIRE(info["total_params"] == 4 * 3 + 3 + 3 * 2 * 2);
  REQUIRE(info["tensors"].size() == 3);
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected", "[nn][checkpoint]") {
  NamedTensors ps;
  ps.add("w", Tensor::from({2}, {1, 2}));
  std::string buf = ckpt::serialize_checkpoint(ps, {});

  std::string bad = buf;
  bad[0] = 'Z';
  REQUIRE_THROWS_AS(ckpt::parse_checkpoint(bad, "t"), lsp::FormatError);

  std::string badver = buf;
  badver[4] = 42;
  REQUIRE_THROWS_AS(ckpt::parse_checkpoint(badver, "t"), lsp::FormatError);

  std::string trunc = buf.substr(0, buf.size() - 8);
  REQUIRE_THROWS_AS(ckpt::parse_checkpoint(trunc, "t"), lsp::FormatError);

  // A dataset file is not a checkpoint.
  REQUIRE_THROWS_AS(ckpt::parse_checkpoint(std::string("LSPD\x01"), "t"), lsp::FormatError);
}
