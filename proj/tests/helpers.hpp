#pragma once

// Shared test utilities: finite-difference gradient checking against the
// reverse-mode engine, plus small comparison helpers.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "lsp/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max(1.0, std::fabs(b));
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Checks d/dx of loss(x) = sum(w .* f(x)) at `points` random coordinates by
// central differences with step h, requiring relative error <= tol.
struct GradCheck {
  double lo = -2.0, hi = 2.0;
  int points = 10;
  double h = 1e-6;
  double tol = 1e-6;
  uint64_t seed = 17;

  void run(const std::string& name, lsp::Shape shape,
           const std::function<lsp::Tensor(const lsp::Tensor&)>& f) const {
    INFO("grad check: " << name);
    lsp::CounterRng rng(seed ^ lsp::fnv1a64(name));
    lsp::Tensor x0 = lsp::Tensor::rand_uniform(shape, rng, lo, hi);

    lsp::Tensor w;
    {
      lsp::NoGradGuard ng;
      lsp::Tensor y0 = f(x0);
      lsp::CounterRng wr = rng.split("weights");
      w = lsp::Tensor::rand_uniform(y0.shape(), wr, -1.0, 1.0);
    }

    auto loss_value = [&](const std::vector<double>& xv) {
      lsp::NoGradGuard ng;
      lsp::Tensor x = lsp::Tensor::from(shape, xv);
      return lsp::sum(lsp::mul(f(x), w)).item();
    };

    lsp::Tensor x = lsp::Tensor::from(shape, x0.data());
    x.set_requires_grad(true);
    lsp::Tensor loss = lsp::sum(lsp::mul(f(x), w));
    lsp::backward(loss);
    const auto& g = x.grad();

    lsp::CounterRng pick = rng.split("points");
    for (int p = 0; p < points; ++p) {
      size_t i = pick.below(x.numel());
      std::vector<double> xp = x0.data(), xm = x0.data();
      xp[i] += h;
      xm[i] -= h;
      double fd = (loss_value(xp) - loss_value(xm)) / (2.0 * h);
      INFO("coordinate " << i << ": ad=" << g[i] << " fd=" << fd);
      REQUIRE(rel_err(g[i], fd) <= tol);
    }
  }
};

}  // namespace testutil
