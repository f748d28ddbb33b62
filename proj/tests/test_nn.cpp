#include <cmath>
#include <functional>

#include "doctest.h"
#include "mesorch/nn.hpp"
#include "mesorch/rng.hpp"

using namespace mesorch;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.normal(0.0, scale);
  return t;
}

void randomize_params(ParamStore& ps, Rng& rng, double scale = 0.1) {
  for (const auto& p : ps.all()) {
    for (auto& v : p->value) v = snap_f32(rng.normal(0.0, scale));
  }
}

// Sampled central-difference check of every parameter gradient for a scalar
// loss L = sum(forward(x) * r) with fixed random r.
void check_param_grads(ParamStore& ps, const std::function<double()>& loss_fn,
                       Rng& rng, int samples, double tol = 1e-5, double h = 1e-5) {
  std::vector<std::pair<Parameter*, std::int64_t>> coords;
  for (const auto& p : ps.all())
    for (std::int64_t i = 0; i < p->numel(); ++i) coords.push_back({p.get(), i});
  REQUIRE(!coords.empty());

  int checked = 0;
  for (int s = 0; s < samples; ++s) {
    auto [p, i] = coords[static_cast<size_t>(rng.randint(0, static_cast<std::int64_t>(coords.size()) - 1))];
    const double orig = p->value[static_cast<size_t>(i)];
    p->value[static_cast<size_t>(i)] = orig + h;
    const double lp = loss_fn();
    p->value[static_cast<size_t>(i)] = orig - h;
    const double lm = loss_fn();
    p->value[static_cast<size_t>(i)] = orig;
    const double fd = (lp - lm) / (2.0 * h);
    const double an = p->grad[static_cast<size_t>(i)];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    INFO(p->name, "[", i, "] analytic ", an, " fd ", fd);
    // tiny gradients sit at the FD noise floor; accept on absolute agreement
    CHECK((std::abs(fd - an) / denom < tol || std::abs(fd - an) < 1e-8));
    ++checked;
  }
  CHECK(checked == samples);
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("conv2d shapes and gradients") {
    ParamStore ps;
    Conv2d conv(ps, "c", 3, 5, 3, 1, 1);
    Rng rng(1);
    randomize_params(ps, rng);
    Tensor x = random_tensor(rng, {6, 7, 3});

    Conv2d::Cache cache;
    Tensor y = conv.forward(x, &cache);
    CHECK(y.shape == std::vector<int>{6, 7, 5});
    Tensor r = random_tensor(rng, y.shape);

    ps.zero_grads();
    for (const auto& p : ps.all()) p->ensure_grad();
    Tensor dx = conv.backward(r, cache);
    CHECK(dx.shape == x.shape);

    auto loss = [&] {
      Conv2d::Cache c;
      return weighted_sum(conv.forward(x, &c), r);
    };
    check_param_grads(ps, loss, rng, 40);

    // input gradient, spot checked
    for (int s = 0; s < 12; ++s) {
      const std::int64_t i = rng.randint(0, x.numel() - 1);
      const double orig = x[i];
      const double h = 1e-5;
      x[i] = orig + h;
      const double lp = loss();
      x[i] = orig - h;
      const double lm = loss();
      x[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      CHECK(std::abs(fd - dx[i]) / std::max({std::abs(fd), std::abs(dx[i]), 1e-8}) < 1e-5);
    }
  }

  TEST_CASE("conv2d strided output size") {
    ParamStore ps;
    Conv2d down(ps, "d", 4, 8, 3, 2, 1);
    Rng rng(2);
    randomize_params(ps, rng);
    for (int n : {8, 7, 5, 1}) {
      Tensor x = random_tensor(rng, {n, n, 4});
      Tensor y = down.forward(x, nullptr);
      CHECK(y.shape[0] == (n + 1) / 2);
      CHECK(y.shape[1] == (n + 1) / 2);
    }
  }

  TEST_CASE("linear and layernorm gradients") {
    ParamStore ps;
    Linear lin(ps, "l", 6, 4);
    LayerNorm ln(ps, "n", 4);
    Rng rng(3);
    randomize_params(ps, rng);
    Tensor x = random_tensor(rng, {5, 3, 6});
    Tensor r = random_tensor(rng, {5, 3, 4});

    Linear::Cache lc;
    LayerNorm::Cache nc;
    Tensor y = ln.forward(lin.forward(x, &lc), &nc);
    CHECK(y.shape == std::vector<int>{5, 3, 4});

    ps.zero_grads();
    for (const auto& p : ps.all()) p->ensure_grad();
    Tensor dmid = ln.backward(r, nc);
    lin.backward(dmid, lc);

    auto loss = [&] {
      Linear::Cache c1;
      LayerNorm::Cache c2;
      return weighted_sum(ln.forward(lin.forward(x, &c1), &c2), r);
    };
    check_param_grads(ps, loss, rng, 40);
  }

  TEST_CASE("gelu and softmax") {
    Rng rng(4);
    Tensor x = random_tensor(rng, {3, 4});
    Tensor y = gelu(x);
    CHECK(y.at2(0, 0) == doctest::Approx(0.5 * x.at2(0, 0) *
                                         (1.0 + std::erf(x.at2(0, 0) / std::sqrt(2.0)))));

    Tensor s = x;
    softmax_lastdim(s);
    for (int i = 0; i < 3; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 4; ++j) {
        CHECK(s.at2(i, j) > 0.0);
        sum += s.at2(i, j);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }

    // softmax backward vs finite differences
    Tensor r = random_tensor(rng, {3, 4});
    Tensor dx = softmax_backward_lastdim(r, s);
    const double h = 1e-6;
    for (int s_i = 0; s_i < 6; ++s_i) {
      const std::int64_t i = rng.randint(0, x.numel() - 1);
      const double orig = x[i];
      auto loss = [&] {
        Tensor t = x;
        softmax_lastdim(t);
        return weighted_sum(t, r);
      };
      x[i] = orig + h;
      const double lp = loss();
      x[i] = orig - h;
      const double lm = loss();
      x[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      CHECK(std::abs(fd - dx[i]) < 1e-6);
    }
  }

  TEST_CASE("bilinear resize") {
    Rng rng(5);
    Tensor x = random_tensor(rng, {4, 4, 2});

    // identity when sizes match
    Tensor same = bilinear_resize(x, 4, 4);
    CHECK(same.data == x.data);

    Tensor up = bilinear_resize(x, 8, 8);
    CHECK(up.shape == std::vector<int>{8, 8, 2});

    // constant field stays constant under resize
    Tensor c({3, 5, 1}, 0.7);
    Tensor cu = bilinear_resize(c, 9, 10);
    for (double v : cu.data) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));

    // backward is the exact adjoint: <resize(x), r> == <x, resize_backward(r)>
    Tensor r = random_tensor(rng, {8, 8, 2});
    Tensor dx = bilinear_resize_backward(r, 4, 4);
    double lhs = weighted_sum(up, r);
    double rhs = weighted_sum(x, dx);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }

  TEST_CASE("attention block gradients") {
    ParamStore ps;
    AttnBlock blk(ps, "a", 8, 2, 2, 2);
    Rng rng(6);
    randomize_params(ps, rng);
    Tensor x = random_tensor(rng, {4, 4, 8}, 0.5);
    Tensor r = random_tensor(rng, {4, 4, 8});

    AttnBlock::Cache cache;
    Tensor y = blk.forward(x, &cache);
    CHECK(y.shape == x.shape);

    ps.zero_grads();
    for (const auto& p : ps.all()) p->ensure_grad();
    Tensor dx = blk.backward(r, cache);

    auto loss = [&] {
      AttnBlock::Cache c;
      return weighted_sum(blk.forward(x, &c), r);
    };
    check_param_grads(ps, loss, rng, 60, 2e-5);

    for (int s = 0; s < 10; ++s) {
      const std::int64_t i = rng.randint(0, x.numel() - 1);
      const double orig = x[i];
      const double h = 1e-5;
      x[i] = orig + h;
      const double lp = loss();
      x[i] = orig - h;
      const double lm = loss();
      x[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      CHECK(std::abs(fd - dx[i]) / std::max({std::abs(fd), std::abs(dx[i]), 1e-6}) < 1e-4);
    }
  }

  TEST_CASE("conv block gradients") {
    ParamStore ps;
    ConvBlock blk(ps, "b", 6);
    Rng rng(7);
    randomize_params(ps, rng);
    Tensor x = random_tensor(rng, {5, 5, 6}, 0.5);
    Tensor r = random_tensor(rng, {5, 5, 6});

    ConvBlock::Cache cache;
    Tensor y = blk.forward(x, &cache);
    CHECK(y.shape == x.shape);
    ps.zero_grads();
    for (const auto& p : ps.all()) p->ensure_grad();
    blk.backward(r, cache);
    auto loss = [&] {
      ConvBlock::Cache c;
      return weighted_sum(blk.forward(x, &c), r);
    };
    check_param_grads(ps, loss, rng, 40);
  }

  TEST_CASE("parameter store determinism and init kinds") {
    ParamStore a, b;
    a.create("w", {4, 4}, Init::kTruncNormal, true);
    a.create("z", {3}, Init::kZero, false);
    a.create("g", {3}, Init::kOne, false);
    b.create("w", {4, 4}, Init::kTruncNormal, true);
    b.create("z", {3}, Init::kZero, false);
    b.create("g", {3}, Init::kOne, false);
    a.init_all(123);
    b.init_all(123);
    CHECK(a.find("w")->value == b.find("w")->value);
    for (double v : a.find("w")->value) {
      CHECK(std::abs(v) <= 0.04);  // truncation at 2 sigma
      CHECK(v == snap_f32(v));
    }
    for (double v : a.find("z")->value) CHECK(v == 0.0);
    for (double v : a.find("g")->value) CHECK(v == 1.0);
    CHECK(a.total_params() == 22);
  }
}
