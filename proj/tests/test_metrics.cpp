#include <cmath>

#include "doctest.h"
#include "mesorch/metrics.hpp"
#include "mesorch/rng.hpp"

using namespace mesorch;

namespace {

Tensor grid(std::initializer_list<double> vals, int h, int w) {
  Tensor t({h, w});
  std::copy(vals.begin(), vals.end(), t.data.begin());
  return t;
}

// 4x4 case: mask = left half, pred = top half -> TP=4, FP=4, FN=4
void half_overlap(Tensor* pred, Tensor* mask) {
  *pred = Tensor({4, 4});
  *mask = Tensor({4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      if (x < 2) mask->at2(y, x) = 1.0;
      if (y < 2) pred->at2(y, x) = 0.9;
    }
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("pixel F1 basics and the half-overlap oracle") {
    Tensor pred, mask;
    half_overlap(&pred, &mask);
    CHECK(pixel_f1(pred, mask) == doctest::Approx(0.5).epsilon(1e-12));

    // perfect prediction
    CHECK(pixel_f1(mask, mask) == doctest::Approx(1.0));

    // inverted prediction of a half-full mask: TP=0
    Tensor inv({4, 4});
    for (std::int64_t i = 0; i < 16; ++i) inv[i] = mask[i] >= 0.5 ? 0.0 : 1.0;
    CHECK(pixel_f1(inv, mask) == doctest::Approx(0.0));

    // degenerate conventions
    Tensor empty({4, 4});
    CHECK(pixel_f1(empty, empty) == doctest::Approx(1.0));
    CHECK(pixel_f1(mask, empty) == doctest::Approx(0.0));
    CHECK(pixel_f1(empty, mask) == doctest::Approx(0.0));

    Tensor bad({3, 3});
    CHECK_THROWS_AS(pixel_f1(bad, mask), InvalidInputError);
  }

  TEST_CASE("permute F1") {
    Tensor pred, mask;
    half_overlap(&pred, &mask);
    // both assignments of the half-overlap case score 0.5
    CHECK(permute_f1(pred, mask) == doctest::Approx(0.5).epsilon(1e-12));

    // inversion recovers a perfect match
    Tensor inv({4, 4});
    for (std::int64_t i = 0; i < 16; ++i) inv[i] = mask[i] >= 0.5 ? 0.0 : 1.0;
    CHECK(permute_f1(inv, mask) == doctest::Approx(1.0));
    CHECK(permute_f1(mask, mask) == doctest::Approx(1.0));

    // permute >= plain, always
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
      Tensor p({6, 6}), m({6, 6});
      for (auto& v : p.data) v = rng.uniform();
      for (auto& v : m.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
      CHECK(permute_f1(p, m) >= pixel_f1(p, m));
    }
  }

  TEST_CASE("IoU and the F1 identity") {
    Tensor pred, mask;
    half_overlap(&pred, &mask);
    CHECK(iou(pred, mask) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(iou(mask, mask) == doctest::Approx(1.0));

    Rng rng(6);
    for (int t = 0; t < 1000; ++t) {
      Tensor p({5, 5}), m({5, 5});
      for (auto& v : p.data) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      for (auto& v : m.data) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      const double f = pixel_f1(p, m);
      const double j = iou(p, m);
      CHECK(std::abs(j - f / (2.0 - f)) < 1e-9);
    }
  }

  TEST_CASE("AUC oracle and properties") {
    // 6-pixel case: positives (.9,.8,.4), negatives (.7,.3,.1) -> 8/9 pairs won
    Tensor pred = grid({0.9, 0.8, 0.4, 0.7, 0.3, 0.1}, 2, 3);
    Tensor mask = grid({1, 1, 1, 0, 0, 0}, 2, 3);
    auto v = auc(pred, mask);
    REQUIRE(v.has_value());
    CHECK(*v == doctest::Approx(8.0 / 9.0).epsilon(1e-12));

    // perfectly ordered
    Tensor ordered = grid({0.9, 0.8, 0.7, 0.3, 0.2, 0.1}, 2, 3);
    CHECK(*auc(ordered, mask) == doctest::Approx(1.0));

    // constant prediction: all ties -> 0.5 by midrank
    Tensor flat({2, 3}, 0.42);
    CHECK(*auc(flat, mask) == doctest::Approx(0.5));

    // single-class masks are undefined
    Tensor ones({2, 3}, 1.0);
    CHECK_FALSE(auc(pred, ones).has_value());
    Tensor zeros({2, 3});
    CHECK_FALSE(auc(pred, zeros).has_value());

    // invariance under a strictly increasing transform
    Rng rng(7);
    Tensor p({8, 8}), m({8, 8});
    for (auto& x : p.data) x = rng.uniform();
    for (auto& x : m.data) x = rng.uniform() < 0.3 ? 1.0 : 0.0;
    m.at2(0, 0) = 1.0;
    m.at2(7, 7) = 0.0;
    Tensor p2 = p;
    for (auto& x : p2.data) x = std::tanh(3.0 * x) + x * x * 0.1;
    CHECK(*auc(p, m) == doctest::Approx(*auc(p2, m)).epsilon(1e-12));
  }

  TEST_CASE("metrics are symmetric under simultaneous spatial permutation") {
    Rng rng(8);
    Tensor p({4, 6}), m({4, 6});
    for (auto& v : p.data) v = rng.uniform();
    for (auto& v : m.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    m.at2(0, 0) = 1.0;
    m.at2(3, 5) = 0.0;

    // reverse both in the same way
    Tensor pr = p, mr = m;
    std::reverse(pr.data.begin(), pr.data.end());
    std::reverse(mr.data.begin(), mr.data.end());
    CHECK(pixel_f1(p, m) == doctest::Approx(pixel_f1(pr, mr)));
    CHECK(iou(p, m) == doctest::Approx(iou(pr, mr)));
    CHECK(*auc(p, m) == doctest::Approx(*auc(pr, mr)));
  }

  TEST_CASE("cost formulas: the single-conv closed form") {
    ParamStore ps;
    Conv2d conv(ps, "c", 6, 16, 3, 1, 1);
    CHECK(conv.param_count() == 3 * 3 * 6 * 16 + 16);  // 880
    CHECK(conv.param_count() == 880);
    CHECK(conv.macs(64, 64) == 9LL * 6 * 16 * 64 * 64);
    // doubling spatial size quadruples conv MACs, params unchanged
    CHECK(conv.macs(128, 128) == 4 * conv.macs(64, 64));
  }

  TEST_CASE("count_cost matches the parameter store and sums per-layer entries") {
    MesorchConfig cfg;
    Mesorch model(cfg);
    CostReport rep = count_cost(model, 64, 64);
    CHECK(rep.params == model.num_params());
    std::int64_t psum = 0, fsum = 0;
    for (const auto& l : rep.layers) {
      psum += l.params;
      fsum += 2 * l.macs;
    }
    CHECK(psum == rep.params);
    CHECK(fsum == rep.flops);
    CHECK(rep.flops > 0);
  }

  TEST_CASE("evaluate_model: oracle and constant predictors") {
    // score ground truth against itself through score_predictions
    Rng rng(9);
    std::vector<LabeledImage> data;
    std::vector<Tensor> oracle, flat;
    for (int i = 0; i < 3; ++i) {
      LabeledImage li;
      li.image = Image(8, 8);
      li.mask = Tensor({8, 8});
      for (auto& v : li.mask.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
      li.mask.at2(0, 0) = 1.0;
      li.mask.at2(7, 7) = 0.0;
      li.id = "s" + std::to_string(i);
      oracle.push_back(li.mask);
      flat.push_back(Tensor({8, 8}, 0.5));
      data.push_back(std::move(li));
    }
    MetricsReport rep = score_predictions(oracle, data);
    CHECK(rep.mean_f1 == doctest::Approx(1.0));
    CHECK(rep.mean_iou == doctest::Approx(1.0));
    CHECK(rep.mean_permute_f1 == doctest::Approx(1.0));
    CHECK(rep.mean_auc == doctest::Approx(1.0));
    CHECK(rep.auc_excluded == 0);

    MetricsReport flat_rep = score_predictions(flat, data);
    CHECK(flat_rep.mean_auc == doctest::Approx(0.5));
  }
}
