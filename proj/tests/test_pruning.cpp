#include <cmath>
#include <set>

#include "doctest.h"
#include "mesorch/metrics.hpp"
#include "mesorch/pruning.hpp"
#include "mesorch/synthdata.hpp"

using namespace mesorch;

namespace {

MesorchConfig tiny_config() {
  MesorchConfig cfg;
  cfg.preset = "custom";
  cfg.input_h = cfg.input_w = 32;
  cfg.local_channels = {6, 8, 10, 12};
  cfg.global_channels = {6, 8, 10, 12};
  cfg.local_depths = {1, 1, 1, 1};
  cfg.global_depths = {1, 1, 1, 1};
  cfg.heads = {1, 1, 1, 1};
  cfg.sr_ratios = {1, 1, 1, 1};
  cfg.mlp_ratio = 1;
  cfg.decoder_dim = 8;
  cfg.weight_hidden = 8;
  return cfg;
}

std::vector<LabeledImage> calib(int n, std::uint64_t seed) {
  std::vector<LabeledImage> out;
  for (int i = 0; i < n; ++i) {
    LabeledImage li;
    li.image = gen_base_image(seed + static_cast<std::uint64_t>(i), 32, 32);
    li.mask = Tensor({32, 32});
    li.id = "c" + std::to_string(i);
    out.push_back(std::move(li));
  }
  return out;
}

void randomize_head(Mesorch& m, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (const auto& p : m.params().all())
    if (p->name == "weight.c1.w" || p->name == "weight.c2.w" ||
        p->name == "weight.head.w" || p->name == "weight.head.b")
      for (auto& v : p->value) v = snap_f32(rng.normal(0.0, scale));
}

}  // namespace

TEST_SUITE("pruning") {
  TEST_CASE("mean weights at zero init are exactly 1/8") {
    Mesorch model(tiny_config());
    auto means = mean_scale_weights(model, calib(2, 50));
    REQUIRE(means.size() == 8);
    for (double m : means) CHECK(m == doctest::Approx(0.125).epsilon(1e-12));
    double sum = 0.0;
    for (double m : means) sum += m;
    CHECK(std::abs(sum - 1.0) < 1e-4);
  }

  TEST_CASE("mean weights: bias-only head gives the exact softmax of the bias") {
    Mesorch model(tiny_config());
    Parameter* hb = model.params().find("weight.head.b");
    REQUIRE(hb != nullptr);
    std::vector<double> bias = {0.4, -0.2, 0.9, 0.0, -0.5, 0.3, 0.1, -0.8};
    for (int j = 0; j < 8; ++j) hb->value[j] = bias[j];

    // with zero conv weights the logits equal the bias everywhere
    double denom = 0.0;
    for (double b : bias) denom += std::exp(b);
    auto means = mean_scale_weights(model, calib(3, 60));
    for (int j = 0; j < 8; ++j)
      CHECK(means[j] == doctest::Approx(std::exp(bias[j]) / denom).epsilon(1e-9));
  }

  TEST_CASE("mean weights agree with direct per-pixel summation") {
    Mesorch model(tiny_config());
    randomize_head(model, 7, 0.3);
    auto data = calib(3, 70);
    auto means = mean_scale_weights(model, data);

    std::vector<double> manual(8, 0.0);
    std::int64_t n = 0;
    for (const auto& s : data) {
      ForwardResult res = model.forward(s.image);
      const int h4 = res.weights.shape[0], w4 = res.weights.shape[1];
      for (int y = 0; y < h4; ++y)
        for (int x = 0; x < w4; ++x)
          for (int j = 0; j < 8; ++j) manual[j] += res.weights.at(y, x, j);
      n += static_cast<std::int64_t>(h4) * w4;
    }
    double sum = 0.0;
    for (int j = 0; j < 8; ++j) {
      manual[j] /= static_cast<double>(n);
      CHECK(means[j] == doctest::Approx(manual[j]).epsilon(1e-12));
      sum += means[j];
    }
    CHECK(std::abs(sum - 1.0) < 1e-4);

    // order independence
    std::vector<LabeledImage> rev(data.rbegin(), data.rend());
    auto means_rev = mean_scale_weights(model, rev);
    for (int j = 0; j < 8; ++j) CHECK(means[j] == doctest::Approx(means_rev[j]).epsilon(1e-12));
  }

  TEST_CASE("empty calibration set and uniform mode are rejected") {
    Mesorch model(tiny_config());
    CHECK_THROWS_AS(mean_scale_weights(model, {}), InvalidInputError);
    MesorchConfig uc = tiny_config();
    uc.fusion_mode = "uniform";
    Mesorch um(uc);
    CHECK_THROWS_AS(mean_scale_weights(um, calib(1, 80)), NotApplicableError);
  }

  TEST_CASE("threshold selection matches the worked example") {
    // means (0.01, 0.19, 0.20, 0.05, 0.15, 0.15, 0.15, 0.10), eps 0.06
    // -> branches 1 and 4 (1-based) pruned
    Mesorch model(tiny_config());
    Parameter* hb = model.params().find("weight.head.b");
    const std::vector<double> target = {0.01, 0.19, 0.20, 0.05, 0.15, 0.15, 0.15, 0.10};
    for (int j = 0; j < 8; ++j) hb->value[j] = std::log(target[j]);

    PruneConfig pc;
    pc.epsilon = 0.06;
    auto [pruned, report] = prune(model, pc, calib(2, 90));
    CHECK(report.pruned_branches == std::vector<int>{0, 3});
    CHECK(report.surviving_branches == std::vector<int>{1, 2, 4, 5, 6, 7});
    CHECK(pruned->config().k_active() == 6);
    CHECK_FALSE(report.guard_engaged);

    // pruned + surviving partition the branch set
    std::set<int> all;
    for (int id : report.pruned_branches) all.insert(id);
    for (int id : report.surviving_branches) all.insert(id);
    CHECK(all.size() == 8);
  }

  TEST_CASE("epsilon boundaries: 0 prunes nothing, 1 engages the guard") {
    Mesorch model(tiny_config());
    randomize_head(model, 11, 0.2);
    auto data = calib(2, 100);

    PruneConfig p0;
    p0.epsilon = 0.0;
    auto [m0, r0] = prune(model, p0, data);
    CHECK(r0.pruned_branches.empty());
    CHECK(m0->config().k_active() == 8);
    CHECK(m0->num_params() == model.num_params());

    PruneConfig p1;
    p1.epsilon = 1.0;
    auto [m1, r1] = prune(model, p1, data);
    CHECK(r1.guard_engaged);
    CHECK(m1->config().k_active() == 1);

    PruneConfig bad;
    bad.epsilon = 1.5;
    CHECK_THROWS_AS(prune(model, bad, data), ConfigError);
  }

  TEST_CASE("threshold monotonicity") {
    Mesorch model(tiny_config());
    randomize_head(model, 13, 0.4);
    auto data = calib(3, 110);
    std::vector<int> prev;
    for (double eps : {0.0, 0.02, 0.05, 0.1, 0.9}) {
      PruneConfig pc;
      pc.epsilon = eps;
      pc.min_surviving_branches = 1;
      auto [m, r] = prune(model, pc, data);
      std::set<int> cur(r.pruned_branches.begin(), r.pruned_branches.end());
      if (!r.guard_engaged) {
        for (int id : prev) CHECK(cur.count(id) == 1);
        prev.assign(cur.begin(), cur.end());
      }
    }
  }

  TEST_CASE("structural deletion shrinks cost and keeps contracts") {
    Mesorch model(tiny_config());
    randomize_head(model, 17, 0.2);
    auto data = calib(2, 120);

    // force a specific surviving set via the bias trick
    Parameter* hb = model.params().find("weight.head.b");
    const std::vector<double> target = {0.30, 0.02, 0.02, 0.02, 0.30, 0.30, 0.02, 0.02};
    Parameter* c1 = model.params().find("weight.c1.w");
    Parameter* c2 = model.params().find("weight.c2.w");
    Parameter* hw = model.params().find("weight.head.w");
    for (auto& v : c1->value) v = 0.0;
    for (auto& v : c2->value) v = 0.0;
    for (auto& v : hw->value) v = 0.0;
    for (int j = 0; j < 8; ++j) hb->value[j] = std::log(target[j]);

    PruneConfig pc;
    pc.epsilon = 0.05;
    auto [pruned, report] = prune(model, pc, data);
    // survivors: local_s1, global_s1, global_s2
    CHECK(report.surviving_branches == std::vector<int>{0, 4, 5});

    CHECK(report.params_after < report.params_before);
    CHECK(report.flops_after < report.flops_before);
    CHECK(report.param_delta() > 0);
    CHECK(report.flop_delta() > 0);
    CHECK(count_cost(*pruned, 32, 32).params == pruned->num_params());

    // deleted local stages 2..4 are gone: pyramid has exactly one level
    ForwardResult res = pruned->forward(data[0].image);
    CHECK(res.local_pyramid.size() == 1);
    CHECK(res.global_pyramid.size() == 2);
    CHECK(res.preds.size() == 3);
    CHECK(res.weights.shape[2] == 3);
    const int h4 = res.weights.shape[0], w4 = res.weights.shape[1];
    for (int y = 0; y < h4; ++y)
      for (int x = 0; x < w4; ++x) {
        double sum = 0.0;
        for (int j = 0; j < 3; ++j) sum += res.weights.at(y, x, j);
        CHECK(std::abs(sum - 1.0) < 1e-5);
      }

    // fused output equals the K-way convex combination of the survivors
    for (int y = 0; y < h4; ++y)
      for (int x = 0; x < w4; ++x) {
        double expect = 0.0;
        for (int j = 0; j < 3; ++j)
          expect += res.weights.at(y, x, j) * res.preds[j].at(y, x, 0);
        CHECK(res.summed.at(y, x, 0) == doctest::Approx(expect).epsilon(1e-12));
      }

    // surviving decoder weights were copied bit-exactly
    const Parameter* old_dec = model.params().find("dec.global_s2.proj.w");
    const Parameter* new_dec = pruned->params().find("dec.global_s2.proj.w");
    REQUIRE(new_dec != nullptr);
    CHECK(old_dec->value == new_dec->value);

    // weighting head rows were sliced to the survivors
    const Parameter* old_hb = model.params().find("weight.head.b");
    const Parameter* new_hb = pruned->params().find("weight.head.b");
    REQUIRE(new_hb->numel() == 3);
    CHECK(new_hb->value[0] == old_hb->value[0]);
    CHECK(new_hb->value[1] == old_hb->value[4]);
    CHECK(new_hb->value[2] == old_hb->value[5]);
  }

  TEST_CASE("frozen post-prune weighting drops the tower") {
    MesorchConfig cfg = tiny_config();
    cfg.post_prune_weighting = "frozen";
    Mesorch model(cfg);
    Parameter* hb = model.params().find("weight.head.b");
    const std::vector<double> target = {0.30, 0.02, 0.02, 0.02, 0.30, 0.30, 0.02, 0.02};
    for (int j = 0; j < 8; ++j) hb->value[j] = std::log(target[j]);

    PruneConfig pc;
    pc.epsilon = 0.05;
    auto [pruned, report] = prune(model, pc, calib(2, 130));
    CHECK(pruned->params().find("weight.head.w") == nullptr);
    REQUIRE(pruned->config().frozen_weights.size() == 3);
    double sum = 0.0;
    for (double w : pruned->config().frozen_weights) sum += w;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

    ForwardResult res = pruned->forward(calib(1, 140)[0].image);
    CHECK(res.weights.shape[2] == 3);
    for (int j = 0; j < 3; ++j)
      CHECK(res.weights.at(0, 0, j) ==
            doctest::Approx(pruned->config().frozen_weights[j]).epsilon(1e-12));
  }

  TEST_CASE("finetune requires a pruned model and decreases the loss") {
    Mesorch full(tiny_config());
    TrainConfig tc;
    tc.epochs = 1;
    TrainState st;
    CHECK_THROWS_AS(renormalize_and_finetune(full, calib(1, 150), tc, "", st),
                    NotApplicableError);

    // build a pruned model, then take 10 optimizer steps on one batch
    randomize_head(full, 23, 0.3);
    PruneConfig pc;
    pc.epsilon = 0.12;  // prunes at least one branch of a randomized head
    auto data = calib(2, 160);
    auto [pruned, report] = prune(full, pc, data);
    if (report.pruned_branches.empty()) {
      // randomized head came out near-uniform; force with epsilon above min
      double min_mean = 1.0;
      for (double m : report.mean_weights) min_mean = std::min(min_mean, m);
      PruneConfig pc2;
      pc2.epsilon = min_mean + 1e-6;
      std::tie(pruned, report) = prune(full, pc2, data);
    }
    REQUIRE(!report.pruned_branches.empty());

    std::vector<LabeledImage> batch;
    for (int i = 0; i < 4; ++i) {
      Scene sc = gen_scene(700 + static_cast<std::uint64_t>(i), 32, 32);
      TamperSample t = gen_copy_move(700 + static_cast<std::uint64_t>(i), sc.image,
                                     &sc.objects);
      batch.push_back({t.image, t.mask, "b" + std::to_string(i)});
    }
    TrainConfig ft;
    ft.epochs = 10;
    ft.batch_size = 4;
    ft.accumulation_steps = 1;
    ft.warmup_epochs = 0;
    ft.lr_max = 1e-3;
    ft.lr_min = 1e-4;
    TrainState fts;
    TrainRunResult run = renormalize_and_finetune(*pruned, batch, ft, "", fts);
    REQUIRE(fts.trace.size() == 10);
    int increases = 0;
    for (size_t i = 1; i < fts.trace.size(); ++i)
      if (fts.trace[i].loss >= fts.trace[i - 1].loss) ++increases;
    CHECK(increases <= 2);
    CHECK(run.last_epoch_loss < run.first_epoch_loss);
  }

  TEST_CASE("prune report serialization") {
    Mesorch model(tiny_config());
    PruneConfig pc;
    pc.epsilon = 0.05;
    auto [pruned, report] = prune(model, pc, calib(1, 170));
    auto j = prune_report_to_json(report);
    CHECK(j.at("epsilon").get<double>() == 0.05);
    CHECK(j.at("branches").size() == 8);
    CHECK(j.at("pruned_branches").size() + j.at("surviving_branches").size() == 8);
    CHECK(j.at("params_before").get<std::int64_t>() == model.num_params());
  }
}
