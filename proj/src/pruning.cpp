#include "mesorch/pruning.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "mesorch/metrics.hpp"

namespace mesorch {

void PruneConfig::validate() const {
  // closed interval so the epsilon=0 (prune nothing) and epsilon=1 (guard)
  // boundary behaviors stay testable
  check_config(epsilon >= 0.0 && epsilon <= 1.0, "epsilon must lie in [0, 1]");
  check_config(min_surviving_branches >= 1, "min_surviving_branches must be >= 1");
}

std::vector<double> mean_scale_weights(const Mesorch& model,
                                       const std::vector<LabeledImage>& calibration) {
  if (model.config().fusion_mode != "adaptive") {
    throw NotApplicableError("mean_scale_weights requires adaptive fusion");
  }
  check_input(!calibration.empty(), "calibration set is empty");

  const int k = model.config().k_active();
  std::vector<double> sums(static_cast<size_t>(k), 0.0);
  std::int64_t pixels = 0;
  for (const auto& s : calibration) {
    ForwardResult res = model.forward(s.image);
    const int h4 = res.weights.shape[0], w4 = res.weights.shape[1];
    for (int y = 0; y < h4; ++y)
      for (int x = 0; x < w4; ++x)
        for (int j = 0; j < k; ++j) sums[static_cast<size_t>(j)] += res.weights.at(y, x, j);
    pixels += static_cast<std::int64_t>(h4) * w4;
  }
  for (auto& v : sums) v /= static_cast<double>(pixels);
  return sums;
}

std::pair<std::unique_ptr<Mesorch>, PruneReport> prune(
    const Mesorch& model, const PruneConfig& cfg,
    const std::vector<LabeledImage>& calibration) {
  cfg.validate();
  const MesorchConfig& mc = model.config();
  if (mc.fusion_mode != "adaptive") {
    throw NotApplicableError("prune requires adaptive fusion");
  }

  PruneReport report;
  report.epsilon = cfg.epsilon;
  report.branch_ids = mc.active_branches;
  report.mean_weights = mean_scale_weights(model, calibration);
  {
    const int h4 = mc.input_h / 4, w4 = mc.input_w / 4;
    report.pixel_count = static_cast<std::int64_t>(calibration.size()) * h4 * w4;
  }

  const int k = mc.k_active();
  std::vector<char> keep(static_cast<size_t>(k), 0);
  int survivors = 0;
  for (int j = 0; j < k; ++j) {
    if (report.mean_weights[static_cast<size_t>(j)] >= cfg.epsilon) {
      keep[static_cast<size_t>(j)] = 1;
      ++survivors;
    }
  }
  if (survivors < cfg.min_surviving_branches) {
    report.guard_engaged = true;
    std::vector<int> idx(static_cast<size_t>(k));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return report.mean_weights[static_cast<size_t>(a)] >
             report.mean_weights[static_cast<size_t>(b)];
    });
    std::fill(keep.begin(), keep.end(), 0);
    const int n_keep = std::min(cfg.min_surviving_branches, k);
    for (int i = 0; i < n_keep; ++i) keep[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1;
  }

  MesorchConfig pruned_cfg = mc;
  pruned_cfg.active_branches.clear();
  for (int j = 0; j < k; ++j) {
    const int id = mc.active_branches[static_cast<size_t>(j)];
    if (keep[static_cast<size_t>(j)]) {
      report.surviving_branches.push_back(id);
      pruned_cfg.active_branches.push_back(id);
    } else {
      report.pruned_branches.push_back(id);
    }
  }
  if (pruned_cfg.post_prune_weighting == "frozen" && !report.pruned_branches.empty()) {
    double sum = 0.0;
    pruned_cfg.frozen_weights.clear();
    for (int j = 0; j < k; ++j)
      if (keep[static_cast<size_t>(j)]) {
        pruned_cfg.frozen_weights.push_back(report.mean_weights[static_cast<size_t>(j)]);
        sum += report.mean_weights[static_cast<size_t>(j)];
      }
    for (auto& wj : pruned_cfg.frozen_weights) wj /= sum;
  }

  auto pruned = std::make_unique<Mesorch>(pruned_cfg);

  // copy surviving parameters; the weighting head shrinks to the surviving rows
  for (const auto& np : pruned->params().all()) {
    const Parameter* op = model.params().find(np->name);
    check_input(op != nullptr, "pruned parameter '" + np->name + "' missing from source");
    if (np->shape == op->shape) {
      np->value = op->value;
      continue;
    }
    check_input(np->name == "weight.head.w" || np->name == "weight.head.b",
                "unexpected shape change for parameter '" + np->name + "'");
    const int k_new = pruned_cfg.k_active();
    std::vector<int> col_of;  // new column -> old column
    for (int j = 0; j < k; ++j)
      if (keep[static_cast<size_t>(j)]) col_of.push_back(j);
    const std::int64_t rows = op->numel() / k;
    for (std::int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < k_new; ++j)
        np->value[static_cast<size_t>(r * k_new + j)] =
            op->value[static_cast<size_t>(r * k + col_of[static_cast<size_t>(j)])];
  }

  const CostReport before = count_cost(model, mc.input_h, mc.input_w);
  const CostReport after = count_cost(*pruned, mc.input_h, mc.input_w);
  report.params_before = before.params;
  report.params_after = after.params;
  report.flops_before = before.flops;
  report.flops_after = after.flops;
  return {std::move(pruned), report};
}

TrainRunResult renormalize_and_finetune(Mesorch& model,
                                        const std::vector<LabeledImage>& data,
                                        const TrainConfig& cfg,
                                        const std::string& out_dir, TrainState& state) {
  if (model.config().k_active() >= kNumBranches) {
    throw NotApplicableError("model has all branches active; nothing was pruned");
  }
  return train_loop(model, data, cfg, out_dir, state);
}

nlohmann::ordered_json prune_report_to_json(const PruneReport& report) {
  nlohmann::ordered_json j;
  j["epsilon"] = report.epsilon;
  nlohmann::ordered_json branches = nlohmann::ordered_json::array();
  for (size_t i = 0; i < report.branch_ids.size(); ++i) {
    nlohmann::ordered_json b;
    b["index"] = report.branch_ids[i] + 1;  // 1-based in reports
    b["name"] = branch_name(report.branch_ids[i]);
    b["mean_weight"] = report.mean_weights[i];
    branches.push_back(b);
  }
  j["branches"] = branches;
  j["pixel_count"] = report.pixel_count;
  auto one_based = [](const std::vector<int>& ids) {
    std::vector<int> out;
    for (int id : ids) out.push_back(id + 1);
    return out;
  };
  j["pruned_branches"] = one_based(report.pruned_branches);
  j["surviving_branches"] = one_based(report.surviving_branches);
  j["guard_engaged"] = report.guard_engaged;
  j["params_before"] = report.params_before;
  j["params_after"] = report.params_after;
  j["param_delta"] = report.param_delta();
  j["flops_before"] = report.flops_before;
  j["flops_after"] = report.flops_after;
  j["flop_delta"] = report.flop_delta();
  return j;
}

void write_prune_report(const PruneReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write prune report: " + path);
  f << prune_report_to_json(report).dump(2) << "\n";
}

}  // namespace mesorch
