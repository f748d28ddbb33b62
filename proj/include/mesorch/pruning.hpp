#ifndef MESORCH_PRUNING_HPP_
#define MESORCH_PRUNING_HPP_

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mesorch/data.hpp"
#include "mesorch/model.hpp"
#include "mesorch/train.hpp"

namespace mesorch {

struct PruneConfig {
  double epsilon = 0.5 / kNumBranches;  // half the uniform weight
  int min_surviving_branches = 1;

  void validate() const;
};

struct PruneReport {
  double epsilon = 0.0;
  std::vector<int> branch_ids;       // the input model's active branches
  std::vector<double> mean_weights;  // aligned with branch_ids
  std::int64_t pixel_count = 0;
  std::vector<int> pruned_branches;
  std::vector<int> surviving_branches;
  bool guard_engaged = false;
  std::int64_t params_before = 0, params_after = 0;
  std::int64_t flops_before = 0, flops_after = 0;

  std::int64_t param_delta() const { return params_before - params_after; }
  std::int64_t flop_delta() const { return flops_before - flops_after; }
};

// Dataset-mean adaptive weight per active branch: (1/N) sum over all pixels
// of all calibration images.
std::vector<double> mean_scale_weights(const Mesorch& model,
                                       const std::vector<LabeledImage>& calibration);

// Removes every branch whose mean weight falls below epsilon (keeping at
// least min_surviving_branches, by descending mean) and rebuilds the model
// without the pruned decoders, trailing encoder stages, and weighting rows.
std::pair<std::unique_ptr<Mesorch>, PruneReport> prune(
    const Mesorch& model, const PruneConfig& cfg,
    const std::vector<LabeledImage>& calibration);

// Continues training a pruned model (the K-way weighting head is already
// structurally renormalized). Errors with K = 8.
TrainRunResult renormalize_and_finetune(Mesorch& model,
                                        const std::vector<LabeledImage>& data,
                                        const TrainConfig& cfg,
                                        const std::string& out_dir, TrainState& state);

nlohmann::ordered_json prune_report_to_json(const PruneReport& report);
void write_prune_report(const PruneReport& report, const std::string& path);

}  // namespace mesorch

#endif  // MESORCH_PRUNING_HPP_
