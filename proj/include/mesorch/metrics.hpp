#ifndef MESORCH_METRICS_HPP_
#define MESORCH_METRICS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "mesorch/data.hpp"
#include "mesorch/model.hpp"

namespace mesorch {

// Pixel F1 at the given threshold. Defined as 1 when prediction and mask are
// both all-negative, 0 when the mask is empty but the prediction is not.
double pixel_f1(const Tensor& pred_prob, const Tensor& mask, double threshold = 0.5);

// max(F1(pred), F1(1 - pred)): per-image best over identity and inversion.
double permute_f1(const Tensor& pred_prob, const Tensor& mask, double threshold = 0.5);

// TP / (TP + FP + FN) with the same degenerate conventions as pixel_f1.
double iou(const Tensor& pred_prob, const Tensor& mask, double threshold = 0.5);

// Mann-Whitney AUC with midrank tie handling; nullopt for single-class masks.
std::optional<double> auc(const Tensor& pred_prob, const Tensor& mask);

struct MetricsRow {
  std::string id;
  double f1 = 0.0;
  double permute_f1 = 0.0;
  double iou = 0.0;
  std::optional<double> auc;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  double threshold = 0.5;
  // Dataset means; AUC averages only the defined entries.
  double mean_f1 = 0.0;
  double mean_permute_f1 = 0.0;
  double mean_iou = 0.0;
  double mean_auc = 0.0;
  int auc_excluded = 0;
  // Micro-averaged alternative (pixel-pooled counts across the dataset).
  double micro_f1 = 0.0;

  int sample_count() const { return static_cast<int>(rows.size()); }
};

MetricsRow score_prediction(const std::string& id, const Tensor& pred_prob,
                            const Tensor& mask, double threshold = 0.5);

// Runs the model over the samples and aggregates per-image metrics.
MetricsReport evaluate_model(const Mesorch& model, const std::vector<LabeledImage>& data,
                             double threshold = 0.5);

// Scores externally supplied probability maps (one per sample, aligned).
MetricsReport score_predictions(const std::vector<Tensor>& probs,
                                const std::vector<LabeledImage>& data,
                                double threshold = 0.5);

struct CostReport {
  std::int64_t params = 0;
  std::int64_t flops = 0;  // 2 x multiply-accumulates, matmul/conv terms only
  int input_h = 0;
  int input_w = 0;
  std::vector<LayerCost> layers;
};

CostReport count_cost(const Mesorch& model, int input_h, int input_w);

}  // namespace mesorch

#endif  // MESORCH_METRICS_HPP_
