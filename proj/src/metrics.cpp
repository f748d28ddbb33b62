#include "mesorch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mesorch {

namespace {

struct Counts {
  std::int64_t tp = 0, fp = 0, fn = 0;
};

// Accepts [H, W] or [H, W, 1] prediction against a [H, W] mask.
Counts binary_counts(const Tensor& pred_prob, const Tensor& mask, double threshold) {
  check_input(mask.shape.size() == 2, "mask must be [H, W], got " + mask.shape_str());
  const bool trailing1 =
      pred_prob.shape.size() == 3 && pred_prob.shape[2] == 1;
  check_input(pred_prob.shape.size() == 2 || trailing1,
              "prediction must be [H, W] or [H, W, 1], got " + pred_prob.shape_str());
  check_input(pred_prob.shape[0] == mask.shape[0] && pred_prob.shape[1] == mask.shape[1],
              "prediction " + pred_prob.shape_str() + " and mask " + mask.shape_str() +
                  " are not aligned");
  Counts c;
  const std::int64_t n = mask.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const bool p = pred_prob[i] >= threshold;
    const bool y = mask[i] >= 0.5;
    if (p && y) ++c.tp;
    else if (p && !y) ++c.fp;
    else if (!p && y) ++c.fn;
  }
  return c;
}

double f1_from_counts(const Counts& c) {
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;  // both prediction and mask all-negative
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double iou_from_counts(const Counts& c) {
  const std::int64_t denom = c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

Tensor invert_prob(const Tensor& pred_prob) {
  Tensor inv = pred_prob;
  for (auto& v : inv.data) v = 1.0 - v;
  return inv;
}

}  // namespace

double pixel_f1(const Tensor& pred_prob, const Tensor& mask, double threshold) {
  return f1_from_counts(binary_counts(pred_prob, mask, threshold));
}

double permute_f1(const Tensor& pred_prob, const Tensor& mask, double threshold) {
  const double direct = pixel_f1(pred_prob, mask, threshold);
  const double inverted = pixel_f1(invert_prob(pred_prob), mask, threshold);
  return std::max(direct, inverted);
}

double iou(const Tensor& pred_prob, const Tensor& mask, double threshold) {
  return iou_from_counts(binary_counts(pred_prob, mask, threshold));
}

std::optional<double> auc(const Tensor& pred_prob, const Tensor& mask) {
  binary_counts(pred_prob, mask, 0.5);  // shape validation
  const std::int64_t n = mask.numel();
  std::vector<std::pair<double, int>> scored(static_cast<size_t>(n));
  std::int64_t n_pos = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = mask[i] >= 0.5 ? 1 : 0;
    scored[static_cast<size_t>(i)] = {pred_prob[i], y};
    n_pos += y;
  }
  const std::int64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // midrank over tie groups
  double rank_sum_pos = 0.0;
  std::int64_t i = 0;
  while (i < n) {
    std::int64_t j = i;
    while (j < n && scored[static_cast<size_t>(j)].first == scored[static_cast<size_t>(i)].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::int64_t t = i; t < j; ++t) {
      if (scored[static_cast<size_t>(t)].second) rank_sum_pos += midrank;
    }
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsRow score_prediction(const std::string& id, const Tensor& pred_prob,
                            const Tensor& mask, double threshold) {
  MetricsRow row;
  row.id = id;
  row.f1 = pixel_f1(pred_prob, mask, threshold);
  row.permute_f1 = permute_f1(pred_prob, mask, threshold);
  row.iou = iou(pred_prob, mask, threshold);
  row.auc = auc(pred_prob, mask);
  return row;
}

static MetricsReport finalize_report(std::vector<MetricsRow> rows,
                                     std::vector<Counts> counts, double threshold) {
  MetricsReport rep;
  rep.rows = std::move(rows);
  rep.threshold = threshold;
  double auc_sum = 0.0;
  int auc_n = 0;
  Counts micro;
  for (size_t i = 0; i < rep.rows.size(); ++i) {
    rep.mean_f1 += rep.rows[i].f1;
    rep.mean_permute_f1 += rep.rows[i].permute_f1;
    rep.mean_iou += rep.rows[i].iou;
    if (rep.rows[i].auc) {
      auc_sum += *rep.rows[i].auc;
      ++auc_n;
    } else {
      ++rep.auc_excluded;
    }
    micro.tp += counts[i].tp;
    micro.fp += counts[i].fp;
    micro.fn += counts[i].fn;
  }
  const double n = rep.rows.empty() ? 1.0 : static_cast<double>(rep.rows.size());
  rep.mean_f1 /= n;
  rep.mean_permute_f1 /= n;
  rep.mean_iou /= n;
  rep.mean_auc = auc_n > 0 ? auc_sum / auc_n : 0.0;
  rep.micro_f1 = f1_from_counts(micro);
  return rep;
}

MetricsReport evaluate_model(const Mesorch& model, const std::vector<LabeledImage>& data,
                             double threshold) {
  check_input(!data.empty(), "evaluation set is empty");
  std::vector<MetricsRow> rows;
  std::vector<Counts> counts;
  for (const auto& s : data) {
    ForwardResult res = model.forward(s.image);
    rows.push_back(score_prediction(s.id, res.prob, s.mask, threshold));
    counts.push_back(binary_counts(res.prob, s.mask, threshold));
  }
  return finalize_report(std::move(rows), std::move(counts), threshold);
}

MetricsReport score_predictions(const std::vector<Tensor>& probs,
                                const std::vector<LabeledImage>& data, double threshold) {
  check_input(probs.size() == data.size(), "prediction/sample count mismatch");
  std::vector<MetricsRow> rows;
  std::vector<Counts> counts;
  for (size_t i = 0; i < data.size(); ++i) {
    rows.push_back(score_prediction(data[i].id, probs[i], data[i].mask, threshold));
    counts.push_back(binary_counts(probs[i], data[i].mask, threshold));
  }
  return finalize_report(std::move(rows), std::move(counts), threshold);
}

CostReport count_cost(const Mesorch& model, int input_h, int input_w) {
  CostReport rep;
  rep.input_h = input_h;
  rep.input_w = input_w;
  rep.layers = model.cost(input_h, input_w);
  std::int64_t macs = 0;
  for (const auto& l : rep.layers) {
    rep.params += l.params;
    macs += l.macs;
  }
  rep.flops = 2 * macs;
  return rep;
}

}  // namespace mesorch
