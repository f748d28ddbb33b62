#ifndef MESORCH_TRAIN_HPP_
#define MESORCH_TRAIN_HPP_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mesorch/data.hpp"
#include "mesorch/model.hpp"

namespace mesorch {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  int accumulation_steps = 2;
  double lr_max = 1e-4;
  double lr_min = 5e-7;
  int warmup_epochs = 2;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool deterministic = true;

  void validate() const;
};

struct TraceRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainState {
  std::int64_t step = 0;   // optimizer steps completed (also the AdamW t)
  std::int64_t epoch = 0;  // epochs completed
  std::string rng_state;   // shuffle stream
  std::vector<TraceRow> trace;
};

// Mean per-pixel binary cross-entropy, computed in logit space.
double bce_with_logits(const Tensor& logits, const Tensor& mask);
// d(loss * scale)/dlogits; pass scale = 1/batch for mean-over-batch reduction.
Tensor bce_with_logits_backward(const Tensor& logits, const Tensor& mask, double scale);

// Linear warmup to lr_max, then cosine decay to lr_min at total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

// One decoupled-weight-decay Adam update from accumulated gradients.
// t is the 1-based optimizer step count.
void adamw_step(ParamStore& store, double lr, const TrainConfig& cfg, std::int64_t t);

std::int64_t steps_per_epoch(std::int64_t n_samples, const TrainConfig& cfg);

struct TrainRunResult {
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
};

// Runs (cfg.epochs - state.epoch) epochs of training. When out_dir is
// non-empty, writes per-epoch checkpoints under out_dir/checkpoints/, the
// loss trace to out_dir/trace.csv and a final state to out_dir/final.
// state carries progress for resumption and accumulates the trace.
// stop_after_epoch interrupts the run early (schedule still spans cfg.epochs).
TrainRunResult train_loop(Mesorch& model, const std::vector<LabeledImage>& data,
                          const TrainConfig& cfg, const std::string& out_dir,
                          TrainState& state, bool verbose = false,
                          std::int64_t stop_after_epoch = -1);

// Full train state (model + optimizer moments + progress) on disk.
void save_train_state(const Mesorch& model, const TrainState& state,
                      const std::string& dir);
std::unique_ptr<Mesorch> load_train_state(const std::string& dir, TrainState* state);

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);

}  // namespace mesorch

#endif  // MESORCH_TRAIN_HPP_
