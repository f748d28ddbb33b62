#include "mesorch/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "mesorch/rng.hpp"
#include "mesorch/serialize.hpp"

namespace fs = std::filesystem;

namespace mesorch {

void TrainConfig::validate() const {
  check_config(epochs >= 1, "epochs must be >= 1");
  check_config(batch_size >= 1, "batch_size must be >= 1");
  check_config(accumulation_steps >= 1, "accumulation_steps must be >= 1");
  check_config(lr_min < lr_max, "lr_min must be < lr_max");
  check_config(lr_max > 0.0, "lr_max must be positive");
  check_config(warmup_epochs >= 0 && warmup_epochs < epochs,
               "warmup_epochs must be in [0, epochs)");
  check_config(weight_decay >= 0.0, "weight_decay must be nonnegative");
}

static void check_loss_shapes(const Tensor& logits, const Tensor& mask) {
  check_input(logits.shape.size() == 3 && logits.shape[2] == 1,
              "logits must be [H, W, 1], got " + logits.shape_str());
  check_input(mask.shape.size() == 2, "mask must be [H, W], got " + mask.shape_str());
  check_input(logits.shape[0] == mask.shape[0] && logits.shape[1] == mask.shape[1],
              "logits " + logits.shape_str() + " and mask " + mask.shape_str() +
                  " are not aligned");
}

double bce_with_logits(const Tensor& logits, const Tensor& mask) {
  check_loss_shapes(logits, mask);
  const std::int64_t n = mask.numel();
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double z = logits[i];
    const double y = mask[i];
    sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return sum / static_cast<double>(n);
}

Tensor bce_with_logits_backward(const Tensor& logits, const Tensor& mask, double scale) {
  check_loss_shapes(logits, mask);
  const std::int64_t n = mask.numel();
  Tensor d(logits.shape);
  const double s = scale / static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double z = logits[i];
    const double p = (z >= 0.0) ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    d[i] = s * (p - mask[i]);
  }
  return d;
}

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  check_input(step >= 0 && step <= total_steps, "step out of range");
  const std::int64_t warmup = total_steps * cfg.warmup_epochs / cfg.epochs;
  if (warmup > 0 && step <= warmup) {
    return cfg.lr_max * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (total_steps == warmup) return cfg.lr_max;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(M_PI * progress));
}

void adamw_step(ParamStore& store, double lr, const TrainConfig& cfg, std::int64_t t) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (const auto& p : store.all()) {
    p->ensure_grad();
    p->ensure_moments();
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      const double m = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g * g;
      double value = p->value[i];
      if (p->decay) value -= lr * cfg.weight_decay * value;
      value -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      p->m[i] = snap_f32(m);
      p->v[i] = snap_f32(v);
      p->value[i] = snap_f32(value);
    }
  }
}

std::int64_t steps_per_epoch(std::int64_t n_samples, const TrainConfig& cfg) {
  const std::int64_t per_step =
      static_cast<std::int64_t>(cfg.batch_size) * cfg.accumulation_steps;
  return (n_samples + per_step - 1) / per_step;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write trace: " + path);
  f << "step,lr,loss\n";
  char buf[96];
  for (const auto& row : trace) {
    std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g\n",
                  static_cast<long long>(row.step), row.lr, row.loss);
    f << buf;
  }
}

void save_train_state(const Mesorch& model, const TrainState& state,
                      const std::string& dir) {
  save_model(model, dir, {state.step, state.epoch});
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "optim", ec);
  if (ec) throw IoError("cannot create optim directory in " + dir);
  for (const auto& p : model.params().all()) {
    if (p->m.empty()) continue;
    write_f32_blob((fs::path(dir) / "optim" / (p->name + ".m.bin")).string(), p->m);
    write_f32_blob((fs::path(dir) / "optim" / (p->name + ".v.bin")).string(), p->v);
  }
  ordered_json j;
  j["step"] = state.step;
  j["epoch"] = state.epoch;
  j["rng_state"] = state.rng_state;
  ordered_json trace = ordered_json::array();
  for (const auto& row : state.trace) trace.push_back({row.step, row.lr, row.loss});
  j["trace"] = trace;
  std::ofstream f(fs::path(dir) / "state.json");
  if (!f) throw IoError("cannot write state.json in " + dir);
  f << j.dump(2) << "\n";
}

std::unique_ptr<Mesorch> load_train_state(const std::string& dir, TrainState* state) {
  CheckpointMeta meta;
  auto model = load_model(dir, &meta);
  const fs::path spath = fs::path(dir) / "state.json";
  std::ifstream f(spath);
  if (!f) throw IoError("cannot open " + spath.string());
  nlohmann::json j;
  f >> j;
  state->step = j.at("step").get<std::int64_t>();
  state->epoch = j.at("epoch").get<std::int64_t>();
  state->rng_state = j.at("rng_state").get<std::string>();
  state->trace.clear();
  for (const auto& row : j.at("trace")) {
    state->trace.push_back({row.at(0).get<std::int64_t>(), row.at(1).get<double>(),
                            row.at(2).get<double>()});
  }
  for (const auto& p : model->params().all()) {
    const fs::path mpath = fs::path(dir) / "optim" / (p->name + ".m.bin");
    const fs::path vpath = fs::path(dir) / "optim" / (p->name + ".v.bin");
    if (!fs::exists(mpath)) {
      throw VersionError("optimizer moment blob missing for '" + p->name + "' in " + dir);
    }
    read_f32_blob(mpath.string(), &p->m, p->numel());
    read_f32_blob(vpath.string(), &p->v, p->numel());
  }
  return model;
}

TrainRunResult train_loop(Mesorch& model, const std::vector<LabeledImage>& data,
                          const TrainConfig& cfg, const std::string& out_dir,
                          TrainState& state, bool verbose,
                          std::int64_t stop_after_epoch) {
  cfg.validate();
  check_input(!data.empty(), "training set is empty");

  // Enhanced inputs are a pure function of the image; compute once.
  std::vector<EnhancedInput> prepared;
  prepared.reserve(data.size());
  for (const auto& s : data) {
    prepared.push_back(make_enhanced_inputs(s.image, model.config().freq_cutoff));
  }

  const std::int64_t n = static_cast<std::int64_t>(data.size());
  const std::int64_t spe = steps_per_epoch(n, cfg);
  const std::int64_t total_steps = spe * cfg.epochs;
  const std::int64_t per_step =
      static_cast<std::int64_t>(cfg.batch_size) * cfg.accumulation_steps;

  Rng shuffle_rng(derive_seed(cfg.seed, "train-shuffle"));
  if (!state.rng_state.empty()) shuffle_rng.load_state(state.rng_state);

  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "checkpoints", ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);
  }

  TrainRunResult result;
  std::vector<std::int64_t> order(static_cast<size_t>(n));
  const std::int64_t last_epoch =
      stop_after_epoch < 0 ? cfg.epochs
                           : std::min<std::int64_t>(cfg.epochs, stop_after_epoch);
  for (std::int64_t epoch = state.epoch; epoch < last_epoch; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::int64_t i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(shuffle_rng.randint(0, i))]);
    }

    double epoch_loss = 0.0;
    for (std::int64_t s = 0; s < spe; ++s) {
      const std::int64_t begin = s * per_step;
      const std::int64_t end = std::min(begin + per_step, n);
      const std::int64_t n_step = end - begin;

      model.params().zero_grads();
      double loss_sum = 0.0;
      Mesorch::Cache cache;
      for (std::int64_t i = begin; i < end; ++i) {
        const std::int64_t idx = order[static_cast<size_t>(i)];
        ForwardResult res = model.forward_parts(prepared[static_cast<size_t>(idx)], &cache);
        const Tensor& mask = data[static_cast<size_t>(idx)].mask;
        loss_sum += bce_with_logits(res.full, mask);
        Tensor dfull =
            bce_with_logits_backward(res.full, mask, 1.0 / static_cast<double>(n_step));
        model.backward(dfull, res, cache);
      }
      const double step_loss = loss_sum / static_cast<double>(n_step);
      if (!std::isfinite(step_loss)) {
        std::string diag = out_dir.empty() ? std::string("mesorch_nan_diagnostic")
                                           : out_dir + "/diagnostic_nan";
        state.rng_state = shuffle_rng.save_state();
        save_train_state(model, state, diag);
        throw TrainAbortError("NaN loss at step " + std::to_string(state.step + 1) +
                              "; diagnostic snapshot at " + diag);
      }

      const std::int64_t t = state.step + 1;
      const double lr = lr_at(t, total_steps, cfg);
      adamw_step(model.params(), lr, cfg, t);
      state.step = t;
      state.trace.push_back({t, lr, step_loss});
      epoch_loss += step_loss;
    }
    epoch_loss /= static_cast<double>(spe);
    if (epoch == 0) result.first_epoch_loss = epoch_loss;
    result.last_epoch_loss = epoch_loss;

    state.epoch = epoch + 1;
    state.rng_state = shuffle_rng.save_state();
    if (verbose) {
      std::cout << "epoch " << (epoch + 1) << "/" << cfg.epochs << " loss " << epoch_loss
                << std::endl;
    }
    if (!out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04lld", static_cast<long long>(epoch + 1));
      save_train_state(model, state, (fs::path(out_dir) / "checkpoints" / name).string());
      write_trace_csv((fs::path(out_dir) / "trace.csv").string(), state.trace);
    }
  }
  if (!out_dir.empty()) {
    save_train_state(model, state, (fs::path(out_dir) / "final").string());
    write_trace_csv((fs::path(out_dir) / "trace.csv").string(), state.trace);
  }
  return result;
}

}  // namespace mesorch
