#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mesorch/imageio.hpp"
#include "mesorch/metrics.hpp"
#include "mesorch/pruning.hpp"
#include "mesorch/serialize.hpp"
#include "mesorch/synthdata.hpp"

namespace fs = std::filesystem;
using namespace mesorch;

namespace {

struct ResolvedConfig {
  MesorchConfig model;
  TrainConfig train;
  PruneConfig prune;
};

TrainConfig preset_train_config(const std::string& preset) {
  TrainConfig t;
  if (preset == "paper") {
    t.epochs = 150;
    t.batch_size = 12;
  }
  return t;
}

ResolvedConfig resolve_config(const std::string& preset, const std::string& config_file) {
  ResolvedConfig rc;
  rc.model = MesorchConfig::preset_config(preset);
  rc.train = preset_train_config(preset);
  if (!config_file.empty()) {
    std::ifstream f(config_file);
    if (!f) throw IoError("cannot open config file: " + config_file);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed config file " + config_file + ": " + e.what());
    }
    check_config(j.is_object(), "config file must hold a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      check_config(it.key() == "model" || it.key() == "train" || it.key() == "prune",
                   "unknown config section '" + it.key() + "'");
    }
    if (j.contains("model")) rc.model = config_from_json(j.at("model"), rc.model);
    if (j.contains("train")) rc.train = train_config_from_json(j.at("train"), rc.train);
    if (j.contains("prune")) rc.prune = prune_config_from_json(j.at("prune"), rc.prune);
  }
  return rc;
}

ordered_json resolved_to_json(const ResolvedConfig& rc) {
  ordered_json j;
  j["model"] = config_to_json(rc.model);
  j["train"] = train_config_to_json(rc.train);
  j["prune"] = prune_config_to_json(rc.prune);
  return j;
}

// Every command echoes its fully resolved configuration and a version stamp
// into the output directory before doing real work.
void write_run_config(const std::string& out_dir, const std::string& command,
                      const ordered_json& resolved) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);
  ordered_json j;
  j["tool_version"] = kToolVersion;
  j["command"] = command;
  j["resolved"] = resolved;
  std::ofstream f(fs::path(out_dir) / "run_config.json");
  if (!f) throw IoError("cannot write run_config.json in " + out_dir);
  f << j.dump(2) << "\n";
}

std::string fmt_auc(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

void write_metrics_csv(const MetricsReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "image,f1,permute_f1,iou,auc\n";
  char buf[160];
  for (const auto& row : rep.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%s\n", row.id.c_str(), row.f1,
                  row.permute_f1, row.iou, fmt_auc(row.auc).c_str());
    f << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.6f,%.6f,%.6f,%.6f\n", rep.mean_f1,
                rep.mean_permute_f1, rep.mean_iou, rep.mean_auc);
  f << buf;
}

ordered_json metrics_to_json(const MetricsReport& rep) {
  ordered_json j;
  j["threshold"] = rep.threshold;
  j["sample_count"] = rep.sample_count();
  j["mean_f1"] = rep.mean_f1;
  j["mean_permute_f1"] = rep.mean_permute_f1;
  j["mean_iou"] = rep.mean_iou;
  j["mean_auc"] = rep.mean_auc;
  j["auc_excluded"] = rep.auc_excluded;
  j["micro_f1"] = rep.micro_f1;
  ordered_json rows = ordered_json::array();
  for (const auto& row : rep.rows) {
    ordered_json r;
    r["image"] = row.id;
    r["f1"] = row.f1;
    r["permute_f1"] = row.permute_f1;
    r["iou"] = row.iou;
    if (row.auc) r["auc"] = *row.auc;
    rows.push_back(r);
  }
  j["per_image"] = rows;
  return j;
}

void write_metrics_json(const MetricsReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << metrics_to_json(rep).dump(2) << "\n";
}

ordered_json cost_to_json(const CostReport& rep) {
  ordered_json j;
  j["input_h"] = rep.input_h;
  j["input_w"] = rep.input_w;
  j["params"] = rep.params;
  j["flops"] = rep.flops;
  ordered_json layers = ordered_json::array();
  for (const auto& l : rep.layers) {
    ordered_json e;
    e["name"] = l.name;
    e["params"] = l.params;
    e["flops"] = 2 * l.macs;
    layers.push_back(e);
  }
  j["layers"] = layers;
  return j;
}

// ---------------------------------------------------------------------------
// Subcommand options
// ---------------------------------------------------------------------------

struct GenDataOpts {
  std::string out;
  std::uint64_t seed = 0;
  int count = 200;
  int size = 64;
  std::string fractions = "0.7,0.1,0.1,0.1";
};

struct TrainOpts {
  std::string data, out, resume, config;
  std::string preset = "toy";
  std::optional<int> epochs, batch_size;
  std::optional<std::uint64_t> seed;
};

struct PruneOpts {
  std::string checkpoint, calibration, out, config;
  std::optional<double> epsilon;
  int finetune_epochs = 5;
};

struct EvalOpts {
  std::string checkpoint, data, out;
  std::string split = "test";
  double threshold = 0.5;
};

struct RobustOpts {
  std::string checkpoint, data, out;
  std::string split = "test";
  std::uint64_t seed = 0;
};

struct FlopsOpts {
  std::string checkpoint, preset, out;
  std::optional<int> size;
};

struct PredictOpts {
  std::string checkpoint, image, out;
};

std::array<double, 4> parse_fractions(const std::string& s) {
  std::array<double, 4> f{};
  int n = 0;
  size_t pos = 0;
  while (n < 4 && pos <= s.size()) {
    size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    f[static_cast<size_t>(n++)] = std::stod(s.substr(pos, comma - pos));
    pos = comma + 1;
  }
  check_config(n == 4 && pos > s.size(), "--split-fractions needs exactly 4 numbers");
  return f;
}

int cmd_gen_data(const GenDataOpts& o) {
  auto fractions = parse_fractions(o.fractions);
  ordered_json resolved;
  resolved["seed"] = o.seed;
  resolved["count"] = o.count;
  resolved["size"] = o.size;
  resolved["split_fractions"] = fractions;
  write_run_config(o.out, "gen-data", resolved);

  auto by_split = generate_split_samples(o.count, o.size, o.seed, fractions);
  DatasetManifest manifest = write_dataset(o.out, by_split);
  std::cout << "dataset written to " << o.out << "\n";
  for (const char* split : kSplitNames) {
    auto it = manifest.splits.find(split);
    std::cout << "  " << split << ": " << (it == manifest.splits.end() ? 0 : it->second.size())
              << " samples\n";
  }
  return 0;
}

int cmd_train(const TrainOpts& o) {
  ResolvedConfig rc = resolve_config(o.preset, o.config);
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.batch_size) rc.train.batch_size = *o.batch_size;
  if (o.seed) {
    rc.train.seed = *o.seed;
    rc.model.seed = *o.seed;
  }

  DatasetManifest manifest = read_dataset(o.data);
  std::vector<LabeledImage> train_data = load_split(manifest, "train");
  check_input(!train_data.empty(), "train split is empty");
  check_config(train_data[0].image.height == rc.model.input_h &&
                   train_data[0].image.width == rc.model.input_w,
               "dataset sample size does not match model input size");

  std::unique_ptr<Mesorch> model;
  TrainState state;
  if (!o.resume.empty()) {
    model = load_train_state(o.resume, &state);
    if (model->config().hash() != rc.model.hash()) {
      throw VersionError("resume checkpoint config does not match the resolved config");
    }
  } else {
    model = std::make_unique<Mesorch>(rc.model);
  }
  write_run_config(o.out, "train", resolved_to_json(rc));

  TrainRunResult run = train_loop(*model, train_data, rc.train, o.out, state, true);
  std::cout << "training done: first-epoch loss " << run.first_epoch_loss
            << ", last-epoch loss " << run.last_epoch_loss << "\n";

  if (manifest.splits.count("val") && !manifest.splits.at("val").empty()) {
    std::vector<LabeledImage> val = load_split(manifest, "val");
    MetricsReport rep = evaluate_model(*model, val);
    write_metrics_csv(rep, (fs::path(o.out) / "val_metrics.csv").string());
    write_metrics_json(rep, (fs::path(o.out) / "val_metrics.json").string());
    std::cout << "val F1 " << rep.mean_f1 << ", permute-F1 " << rep.mean_permute_f1
              << ", IoU " << rep.mean_iou << "\n";
  }
  return 0;
}

int cmd_prune(const PruneOpts& o) {
  ResolvedConfig rc = resolve_config("toy", o.config);
  CheckpointMeta meta;
  std::unique_ptr<Mesorch> model = load_model(o.checkpoint, &meta);
  if (o.epsilon) rc.prune.epsilon = *o.epsilon;
  else rc.prune.epsilon = 0.5 / model->config().k_active();

  DatasetManifest manifest = read_dataset(o.calibration);
  std::vector<LabeledImage> calibration = load_split(manifest, "calibration");

  ordered_json resolved = resolved_to_json(rc);
  resolved["model"] = config_to_json(model->config());
  resolved["finetune_epochs"] = o.finetune_epochs;
  write_run_config(o.out, "prune", resolved);

  auto [pruned, report] = prune(*model, rc.prune, calibration);
  write_prune_report(report, (fs::path(o.out) / "prune_report.json").string());
  std::cout << "pruned branches:";
  for (int id : report.pruned_branches) std::cout << " " << branch_name(id);
  if (report.pruned_branches.empty()) std::cout << " (none)";
  std::cout << "\nK = " << pruned->config().k_active() << ", param delta "
            << report.param_delta() << ", flop delta " << report.flop_delta() << "\n";

  if (!report.pruned_branches.empty() && o.finetune_epochs > 0) {
    TrainConfig ft = rc.train;
    ft.epochs = o.finetune_epochs;
    ft.warmup_epochs = std::min(1, o.finetune_epochs - 1);
    ft.lr_max = rc.train.lr_max * 0.5;
    ft.lr_min = std::min(rc.train.lr_min, ft.lr_max / 100.0);
    std::vector<LabeledImage> train_data = load_split(manifest, "train");
    TrainState state;
    renormalize_and_finetune(*pruned, train_data, ft, o.out, state);
  } else {
    save_model(*pruned, (fs::path(o.out) / "final").string(), meta);
  }
  std::cout << "pruned model at " << (fs::path(o.out) / "final").string() << "\n";
  return 0;
}

int cmd_evaluate(const EvalOpts& o) {
  CheckpointMeta meta;
  std::unique_ptr<Mesorch> model = load_model(o.checkpoint, &meta);
  DatasetManifest manifest = read_dataset(o.data);
  std::vector<LabeledImage> data = load_split(manifest, o.split);

  ordered_json resolved;
  resolved["model"] = config_to_json(model->config());
  resolved["data"] = o.data;
  resolved["split"] = o.split;
  resolved["threshold"] = o.threshold;
  write_run_config(o.out, "evaluate", resolved);

  MetricsReport rep = evaluate_model(*model, data, o.threshold);
  write_metrics_csv(rep, (fs::path(o.out) / "metrics.csv").string());
  write_metrics_json(rep, (fs::path(o.out) / "metrics.json").string());
  std::cout << "split " << o.split << ": F1 " << rep.mean_f1 << ", permute-F1 "
            << rep.mean_permute_f1 << ", IoU " << rep.mean_iou << ", AUC " << rep.mean_auc
            << " (" << rep.auc_excluded << " excluded)\n";
  return 0;
}

int cmd_robustness(const RobustOpts& o) {
  CheckpointMeta meta;
  std::unique_ptr<Mesorch> model = load_model(o.checkpoint, &meta);
  DatasetManifest manifest = read_dataset(o.data);
  std::vector<LabeledImage> data = load_split(manifest, o.split);

  ordered_json resolved;
  resolved["model"] = config_to_json(model->config());
  resolved["data"] = o.data;
  resolved["split"] = o.split;
  resolved["seed"] = o.seed;
  write_run_config(o.out, "robustness", resolved);

  std::ofstream longf(fs::path(o.out) / "sweep_long.csv");
  if (!longf) throw IoError("cannot write sweep_long.csv");
  longf << "model,dataset,split,perturbation,level,f1,permute_f1,iou,auc,auc_excluded\n";
  const std::string model_name = o.checkpoint;

  auto eval_cell = [&](const PerturbSpec& spec) {
    std::vector<LabeledImage> perturbed = data;
    for (size_t i = 0; i < perturbed.size(); ++i) {
      const std::uint64_t cell_seed = derive_seed(
          o.seed, spec.kind_name() + "/" + std::to_string(spec.level) + "/" +
                      std::to_string(i));
      perturbed[i].image = perturb(data[i].image, spec, cell_seed);
    }
    MetricsReport rep = evaluate_model(*model, perturbed);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%d,%.6f,%.6f,%.6f,%.6f,%d\n",
                  model_name.c_str(), o.data.c_str(), o.split.c_str(),
                  spec.kind_name().c_str(), spec.level, rep.mean_f1,
                  rep.mean_permute_f1, rep.mean_iou, rep.mean_auc, rep.auc_excluded);
    longf << buf;
    return rep.mean_f1;
  };

  const double baseline = eval_cell({PerturbSpec::Kind::kNone, 0});
  std::ofstream wide(fs::path(o.out) / "sweep.csv");
  if (!wide) throw IoError("cannot write sweep.csv");
  wide << "perturbation,levels,none,f1_1,f1_2,f1_3,f1_4,f1_5,f1_6,"
          "avg_f1_perturbed,avg_f1_with_none\n";
  for (auto kind : {PerturbSpec::Kind::kGaussNoise, PerturbSpec::Kind::kGaussBlur,
                    PerturbSpec::Kind::kJpeg}) {
    const auto& levels = PerturbSpec::levels(kind);
    std::string level_str;
    std::vector<double> f1s;
    for (int level : levels) {
      if (!level_str.empty()) level_str += "|";
      level_str += std::to_string(level);
      f1s.push_back(eval_cell({kind, level}));
    }
    double avg = 0.0;
    for (double v : f1s) avg += v;
    const double avg_with_none = (avg + baseline) / (static_cast<double>(f1s.size()) + 1);
    avg /= static_cast<double>(f1s.size());
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  PerturbSpec{kind, levels[0]}.kind_name().c_str(), level_str.c_str(),
                  baseline, f1s[0], f1s[1], f1s[2], f1s[3], f1s[4], f1s[5], avg,
                  avg_with_none);
    wide << buf;
    std::cout << PerturbSpec{kind, levels[0]}.kind_name() << " avg F1 " << avg << "\n";
  }
  std::cout << "baseline F1 " << baseline << "; sweep written to " << o.out << "\n";
  return 0;
}

int cmd_flops(const FlopsOpts& o) {
  std::unique_ptr<Mesorch> model;
  if (!o.checkpoint.empty()) {
    model = load_model(o.checkpoint);
  } else {
    check_config(!o.preset.empty(), "either --checkpoint or --preset is required");
    model = std::make_unique<Mesorch>(MesorchConfig::preset_config(o.preset));
  }
  const int h = o.size.value_or(model->config().input_h);
  const int w = o.size.value_or(model->config().input_w);
  CostReport rep = count_cost(*model, h, w);
  ordered_json j = cost_to_json(rep);
  if (!o.out.empty()) {
    ordered_json resolved;
    resolved["model"] = config_to_json(model->config());
    resolved["size"] = h;
    write_run_config(o.out, "flops", resolved);
    std::ofstream f(fs::path(o.out) / "cost_report.json");
    if (!f) throw IoError("cannot write cost_report.json");
    f << j.dump(2) << "\n";
  }
  std::cout << "input " << h << "x" << w << ": params " << rep.params << ", flops "
            << rep.flops << "\n";
  return 0;
}

int cmd_predict(const PredictOpts& o) {
  CheckpointMeta meta;
  std::unique_ptr<Mesorch> model = load_model(o.checkpoint, &meta);
  Image input = read_png_rgb(o.image);

  ordered_json resolved;
  resolved["model"] = config_to_json(model->config());
  resolved["image"] = o.image;
  write_run_config(o.out, "predict", resolved);

  const int h = input.height, w = input.width;
  Image model_in = input;
  if (h != model->config().input_h || w != model->config().input_w) {
    Tensor t = bilinear_resize(input.to_tensor(), model->config().input_h,
                               model->config().input_w);
    for (auto& v : t.data) v = std::clamp(v, 0.0, 1.0);
    model_in = Image::from_tensor(t);
  }
  ForwardResult res = model->forward(model_in);
  Tensor prob = res.prob;
  if (prob.shape[0] != h || prob.shape[1] != w) prob = bilinear_resize(prob, h, w);

  write_png_gray((fs::path(o.out) / "probability.png").string(), prob);
  Tensor mask({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) mask.at2(y, x) = prob.at(y, x, 0) >= 0.5 ? 1.0 : 0.0;
  write_png_mask((fs::path(o.out) / "mask.png").string(), mask);
  std::cout << "wrote " << (fs::path(o.out) / "probability.png").string() << " and mask.png\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mesoscopic image-manipulation localization toolkit"};
  app.require_subcommand(1);

  GenDataOpts gd;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic tamper dataset");
  gen->add_option("--out", gd.out, "output dataset root")->required();
  gen->add_option("--seed", gd.seed, "base seed");
  gen->add_option("--count", gd.count, "total sample count (>= 4)");
  gen->add_option("--size", gd.size, "square sample size in pixels");
  gen->add_option("--split-fractions", gd.fractions,
                  "train,val,test,calibration fractions");

  TrainOpts tr;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", tr.data, "dataset root")->required();
  train->add_option("--preset", tr.preset, "model preset (toy|paper)");
  train->add_option("--out", tr.out, "output directory")->required();
  train->add_option("--resume", tr.resume, "train-state directory to resume from");
  train->add_option("--config", tr.config, "JSON config file");
  int tr_epochs = -1, tr_batch = -1;
  long long tr_seed = -1;
  train->add_option("--epochs", tr_epochs, "override epochs");
  train->add_option("--batch-size", tr_batch, "override batch size");
  train->add_option("--seed", tr_seed, "override seed");

  PruneOpts pr;
  auto* prune_cmd = app.add_subcommand("prune", "prune low-weight scale branches");
  prune_cmd->add_option("--checkpoint", pr.checkpoint, "model checkpoint directory")
      ->required();
  prune_cmd->add_option("--calibration", pr.calibration,
                        "dataset root (its calibration split is used)")->required();
  double pr_eps = -1.0;
  prune_cmd->add_option("--epsilon", pr_eps, "prune threshold (default 0.5/K)");
  prune_cmd->add_option("--finetune-epochs", pr.finetune_epochs, "fine-tune epochs");
  prune_cmd->add_option("--out", pr.out, "output directory")->required();
  prune_cmd->add_option("--config", pr.config, "JSON config file");

  EvalOpts ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "compute localization metrics");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "dataset root")->required();
  eval_cmd->add_option("--split", ev.split, "dataset split");
  eval_cmd->add_option("--threshold", ev.threshold, "binarization threshold");
  eval_cmd->add_option("--out", ev.out, "output directory")->required();

  RobustOpts rb;
  auto* robust = app.add_subcommand("robustness", "run the perturbation sweep");
  robust->add_option("--checkpoint", rb.checkpoint, "model checkpoint")->required();
  robust->add_option("--data", rb.data, "dataset root")->required();
  robust->add_option("--split", rb.split, "dataset split");
  robust->add_option("--seed", rb.seed, "perturbation seed");
  robust->add_option("--out", rb.out, "output directory")->required();

  FlopsOpts fl;
  auto* flops = app.add_subcommand("flops", "parameter and FLOP accounting");
  flops->add_option("--checkpoint", fl.checkpoint, "model checkpoint");
  flops->add_option("--preset", fl.preset, "model preset (toy|paper)");
  int fl_size = -1;
  flops->add_option("--size", fl_size, "input size (default: config input)");
  flops->add_option("--out", fl.out, "optional output directory");

  PredictOpts pd;
  auto* predict = app.add_subcommand("predict", "predict a manipulation mask");
  predict->add_option("--checkpoint", pd.checkpoint, "model checkpoint")->required();
  predict->add_option("--image", pd.image, "input PNG image")->required();
  predict->add_option("--out", pd.out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (gd.count < 4) {
        std::cerr << "usage error: --count must be at least 4 (one per split)\n";
        return 2;
      }
      return cmd_gen_data(gd);
    }
    if (train->parsed()) {
      if (tr_epochs > 0) tr.epochs = tr_epochs;
      if (tr_batch > 0) tr.batch_size = tr_batch;
      if (tr_seed >= 0) tr.seed = static_cast<std::uint64_t>(tr_seed);
      return cmd_train(tr);
    }
    if (prune_cmd->parsed()) {
      if (pr_eps >= 0.0) pr.epsilon = pr_eps;
      return cmd_prune(pr);
    }
    if (eval_cmd->parsed()) return cmd_evaluate(ev);
    if (robust->parsed()) return cmd_robustness(rb);
    if (flops->parsed()) {
      if (fl_size > 0) fl.size = fl_size;
      return cmd_flops(fl);
    }
    if (predict->parsed()) return cmd_predict(pd);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
