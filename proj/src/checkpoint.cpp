#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "mesorch/serialize.hpp"

namespace fs = std::filesystem;

namespace mesorch {

ordered_json config_to_json(const MesorchConfig& cfg) {
  ordered_json j;
  j["preset"] = cfg.preset;
  j["input_h"] = cfg.input_h;
  j["input_w"] = cfg.input_w;
  j["local_channels"] = cfg.local_channels;
  j["global_channels"] = cfg.global_channels;
  j["local_depths"] = cfg.local_depths;
  j["global_depths"] = cfg.global_depths;
  j["heads"] = cfg.heads;
  j["sr_ratios"] = cfg.sr_ratios;
  j["mlp_ratio"] = cfg.mlp_ratio;
  j["decoder_dim"] = cfg.decoder_dim;
  j["weight_hidden"] = cfg.weight_hidden;
  j["fusion_mode"] = cfg.fusion_mode;
  j["freq_cutoff"] = cfg.freq_cutoff;
  j["active_branches"] = cfg.active_branches;
  j["post_prune_weighting"] = cfg.post_prune_weighting;
  j["frozen_weights"] = cfg.frozen_weights;
  j["seed"] = cfg.seed;
  j["deterministic"] = cfg.deterministic;
  return j;
}

template <typename T, size_t N>
static void read_array(const nlohmann::json& j, const char* key, std::array<T, N>* out) {
  auto v = j.at(key).get<std::vector<T>>();
  check_config(v.size() == N,
               std::string(key) + " must have " + std::to_string(N) + " entries");
  std::copy(v.begin(), v.end(), out->begin());
}

MesorchConfig config_from_json(const nlohmann::json& j, const MesorchConfig& base) {
  static const std::set<std::string> known = {
      "preset",       "input_h",     "input_w",         "local_channels",
      "global_channels", "local_depths", "global_depths", "heads",
      "sr_ratios",    "mlp_ratio",   "decoder_dim",     "weight_hidden",
      "fusion_mode",  "freq_cutoff", "active_branches", "post_prune_weighting",
      "frozen_weights", "seed",      "deterministic"};
  check_config(j.is_object(), "model config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    check_config(known.count(it.key()) > 0, "unknown model config key '" + it.key() + "'");
  }

  MesorchConfig cfg = base;
  if (j.contains("preset")) {
    const std::string p = j.at("preset").get<std::string>();
    if (p != base.preset) {
      if (p == "custom") {
        cfg.preset = "custom";
      } else {
        cfg = MesorchConfig::preset_config(p);
      }
    }
  }
  if (j.contains("input_h")) cfg.input_h = j.at("input_h").get<int>();
  if (j.contains("input_w")) cfg.input_w = j.at("input_w").get<int>();
  if (j.contains("local_channels")) read_array(j, "local_channels", &cfg.local_channels);
  if (j.contains("global_channels")) read_array(j, "global_channels", &cfg.global_channels);
  if (j.contains("local_depths")) read_array(j, "local_depths", &cfg.local_depths);
  if (j.contains("global_depths")) read_array(j, "global_depths", &cfg.global_depths);
  if (j.contains("heads")) read_array(j, "heads", &cfg.heads);
  if (j.contains("sr_ratios")) read_array(j, "sr_ratios", &cfg.sr_ratios);
  if (j.contains("mlp_ratio")) cfg.mlp_ratio = j.at("mlp_ratio").get<int>();
  if (j.contains("decoder_dim")) cfg.decoder_dim = j.at("decoder_dim").get<int>();
  if (j.contains("weight_hidden")) cfg.weight_hidden = j.at("weight_hidden").get<int>();
  if (j.contains("fusion_mode")) cfg.fusion_mode = j.at("fusion_mode").get<std::string>();
  if (j.contains("freq_cutoff")) cfg.freq_cutoff = j.at("freq_cutoff").get<double>();
  if (j.contains("active_branches"))
    cfg.active_branches = j.at("active_branches").get<std::vector<int>>();
  if (j.contains("post_prune_weighting"))
    cfg.post_prune_weighting = j.at("post_prune_weighting").get<std::string>();
  if (j.contains("frozen_weights"))
    cfg.frozen_weights = j.at("frozen_weights").get<std::vector<double>>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("deterministic")) cfg.deterministic = j.at("deterministic").get<bool>();
  return cfg;
}

ordered_json train_config_to_json(const TrainConfig& cfg) {
  ordered_json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["accumulation_steps"] = cfg.accumulation_steps;
  j["lr_max"] = cfg.lr_max;
  j["lr_min"] = cfg.lr_min;
  j["warmup_epochs"] = cfg.warmup_epochs;
  j["weight_decay"] = cfg.weight_decay;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["eps"] = cfg.eps;
  j["seed"] = cfg.seed;
  j["deterministic"] = cfg.deterministic;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base) {
  static const std::set<std::string> known = {
      "epochs", "batch_size", "accumulation_steps", "lr_max",
      "lr_min", "warmup_epochs", "weight_decay", "beta1",
      "beta2",  "eps",          "seed",          "deterministic"};
  check_config(j.is_object(), "train config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    check_config(known.count(it.key()) > 0, "unknown train config key '" + it.key() + "'");
  }
  TrainConfig cfg = base;
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
  if (j.contains("accumulation_steps"))
    cfg.accumulation_steps = j.at("accumulation_steps").get<int>();
  if (j.contains("lr_max")) cfg.lr_max = j.at("lr_max").get<double>();
  if (j.contains("lr_min")) cfg.lr_min = j.at("lr_min").get<double>();
  if (j.contains("warmup_epochs")) cfg.warmup_epochs = j.at("warmup_epochs").get<int>();
  if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("beta1")) cfg.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) cfg.beta2 = j.at("beta2").get<double>();
  if (j.contains("eps")) cfg.eps = j.at("eps").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("deterministic")) cfg.deterministic = j.at("deterministic").get<bool>();
  return cfg;
}

ordered_json prune_config_to_json(const PruneConfig& cfg) {
  ordered_json j;
  j["epsilon"] = cfg.epsilon;
  j["min_surviving_branches"] = cfg.min_surviving_branches;
  return j;
}

PruneConfig prune_config_from_json(const nlohmann::json& j, const PruneConfig& base) {
  static const std::set<std::string> known = {"epsilon", "min_surviving_branches"};
  check_config(j.is_object(), "prune config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    check_config(known.count(it.key()) > 0, "unknown prune config key '" + it.key() + "'");
  }
  PruneConfig cfg = base;
  if (j.contains("epsilon")) cfg.epsilon = j.at("epsilon").get<double>();
  if (j.contains("min_surviving_branches"))
    cfg.min_surviving_branches = j.at("min_surviving_branches").get<int>();
  return cfg;
}

// ---------------------------------------------------------------------------
// Blob I/O: float32 little-endian, row-major
// ---------------------------------------------------------------------------

static std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_f32_blob(const std::string& path, const std::vector<double>& values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  std::vector<float> buf(values.size());
  for (size_t i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw IoError("write failed: " + path);
}

void read_f32_blob(const std::string& path, std::vector<double>* values,
                   std::int64_t expected_count) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open for reading: " + path);
  const std::streamsize bytes = f.tellg();
  if (bytes != expected_count * static_cast<std::streamsize>(sizeof(float))) {
    throw VersionError("blob " + path + " has " + std::to_string(bytes) +
                       " bytes, expected " + std::to_string(expected_count * 4));
  }
  f.seekg(0);
  std::vector<float> buf(static_cast<size_t>(expected_count));
  f.read(reinterpret_cast<char*>(buf.data()), bytes);
  if (!f) throw IoError("read failed: " + path);
  values->resize(buf.size());
  for (size_t i = 0; i < buf.size(); ++i) (*values)[i] = static_cast<double>(buf[i]);
}

void save_model(const Mesorch& model, const std::string& dir, const CheckpointMeta& meta) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "params", ec);
  if (ec) throw IoError("cannot create checkpoint directory: " + dir);

  ordered_json manifest;
  manifest["format_version"] = 1;
  manifest["tool_version"] = kToolVersion;
  manifest["config"] = config_to_json(model.config());
  manifest["config_hash"] = hex64(model.config().hash());
  manifest["active_branches"] = model.config().active_branches;
  manifest["k_active"] = model.config().k_active();
  manifest["seed"] = model.config().seed;
  manifest["step"] = meta.step;
  manifest["epoch"] = meta.epoch;
  ordered_json params = ordered_json::array();
  for (const auto& p : model.params().all()) {
    const std::string file = "params/" + p->name + ".bin";
    write_f32_blob((fs::path(dir) / file).string(), p->value);
    ordered_json e;
    e["name"] = p->name;
    e["shape"] = p->shape;
    e["file"] = file;
    params.push_back(e);
  }
  manifest["params"] = params;

  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("cannot write manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

std::unique_ptr<Mesorch> load_model(const std::string& dir, CheckpointMeta* meta) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream f(mpath);
  if (!f) throw IoError("cannot open manifest: " + mpath.string());
  nlohmann::json manifest;
  try {
    f >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw VersionError("manifest parse failure in " + dir + ": " + e.what());
  }
  if (manifest.value("format_version", -1) != 1) {
    throw VersionError("unsupported checkpoint format_version in " + dir);
  }
  MesorchConfig cfg = config_from_json(manifest.at("config"), MesorchConfig{});
  const std::string stored_hash = manifest.value("config_hash", "");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(cfg.hash()));
  if (stored_hash != buf) {
    throw VersionError("config hash mismatch in " + dir + ": manifest says " +
                       stored_hash + ", recomputed " + buf);
  }

  auto model = std::make_unique<Mesorch>(cfg);
  std::set<std::string> loaded;
  for (const auto& e : manifest.at("params")) {
    const std::string name = e.at("name").get<std::string>();
    Parameter* p = model->params().find(name);
    if (!p) throw VersionError("manifest parameter '" + name + "' not present in model");
    const auto shape = e.at("shape").get<std::vector<int>>();
    if (shape != p->shape) {
      throw VersionError("parameter '" + name + "' shape mismatch: manifest " +
                         shape_to_string(shape) + " vs model " + shape_to_string(p->shape));
    }
    read_f32_blob((fs::path(dir) / e.at("file").get<std::string>()).string(), &p->value,
                  p->numel());
    loaded.insert(name);
  }
  for (const auto& p : model->params().all()) {
    if (!loaded.count(p->name)) {
      throw VersionError("model parameter '" + p->name + "' missing from manifest");
    }
  }
  if (meta) {
    meta->step = manifest.value("step", 0);
    meta->epoch = manifest.value("epoch", 0);
  }
  return model;
}

}  // namespace mesorch
