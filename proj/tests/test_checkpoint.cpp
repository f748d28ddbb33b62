#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mesorch/rng.hpp"
#include "mesorch/serialize.hpp"

using namespace mesorch;
namespace fs = std::filesystem;

namespace {

MesorchConfig small_config() {
  MesorchConfig cfg;
  cfg.preset = "custom";
  cfg.input_h = cfg.input_w = 32;
  cfg.local_channels = {4, 6, 8, 10};
  cfg.global_channels = {4, 6, 8, 10};
  cfg.local_depths = {1, 1, 1, 1};
  cfg.global_depths = {1, 1, 1, 1};
  cfg.heads = {1, 1, 1, 1};
  cfg.sr_ratios = {1, 1, 1, 1};
  cfg.mlp_ratio = 1;
  cfg.decoder_dim = 4;
  cfg.weight_hidden = 4;
  cfg.seed = 77;
  return cfg;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("mesorch_ckpt_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("save and load are bit-identical") {
    const fs::path dir = temp_dir("roundtrip");
    Mesorch model(small_config());
    Rng rng(5);
    for (const auto& p : model.params().all())
      for (auto& v : p->value) v = snap_f32(rng.normal(0.0, 0.3));

    save_model(model, (dir / "m").string(), {12, 3});
    CheckpointMeta meta;
    auto loaded = load_model((dir / "m").string(), &meta);
    CHECK(meta.step == 12);
    CHECK(meta.epoch == 3);
    CHECK(loaded->config().hash() == model.config().hash());
    for (const auto& p : model.params().all()) {
      const Parameter* q = loaded->params().find(p->name);
      REQUIRE(q != nullptr);
      CHECK(q->value == p->value);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("corrupt blob raises a version error") {
    const fs::path dir = temp_dir("corrupt");
    Mesorch model(small_config());
    save_model(model, (dir / "m").string(), {});
    // truncate one blob
    const fs::path blob = dir / "m" / "params" / "local.stem.w.bin";
    REQUIRE(fs::exists(blob));
    fs::resize_file(blob, 8);
    CHECK_THROWS_AS(load_model((dir / "m").string()), VersionError);
    fs::remove_all(dir);
  }

  TEST_CASE("manifest/config mismatches raise version errors") {
    const fs::path dir = temp_dir("mismatch");
    Mesorch model(small_config());
    save_model(model, (dir / "m").string(), {});

    // tamper with the stored config: hash check must fire
    std::ifstream in(dir / "m" / "manifest.json");
    nlohmann::json manifest;
    in >> manifest;
    in.close();
    manifest["config"]["decoder_dim"] = 8;
    std::ofstream out(dir / "m" / "manifest.json");
    out << manifest.dump(2);
    out.close();
    CHECK_THROWS_AS(load_model((dir / "m").string()), VersionError);
    fs::remove_all(dir);
  }

  TEST_CASE("missing parameter entry raises a version error") {
    const fs::path dir = temp_dir("missing");
    Mesorch model(small_config());
    save_model(model, (dir / "m").string(), {});
    std::ifstream in(dir / "m" / "manifest.json");
    nlohmann::json manifest;
    in >> manifest;
    in.close();
    auto& params = manifest["params"];
    params.erase(params.begin());
    std::ofstream out(dir / "m" / "manifest.json");
    out << manifest.dump(2);
    out.close();
    CHECK_THROWS_AS(load_model((dir / "m").string()), VersionError);
    fs::remove_all(dir);
  }

  TEST_CASE("config json round trip and unknown-key rejection") {
    MesorchConfig cfg = small_config();
    cfg.active_branches = {0, 2, 5};
    auto j = config_to_json(cfg);
    MesorchConfig back = config_from_json(j, MesorchConfig{});
    CHECK(back.hash() == cfg.hash());

    nlohmann::json bad = j;
    bad["mystery_knob"] = 3;
    CHECK_THROWS_AS(config_from_json(bad, MesorchConfig{}), ConfigError);

    nlohmann::json t = train_config_to_json(TrainConfig{});
    TrainConfig tc = train_config_from_json(t, TrainConfig{});
    CHECK(tc.epochs == TrainConfig{}.epochs);
    t["bogus"] = 1;
    CHECK_THROWS_AS(train_config_from_json(t, TrainConfig{}), ConfigError);
  }

  TEST_CASE("blob format is float32 little-endian") {
    const fs::path dir = temp_dir("blob");
    std::vector<double> vals = {1.0, -2.5, 0.125};
    write_f32_blob((dir / "x.bin").string(), vals);
    std::ifstream f(dir / "x.bin", std::ios::binary);
    float buf[3];
    f.read(reinterpret_cast<char*>(buf), sizeof(buf));
    CHECK(buf[0] == 1.0f);
    CHECK(buf[1] == -2.5f);
    CHECK(buf[2] == 0.125f);
    CHECK(fs::file_size(dir / "x.bin") == 12);

    std::vector<double> back;
    read_f32_blob((dir / "x.bin").string(), &back, 3);
    CHECK(back == vals);
    CHECK_THROWS_AS(read_f32_blob((dir / "x.bin").string(), &back, 4), VersionError);
    fs::remove_all(dir);
  }
}
