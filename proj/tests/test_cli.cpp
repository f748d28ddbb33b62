#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mesorch/imageio.hpp"

namespace fs = std::filesystem;

namespace {

const char* kBin = MESORCH_BIN;

int run(const std::string& args) {
  const std::string cmd = std::string(kBin) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("mesorch_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
}

bool trees_identical(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> ra, rb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) ra.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) rb.push_back(fs::relative(e.path(), b));
  std::sort(ra.begin(), ra.end());
  std::sort(rb.begin(), rb.end());
  if (ra != rb) return false;
  for (const auto& rel : ra) {
    if (slurp(a / rel) != slurp(b / rel)) return false;
  }
  return true;
}

// small custom model so the end-to-end run stays quick
void write_tiny_config(const fs::path& path) {
  nlohmann::json j;
  j["model"] = {{"preset", "custom"},
                {"input_h", 64},
                {"input_w", 64},
                {"local_channels", {6, 8, 10, 12}},
                {"global_channels", {6, 8, 10, 12}},
                {"local_depths", {1, 1, 1, 1}},
                {"global_depths", {1, 1, 1, 1}},
                {"heads", {1, 1, 1, 1}},
                {"sr_ratios", {2, 1, 1, 1}},
                {"mlp_ratio", 1},
                {"decoder_dim", 8},
                {"weight_hidden", 8}};
  j["train"] = {{"epochs", 2}, {"batch_size", 4}, {"accumulation_steps", 1},
                {"warmup_epochs", 1}, {"lr_max", 1e-3}};
  std::ofstream f(path);
  f << j.dump(2);
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen-data determinism and usage validation") {
    const fs::path root = temp_dir("gen");
    const std::string a = (root / "a").string(), b = (root / "b").string();
    REQUIRE(run("gen-data --out " + a + " --seed 7 --count 12 --size 32") == 0);
    REQUIRE(run("gen-data --out " + b + " --seed 7 --count 12 --size 32") == 0);
    CHECK(trees_identical(a, b));

    // different seed, different bytes
    const std::string c = (root / "c").string();
    REQUIRE(run("gen-data --out " + c + " --seed 8 --count 12 --size 32") == 0);
    CHECK_FALSE(trees_identical(a, c));

    CHECK(run("gen-data --out " + (root / "d").string() + " --count 2") == 2);
    CHECK(run("gen-data --out " + (root / "e").string() +
              " --count 8 --split-fractions 0.5,0.5,0.5,0.5") != 0);
    fs::remove_all(root);
  }

  TEST_CASE("end-to-end: train, evaluate, flops, predict, prune, robustness") {
    const fs::path root = temp_dir("e2e");
    const std::string data = (root / "data").string();
    const std::string cfg = (root / "cfg.json").string();
    write_tiny_config(root / "cfg.json");

    REQUIRE(run("gen-data --out " + data + " --seed 3 --count 16 --size 64") == 0);

    // missing --data path fails cleanly
    CHECK(run("train --data " + (root / "nope").string() + " --out " +
              (root / "t0").string() + " --config " + cfg) != 0);

    const std::string tdir = (root / "train").string();
    REQUIRE(run("train --data " + data + " --out " + tdir + " --config " + cfg) == 0);
    CHECK(fs::exists(fs::path(tdir) / "trace.csv"));
    CHECK(fs::exists(fs::path(tdir) / "run_config.json"));
    CHECK(fs::exists(fs::path(tdir) / "final" / "manifest.json"));
    CHECK(fs::exists(fs::path(tdir) / "checkpoints" / "epoch_0001" / "manifest.json"));
    CHECK(fs::exists(fs::path(tdir) / "val_metrics.csv"));

    // resume continues the trace without a step discontinuity
    {
      nlohmann::json j;
      std::ifstream f(root / "cfg.json");
      f >> j;
      j["train"]["epochs"] = 3;
      std::ofstream o(root / "cfg3.json");
      o << j.dump(2);
    }
    const std::string rdir = (root / "resumed").string();
    REQUIRE(run("train --data " + data + " --out " + rdir + " --config " +
                (root / "cfg3.json").string() + " --resume " + tdir + "/final") == 0);
    {
      std::ifstream f(fs::path(rdir) / "trace.csv");
      std::string line;
      std::getline(f, line);  // header
      std::int64_t prev = 0;
      bool contiguous = true;
      while (std::getline(f, line)) {
        const std::int64_t step = std::stoll(line.substr(0, line.find(',')));
        if (step != prev + 1) contiguous = false;
        prev = step;
      }
      CHECK(contiguous);
      CHECK(prev > 0);
    }

    const std::string ckpt = tdir + "/final";
    const std::string edir = (root / "eval").string();
    REQUIRE(run("evaluate --checkpoint " + ckpt + " --data " + data +
                " --split test --out " + edir) == 0);
    CHECK(fs::exists(fs::path(edir) / "metrics.csv"));
    {
      std::ifstream f(fs::path(edir) / "metrics.csv");
      std::string line;
      int rows = 0;
      std::string last;
      std::getline(f, line);
      CHECK(line == "image,f1,permute_f1,iou,auc");
      while (std::getline(f, line)) {
        ++rows;
        last = line;
      }
      CHECK(rows == 3);  // 2 test images + mean row for count 16 at 1/8 test
      CHECK(last.substr(0, 5) == "mean,");
    }

    REQUIRE(run("flops --checkpoint " + ckpt + " --out " + (root / "flops").string()) == 0);
    CHECK(fs::exists(root / "flops" / "cost_report.json"));
    REQUIRE(run("flops --preset toy --size 64") == 0);

    // predict on one of the dataset images
    const std::string pdir = (root / "pred").string();
    const std::string img = data + "/test/images/0000.png";
    REQUIRE(run("predict --checkpoint " + ckpt + " --image " + img + " --out " + pdir) == 0);
    {
      mesorch::Image prob = mesorch::read_png_rgb((fs::path(pdir) / "probability.png").string());
      CHECK(prob.height == 64);
      CHECK(prob.width == 64);
      mesorch::Tensor mask = mesorch::read_png_mask((fs::path(pdir) / "mask.png").string());
      CHECK(mask.shape == std::vector<int>{64, 64});
    }
    // deterministic: running twice produces identical files
    const std::string pdir2 = (root / "pred2").string();
    REQUIRE(run("predict --checkpoint " + ckpt + " --image " + img + " --out " + pdir2) == 0);
    CHECK(slurp(fs::path(pdir) / "probability.png") == slurp(fs::path(pdir2) / "probability.png"));
    CHECK(slurp(fs::path(pdir) / "mask.png") == slurp(fs::path(pdir2) / "mask.png"));

    // prune with epsilon 0: nothing pruned, structurally unchanged
    const std::string prdir = (root / "prune0").string();
    REQUIRE(run("prune --checkpoint " + ckpt + " --calibration " + data +
                " --epsilon 0 --finetune-epochs 1 --out " + prdir) == 0);
    {
      std::ifstream f(fs::path(prdir) / "prune_report.json");
      nlohmann::json j;
      f >> j;
      CHECK(j.at("pruned_branches").empty());
      CHECK(j.at("param_delta").get<std::int64_t>() == 0);
    }
    // epsilon 0.9 engages the guard
    const std::string prdir9 = (root / "prune9").string();
    REQUIRE(run("prune --checkpoint " + ckpt + " --calibration " + data +
                " --epsilon 0.9 --finetune-epochs 1 --out " + prdir9) == 0);
    {
      std::ifstream f(fs::path(prdir9) / "prune_report.json");
      nlohmann::json j;
      f >> j;
      CHECK(j.at("guard_engaged").get<bool>());
      CHECK(j.at("surviving_branches").size() == 1);
    }

    // robustness sweep: 19 cells, none column equals standalone evaluation
    const std::string rbdir = (root / "robust").string();
    REQUIRE(run("robustness --checkpoint " + ckpt + " --data " + data + " --out " + rbdir) == 0);
    {
      std::ifstream f(fs::path(rbdir) / "sweep_long.csv");
      std::string line;
      std::getline(f, line);
      int cells = 0;
      double none_f1 = -1.0;
      while (std::getline(f, line)) {
        ++cells;
        if (line.find(",none,") != std::string::npos) {
          // model,dataset,split,perturbation,level,f1,...
          size_t pos = 0;
          for (int i = 0; i < 5; ++i) pos = line.find(',', pos) + 1;
          none_f1 = std::stod(line.substr(pos, line.find(',', pos) - pos));
        }
      }
      CHECK(cells == 19);

      std::ifstream ef(fs::path(edir) / "metrics.csv");
      std::string eline, elast;
      while (std::getline(ef, eline)) elast = eline;
      size_t pos = elast.find(',') + 1;
      const double eval_f1 = std::stod(elast.substr(pos, elast.find(',', pos) - pos));
      CHECK(none_f1 == doctest::Approx(eval_f1).epsilon(1e-9));
    }

    // unknown config keys are errors
    {
      std::ofstream f(root / "bad.json");
      f << R"({"model": {"bogus_knob": 1}})";
    }
    CHECK(run("train --data " + data + " --out " + (root / "tbad").string() +
              " --config " + (root / "bad.json").string()) != 0);

    fs::remove_all(root);
  }
}
