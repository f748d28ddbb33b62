#ifndef MESORCH_SYNTHDATA_HPP_
#define MESORCH_SYNTHDATA_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mesorch/data.hpp"
#include "mesorch/dct.hpp"
#include "mesorch/rng.hpp"
#include "mesorch/tensor.hpp"

namespace mesorch {

enum class TamperType { kSplice, kCopyMove, kInpaint };
const char* tamper_type_name(TamperType t);
TamperType tamper_type_from_name(const std::string& name);

struct TamperSample {
  Image image;
  Tensor mask;  // [H, W], 1 = manipulated
  TamperType tamper_type = TamperType::kSplice;
  std::uint64_t seed = 0;
};

// Mask must cover between 1% and 60% of the pixels and the image stays in [0,1].
void validate_tamper_sample(const TamperSample& s);

struct PerturbSpec {
  enum class Kind { kNone, kGaussNoise, kGaussBlur, kJpeg };
  Kind kind = Kind::kNone;
  int level = 0;  // noise std / blur kernel (0-255 scale, px) | jpeg quality

  void validate() const;
  std::string kind_name() const;
  static const std::vector<int>& levels(Kind kind);
};

// Procedurally textured scene: gradient background, sensor-like noise field,
// 2-5 colored shapes. Pure function of (seed, h, w).
struct SceneObject {
  double cx = 0, cy = 0;  // center, pixels
  double rx = 0, ry = 0;  // half extents, pixels
};

struct Scene {
  Image image;
  std::vector<SceneObject> objects;
};

Scene gen_scene(std::uint64_t seed, int h, int w);
Image gen_base_image(std::uint64_t seed, int h, int w);

// Tamper generators. When objects is non-null, ~80% of regions anchor to a
// scene object; otherwise regions are free-form.
TamperSample gen_splice(std::uint64_t seed, const Image& donor, const Image& host,
                        const std::vector<SceneObject>* objects = nullptr);
TamperSample gen_copy_move(std::uint64_t seed, const Image& image,
                           const std::vector<SceneObject>* objects = nullptr);
TamperSample gen_inpaint(std::uint64_t seed, const Image& image,
                         const std::vector<SceneObject>* objects = nullptr);

// Noise/blur/JPEG robustness perturbations; masks are never touched.
Image perturb(const Image& image, const PerturbSpec& spec, std::uint64_t seed);

struct SampleRecord {
  std::string image_file;  // root-relative
  std::string mask_file;
  std::string tamper_type;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::string root;
  std::map<std::string, std::vector<SampleRecord>> splits;

  std::int64_t total_records() const;
};

inline const std::array<const char*, 4> kSplitNames = {"train", "val", "test",
                                                       "calibration"};

// Deterministic dataset generation: count samples of size x size split by the
// given fractions over {train, val, test, calibration}.
std::map<std::string, std::vector<TamperSample>> generate_split_samples(
    int count, int size, std::uint64_t seed, const std::array<double, 4>& fractions);

// PNG + JSON dataset layout: root/{split}/images, root/{split}/masks,
// root/manifest.json.
DatasetManifest write_dataset(
    const std::string& root,
    const std::map<std::string, std::vector<TamperSample>>& by_split);
DatasetManifest read_dataset(const std::string& root);

std::vector<LabeledImage> load_split(const DatasetManifest& manifest,
                                     const std::string& split);

// Largest-remainder split of count by fractions (fractions must sum to 1).
std::array<int, 4> split_counts(int count, const std::array<double, 4>& fractions);

}  // namespace mesorch

#endif  // MESORCH_SYNTHDATA_HPP_
