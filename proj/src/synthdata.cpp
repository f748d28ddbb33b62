#include "mesorch/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "mesorch/imageio.hpp"

namespace fs = std::filesystem;

namespace mesorch {

const char* tamper_type_name(TamperType t) {
  switch (t) {
    case TamperType::kSplice: return "splice";
    case TamperType::kCopyMove: return "copy_move";
    case TamperType::kInpaint: return "inpaint";
  }
  return "unknown";
}

TamperType tamper_type_from_name(const std::string& name) {
  if (name == "splice") return TamperType::kSplice;
  if (name == "copy_move") return TamperType::kCopyMove;
  if (name == "inpaint") return TamperType::kInpaint;
  throw ConfigError("unknown tamper type '" + name + "'");
}

void validate_tamper_sample(const TamperSample& s) {
  validate_image(s.image);
  check_input(s.mask.shape.size() == 2 && s.mask.shape[0] == s.image.height &&
                  s.mask.shape[1] == s.image.width,
              "mask shape does not match image");
  std::int64_t on = 0;
  for (double v : s.mask.data) on += v >= 0.5 ? 1 : 0;
  const double frac = static_cast<double>(on) / static_cast<double>(s.mask.numel());
  check_input(frac >= 0.01 && frac <= 0.60,
              "mask area fraction " + std::to_string(frac) + " outside [0.01, 0.60]");
  for (double v : s.image.pixels) {
    check_input(v >= 0.0 && v <= 1.0, "tampered image value outside [0,1]");
  }
}

void PerturbSpec::validate() const {
  if (kind == Kind::kNone) return;
  const auto& grid = levels(kind);
  check_config(std::find(grid.begin(), grid.end(), level) != grid.end(),
               "perturbation level " + std::to_string(level) + " not in the " +
                   kind_name() + " grid");
}

std::string PerturbSpec::kind_name() const {
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kGaussNoise: return "gauss_noise";
    case Kind::kGaussBlur: return "gauss_blur";
    case Kind::kJpeg: return "jpeg";
  }
  return "unknown";
}

const std::vector<int>& PerturbSpec::levels(Kind kind) {
  static const std::vector<int> noise_blur = {3, 7, 11, 15, 19, 23};
  static const std::vector<int> quality = {100, 90, 80, 70, 60, 50};
  static const std::vector<int> none = {};
  switch (kind) {
    case Kind::kGaussNoise:
    case Kind::kGaussBlur: return noise_blur;
    case Kind::kJpeg: return quality;
    default: return none;
  }
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

namespace {

struct Shape {
  int kind = 0;  // 0 ellipse, 1 rectangle, 2 blob
  double cx = 0, cy = 0, rx = 0, ry = 0, rot = 0;
  std::array<double, 3> color{};
  std::vector<double> blob_radii;  // relative to rx
};

bool inside_shape(const Shape& s, double px, double py) {
  const double dx = px - s.cx, dy = py - s.cy;
  switch (s.kind) {
    case 0: {
      const double u = (dx * std::cos(s.rot) + dy * std::sin(s.rot)) / s.rx;
      const double v = (-dx * std::sin(s.rot) + dy * std::cos(s.rot)) / s.ry;
      return u * u + v * v <= 1.0;
    }
    case 1:
      return std::abs(dx) <= s.rx && std::abs(dy) <= s.ry;
    default: {
      const double dist = std::sqrt(dx * dx + dy * dy);
      if (dist < 1e-12) return true;
      const double theta = std::atan2(dy, dx) + M_PI;  // [0, 2pi]
      const size_t k = s.blob_radii.size();
      const double pos = theta / (2.0 * M_PI) * static_cast<double>(k);
      const size_t i0 = static_cast<size_t>(pos) % k;
      const size_t i1 = (i0 + 1) % k;
      const double f = pos - std::floor(pos);
      const double rr = s.rx * ((1.0 - f) * s.blob_radii[i0] + f * s.blob_radii[i1]);
      return dist <= rr;
    }
  }
}

Shape random_shape(Rng& rng, int h, int w, double rmin_frac, double rmax_frac) {
  Shape s;
  s.kind = static_cast<int>(rng.randint(0, 2));
  s.cx = rng.uniform(0.15, 0.85) * w;
  s.cy = rng.uniform(0.15, 0.85) * h;
  const double base = std::min(h, w);
  s.rx = rng.uniform(rmin_frac, rmax_frac) * base;
  s.ry = s.rx * rng.uniform(0.6, 1.4);
  s.rot = rng.uniform(0.0, M_PI);
  if (s.kind == 2) {
    const int k = static_cast<int>(rng.randint(6, 9));
    for (int i = 0; i < k; ++i) s.blob_radii.push_back(rng.uniform(0.55, 1.0));
  }
  return s;
}

}  // namespace

Scene gen_scene(std::uint64_t seed, int h, int w) {
  check_input(h >= 32 && w >= 32, "scene size must be at least 32x32");
  Rng rng(derive_seed(seed, "scene"));
  Scene scene;
  scene.image = Image(h, w);
  Image& img = scene.image;

  // gradient background between two palettes
  const double theta = rng.uniform(0.0, 2.0 * M_PI);
  const double gx = std::cos(theta), gy = std::sin(theta);
  std::array<double, 3> c0{}, c1{};
  for (int c = 0; c < 3; ++c) {
    c0[static_cast<size_t>(c)] = rng.uniform(0.1, 0.9);
    c1[static_cast<size_t>(c)] = rng.uniform(0.1, 0.9);
  }
  double pmin = 1e30, pmax = -1e30;
  for (int corner = 0; corner < 4; ++corner) {
    const double px = (corner & 1) ? w - 0.5 : 0.5;
    const double py = (corner & 2) ? h - 0.5 : 0.5;
    const double p = px * gx + py * gy;
    pmin = std::min(pmin, p);
    pmax = std::max(pmax, p);
  }
  const double span = std::max(pmax - pmin, 1e-9);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double t = ((x + 0.5) * gx + (y + 0.5) * gy - pmin) / span;
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) =
            (1.0 - t) * c0[static_cast<size_t>(c)] + t * c1[static_cast<size_t>(c)];
      }
    }
  }

  // low-frequency sinusoidal texture
  for (int s = 0; s < 2; ++s) {
    const double amp = rng.uniform(0.015, 0.05);
    const double fx = rng.uniform(1.0, 5.0), fy = rng.uniform(1.0, 5.0);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v =
            amp * std::sin(2.0 * M_PI * (fx * x / w + fy * y / h) + phase);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) += v;
      }
  }

  // objects
  const int n_obj = static_cast<int>(rng.randint(2, 5));
  for (int i = 0; i < n_obj; ++i) {
    Shape s = random_shape(rng, h, w, 0.07, 0.20);
    for (int c = 0; c < 3; ++c) s.color[static_cast<size_t>(c)] = rng.uniform(0.1, 0.9);
    const double tex_amp = rng.uniform(0.01, 0.04);
    const double tex_f = rng.uniform(4.0, 10.0);
    const double tex_phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!inside_shape(s, x + 0.5, y + 0.5)) continue;
        const double v = tex_amp * std::sin(2.0 * M_PI * tex_f * (x + y) / (h + w) + tex_phase);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = s.color[static_cast<size_t>(c)] + v;
      }
    scene.objects.push_back({s.cx, s.cy, s.rx, s.ry});
  }

  // sensor-like noise field (a per-image signature tampering disrupts)
  const double noise_std = rng.uniform(0.008, 0.02);
  for (auto& v : img.pixels) v += rng.normal(0.0, noise_std);

  for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
  return scene;
}

Image gen_base_image(std::uint64_t seed, int h, int w) {
  return gen_scene(seed, h, w).image;
}

// ---------------------------------------------------------------------------
// Tamper region machinery
// ---------------------------------------------------------------------------

namespace {

Tensor rasterize(const Shape& s, int h, int w) {
  Tensor mask({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (inside_shape(s, x + 0.5, y + 0.5)) mask.at2(y, x) = 1.0;
  return mask;
}

double mask_fraction(const Tensor& mask) {
  std::int64_t on = 0;
  for (double v : mask.data) on += v >= 0.5 ? 1 : 0;
  return static_cast<double>(on) / static_cast<double>(mask.numel());
}

// Elliptical or blobby region; ~80% anchored to a scene object when objects
// are available. Retries until the area lands in [lo_frac, hi_frac].
Tensor gen_region(Rng& rng, int h, int w, const std::vector<SceneObject>* objects,
                  double lo_frac, double hi_frac, double rmax_frac) {
  for (int attempt = 0; attempt < 10; ++attempt) {
    Shape s = random_shape(rng, h, w, 0.10, rmax_frac);
    if (s.kind == 1) s.kind = 0;  // regions are ellipses or blobs, not boxes
    if (objects && !objects->empty() && rng.uniform() < 0.8) {
      const auto& obj =
          (*objects)[static_cast<size_t>(rng.randint(0, static_cast<std::int64_t>(objects->size()) - 1))];
      s.cx = obj.cx + rng.uniform(-0.25, 0.25) * obj.rx;
      s.cy = obj.cy + rng.uniform(-0.25, 0.25) * obj.ry;
      const double grow = rng.uniform(0.9, 1.4);
      s.rx = std::min(obj.rx * grow, rmax_frac * std::min(h, w));
      s.ry = std::min(obj.ry * grow, rmax_frac * std::min(h, w));
    }
    Tensor mask = rasterize(s, h, w);
    const double frac = mask_fraction(mask);
    if (frac >= lo_frac && frac <= hi_frac) return mask;
  }
  throw InvalidInputError("could not draw a tamper region within the area bounds");
}

void mask_bbox(const Tensor& mask, int* y0, int* y1, int* x0, int* x1) {
  const int h = mask.shape[0], w = mask.shape[1];
  *y0 = h;
  *y1 = -1;
  *x0 = w;
  *x1 = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask.at2(y, x) >= 0.5) {
        *y0 = std::min(*y0, y);
        *y1 = std::max(*y1, y);
        *x0 = std::min(*x0, x);
        *x1 = std::max(*x1, x);
      }
}

}  // namespace

TamperSample gen_splice(std::uint64_t seed, const Image& donor, const Image& host,
                        const std::vector<SceneObject>* objects) {
  validate_image(donor);
  validate_image(host);
  check_input(donor.height == host.height && donor.width == host.width,
              "donor and host must share dimensions");
  Rng rng(derive_seed(seed, "splice"));
  const int h = host.height, w = host.width;
  Tensor region = gen_region(rng, h, w, objects, 0.015, 0.55, 0.34);

  TamperSample s;
  s.image = host;
  s.mask = region;
  s.tamper_type = TamperType::kSplice;
  s.seed = seed;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (region.at2(y, x) >= 0.5)
        for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = donor.at(y, x, c);
  validate_tamper_sample(s);
  return s;
}

TamperSample gen_copy_move(std::uint64_t seed, const Image& image,
                           const std::vector<SceneObject>* objects) {
  validate_image(image);
  Rng rng(derive_seed(seed, "copymove"));
  const int h = image.height, w = image.width;

  for (int attempt = 0; attempt < 10; ++attempt) {
    Tensor src = gen_region(rng, h, w, objects, 0.015, 0.22, 0.22);
    int y0, y1, x0, x1;
    mask_bbox(src, &y0, &y1, &x0, &x1);
    for (int draw = 0; draw < 8; ++draw) {
      const int dy = static_cast<int>(rng.randint(-y0, h - 1 - y1));
      const int dx = static_cast<int>(rng.randint(-x0, w - 1 - x1));
      if (dy == 0 && dx == 0) continue;
      bool overlap = false;
      for (int y = y0; y <= y1 && !overlap; ++y)
        for (int x = x0; x <= x1; ++x)
          if (src.at2(y, x) >= 0.5 && src.at2(y + dy, x + dx) >= 0.5) {
            overlap = true;
            break;
          }
      if (overlap) continue;

      TamperSample s;
      s.image = image;
      s.mask = Tensor({h, w});
      s.tamper_type = TamperType::kCopyMove;
      s.seed = seed;
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          if (src.at2(y, x) >= 0.5) {
            for (int c = 0; c < 3; ++c) s.image.at(y + dy, x + dx, c) = image.at(y, x, c);
            s.mask.at2(y + dy, x + dx) = 1.0;
          }
      validate_tamper_sample(s);
      return s;
    }
  }
  throw InvalidInputError("could not place a non-overlapping copy-move region");
}

TamperSample gen_inpaint(std::uint64_t seed, const Image& image,
                         const std::vector<SceneObject>* objects) {
  validate_image(image);
  Rng rng(derive_seed(seed, "inpaint"));
  const int h = image.height, w = image.width;
  Tensor region = gen_region(rng, h, w, objects, 0.015, 0.40, 0.30);

  TamperSample s;
  s.image = image;
  s.mask = region;
  s.tamper_type = TamperType::kInpaint;
  s.seed = seed;

  std::vector<std::pair<int, int>> interior;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (region.at2(y, x) >= 0.5) interior.emplace_back(y, x);

  // initialize interior with the mean of the boundary ring
  std::array<double, 3> boundary_mean{};
  int boundary_n = 0;
  const int offs[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  for (const auto& [y, x] : interior) {
    for (const auto& o : offs) {
      const int ny = y + o[0], nx = x + o[1];
      if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
      if (region.at2(ny, nx) >= 0.5) continue;
      for (int c = 0; c < 3; ++c) boundary_mean[static_cast<size_t>(c)] += image.at(ny, nx, c);
      ++boundary_n;
    }
  }
  if (boundary_n > 0) {
    for (int c = 0; c < 3; ++c) boundary_mean[static_cast<size_t>(c)] /= boundary_n;
    for (const auto& [y, x] : interior)
      for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = boundary_mean[static_cast<size_t>(c)];
  }

  // Gauss-Seidel diffusion toward the harmonic fill
  for (int iter = 0; iter < 200; ++iter) {
    double residual = 0.0;
    for (const auto& [y, x] : interior) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        int n = 0;
        for (const auto& o : offs) {
          const int ny = y + o[0], nx = x + o[1];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          acc += s.image.at(ny, nx, c);
          ++n;
        }
        const double v = acc / n;
        residual = std::max(residual, std::abs(v - s.image.at(y, x, c)));
        s.image.at(y, x, c) = v;
      }
    }
    if (residual < 1e-4) break;
  }
  validate_tamper_sample(s);
  return s;
}

// ---------------------------------------------------------------------------
// Perturbations
// ---------------------------------------------------------------------------

namespace {

int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

Image gaussian_blur(const Image& img, int k) {
  const int r = (k - 1) / 2;
  const double sigma = 0.3 * ((k - 1) * 0.5 - 1.0) + 0.8;
  std::vector<double> kernel(static_cast<size_t>(k));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    kernel[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[static_cast<size_t>(i + r)];
  }
  for (auto& v : kernel) v /= sum;

  const int h = img.height, w = img.width;
  Image tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += kernel[static_cast<size_t>(i + r)] * img.at(y, reflect_index(x + i, w), c);
        tmp.at(y, x, c) = acc;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += kernel[static_cast<size_t>(i + r)] * tmp.at(reflect_index(y + i, h), x, c);
        out.at(y, x, c) = acc;
      }
  return out;
}

}  // namespace

Image perturb(const Image& image, const PerturbSpec& spec, std::uint64_t seed) {
  validate_image(image);
  spec.validate();
  switch (spec.kind) {
    case PerturbSpec::Kind::kNone:
      return image;
    case PerturbSpec::Kind::kGaussNoise: {
      Rng rng(derive_seed(seed, "perturb-noise"));
      Image out = image;
      const double std_01 = spec.level / 255.0;
      for (auto& v : out.pixels) v = std::clamp(v + rng.normal(0.0, std_01), 0.0, 1.0);
      return out;
    }
    case PerturbSpec::Kind::kGaussBlur:
      return gaussian_blur(image, spec.level);
    case PerturbSpec::Kind::kJpeg:
      return jpeg_roundtrip(image, spec.level);
  }
  throw ConfigError("unhandled perturbation kind");
}

// ---------------------------------------------------------------------------
// Dataset generation and serialization
// ---------------------------------------------------------------------------

std::array<int, 4> split_counts(int count, const std::array<double, 4>& fractions) {
  double sum = 0.0;
  for (double f : fractions) {
    check_config(f >= 0.0, "split fractions must be nonnegative");
    sum += f;
  }
  check_config(std::abs(sum - 1.0) < 1e-9, "split fractions must sum to 1");
  std::array<int, 4> counts{};
  std::array<double, 4> remainders{};
  int assigned = 0;
  for (int i = 0; i < 4; ++i) {
    const double exact = count * fractions[static_cast<size_t>(i)];
    counts[static_cast<size_t>(i)] = static_cast<int>(std::floor(exact + 1e-9));
    remainders[static_cast<size_t>(i)] = exact - counts[static_cast<size_t>(i)];
    assigned += counts[static_cast<size_t>(i)];
  }
  int leftover = count - assigned;
  while (leftover > 0) {
    int best = 0;
    for (int i = 1; i < 4; ++i)
      if (remainders[static_cast<size_t>(i)] > remainders[static_cast<size_t>(best)]) best = i;
    counts[static_cast<size_t>(best)] += 1;
    remainders[static_cast<size_t>(best)] = -1.0;
    --leftover;
  }
  return counts;
}

std::map<std::string, std::vector<TamperSample>> generate_split_samples(
    int count, int size, std::uint64_t seed, const std::array<double, 4>& fractions) {
  check_input(count >= 4, "dataset count must be at least 4");
  check_input(size >= 32, "sample size must be at least 32");
  const auto counts = split_counts(count, fractions);

  std::map<std::string, std::vector<TamperSample>> out;
  std::uint64_t g = 0;
  for (size_t si = 0; si < kSplitNames.size(); ++si) {
    auto& bucket = out[kSplitNames[si]];
    for (int i = 0; i < counts[si]; ++i, ++g) {
      const std::uint64_t sample_seed = seed + g;
      const Scene scene = gen_scene(sample_seed, size, size);
      switch (g % 3) {
        case 0: {
          const Image donor = gen_base_image(derive_seed(sample_seed, "donor"), size, size);
          bucket.push_back(gen_splice(sample_seed, donor, scene.image, &scene.objects));
          break;
        }
        case 1:
          bucket.push_back(gen_copy_move(sample_seed, scene.image, &scene.objects));
          break;
        default:
          bucket.push_back(gen_inpaint(sample_seed, scene.image, &scene.objects));
          break;
      }
    }
  }
  return out;
}

std::int64_t DatasetManifest::total_records() const {
  std::int64_t n = 0;
  for (const auto& [name, records] : splits) n += static_cast<std::int64_t>(records.size());
  return n;
}

DatasetManifest write_dataset(
    const std::string& root,
    const std::map<std::string, std::vector<TamperSample>>& by_split) {
  DatasetManifest manifest;
  manifest.root = root;

  nlohmann::ordered_json jsplits;
  for (const char* split : kSplitNames) {
    auto it = by_split.find(split);
    if (it == by_split.end()) continue;
    std::error_code ec;
    fs::create_directories(fs::path(root) / split / "images", ec);
    fs::create_directories(fs::path(root) / split / "masks", ec);
    if (ec) throw IoError("cannot create dataset directories under " + root);

    std::set<std::uint64_t> seeds;
    nlohmann::ordered_json jrecords = nlohmann::ordered_json::array();
    int idx = 0;
    for (const TamperSample& s : it->second) {
      validate_tamper_sample(s);
      check_input(seeds.insert(s.seed).second,
                  "duplicate sample seed in split " + std::string(split));
      char name[32];
      std::snprintf(name, sizeof(name), "%04d.png", idx++);
      SampleRecord rec;
      rec.image_file = std::string(split) + "/images/" + name;
      rec.mask_file = std::string(split) + "/masks/" + name;
      rec.tamper_type = tamper_type_name(s.tamper_type);
      rec.seed = s.seed;
      write_png_rgb((fs::path(root) / rec.image_file).string(), s.image);
      write_png_mask((fs::path(root) / rec.mask_file).string(), s.mask);
      manifest.splits[split].push_back(rec);

      nlohmann::ordered_json jr;
      jr["image"] = rec.image_file;
      jr["mask"] = rec.mask_file;
      jr["tamper_type"] = rec.tamper_type;
      jr["seed"] = rec.seed;
      jrecords.push_back(jr);
    }
    jsplits[split] = jrecords;
  }

  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["splits"] = jsplits;
  std::ofstream f(fs::path(root) / "manifest.json");
  if (!f) throw IoError("cannot write manifest under " + root);
  f << j.dump(2) << "\n";
  return manifest;
}

DatasetManifest read_dataset(const std::string& root) {
  const fs::path mpath = fs::path(root) / "manifest.json";
  std::ifstream f(mpath);
  if (!f) throw IoError("cannot open dataset manifest: " + mpath.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset manifest " + mpath.string() + ": " + e.what());
  }

  DatasetManifest manifest;
  manifest.root = root;
  for (const auto& [split, jrecords] : j.at("splits").items()) {
    std::set<std::uint64_t> seeds;
    for (const auto& jr : jrecords) {
      SampleRecord rec;
      rec.image_file = jr.at("image").get<std::string>();
      rec.mask_file = jr.at("mask").get<std::string>();
      rec.tamper_type = jr.at("tamper_type").get<std::string>();
      rec.seed = jr.at("seed").get<std::uint64_t>();
      tamper_type_from_name(rec.tamper_type);  // validate
      check_input(seeds.insert(rec.seed).second,
                  "duplicate sample seed in split " + split);
      for (const std::string& file : {rec.image_file, rec.mask_file}) {
        if (!fs::exists(fs::path(root) / file)) {
          throw IoError("dataset file missing: " + (fs::path(root) / file).string());
        }
      }
      manifest.splits[split].push_back(rec);
    }
  }
  return manifest;
}

std::vector<LabeledImage> load_split(const DatasetManifest& manifest,
                                     const std::string& split) {
  auto it = manifest.splits.find(split);
  check_input(it != manifest.splits.end(), "dataset has no split '" + split + "'");
  std::vector<LabeledImage> out;
  for (const SampleRecord& rec : it->second) {
    LabeledImage li;
    li.image = read_png_rgb((fs::path(manifest.root) / rec.image_file).string());
    li.mask = read_png_mask((fs::path(manifest.root) / rec.mask_file).string());
    li.id = rec.image_file;
    out.push_back(std::move(li));
  }
  return out;
}

}  // namespace mesorch
