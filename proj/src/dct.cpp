#include "mesorch/dct.hpp"

#include <cmath>

namespace mesorch {

Tensor Image::to_tensor() const {
  Tensor t({height, width, 3});
  t.data = pixels;
  return t;
}

Image Image::from_tensor(const Tensor& t) {
  check_input(t.shape.size() == 3 && t.shape[2] == 3,
              "expected [H, W, 3] tensor, got " + t.shape_str());
  Image img(t.shape[0], t.shape[1]);
  img.pixels = t.data;
  return img;
}

void validate_image(const Image& img) {
  check_input(img.height >= 8 && img.width >= 8,
              "image must be at least 8x8, got " + std::to_string(img.height) + "x" +
                  std::to_string(img.width));
  check_input(img.pixels.size() == static_cast<size_t>(img.height) * img.width * 3,
              "pixel buffer size does not match dimensions");
  for (double v : img.pixels) {
    check_input(std::isfinite(v), "image contains non-finite values");
  }
}

MatrixRM dct_basis(int n) {
  MatrixRM b(n, n);
  const double a0 = std::sqrt(1.0 / n);
  const double ak = std::sqrt(2.0 / n);
  for (int k = 0; k < n; ++k) {
    const double scale = (k == 0) ? a0 : ak;
    for (int i = 0; i < n; ++i) {
      b(k, i) = scale * std::cos(M_PI * (2 * i + 1) * k / (2.0 * n));
    }
  }
  return b;
}

Tensor dct2(const Tensor& grid) {
  check_input(grid.shape.size() == 2, "dct2 expects a [H, W] grid, got " + grid.shape_str());
  check_input(grid.all_finite(), "dct2 input contains non-finite values");
  const int h = grid.shape[0];
  const int w = grid.shape[1];
  const MatrixRM bh = dct_basis(h);
  const MatrixRM bw = dct_basis(w);
  Tensor out({h, w});
  out.mat(h, w).noalias() = bh * grid.mat(h, w) * bw.transpose();
  return out;
}

Tensor idct2(const Tensor& coeffs) {
  check_input(coeffs.shape.size() == 2,
              "idct2 expects a [H, W] grid, got " + coeffs.shape_str());
  check_input(coeffs.all_finite(), "idct2 input contains non-finite values");
  const int h = coeffs.shape[0];
  const int w = coeffs.shape[1];
  const MatrixRM bh = dct_basis(h);
  const MatrixRM bw = dct_basis(w);
  Tensor out({h, w});
  out.mat(h, w).noalias() = bh.transpose() * coeffs.mat(h, w) * bw;
  return out;
}

int low_band_cutoff(int h, int w, double tau) {
  return static_cast<int>(std::floor(tau * (h + w - 2)));
}

FrequencyPair split_frequencies(const Image& image, double tau) {
  validate_image(image);
  check_config(tau > 0.0 && tau < 1.0, "frequency cutoff must be in (0,1)");
  const int h = image.height;
  const int w = image.width;
  const int cut = low_band_cutoff(h, w, tau);

  FrequencyPair pair;
  pair.high = Tensor({h, w, 3});
  pair.low = Tensor({h, w, 3});

  Tensor chan({h, w});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) chan.at2(y, x) = image.at(y, x, c);
    Tensor coeffs = dct2(chan);
    Tensor lo_c({h, w});
    Tensor hi_c({h, w});
    for (int u = 0; u < h; ++u) {
      for (int v = 0; v < w; ++v) {
        if (u + v <= cut) {
          lo_c.at2(u, v) = coeffs.at2(u, v);
        } else {
          hi_c.at2(u, v) = coeffs.at2(u, v);
        }
      }
    }
    Tensor lo = idct2(lo_c);
    Tensor hi = idct2(hi_c);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        pair.low.at(y, x, c) = lo.at2(y, x);
        pair.high.at(y, x, c) = hi.at2(y, x);
      }
    }
  }
  return pair;
}

EnhancedInput make_enhanced_inputs(const Image& image, double tau) {
  FrequencyPair pair = split_frequencies(image, tau);
  const int h = image.height;
  const int w = image.width;

  EnhancedInput e;
  e.local_input = Tensor({h, w, 6});
  e.global_input = Tensor({h, w, 6});
  e.weight_input = Tensor({h, w, 9});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double orig = image.at(y, x, c);
        const double hi = pair.high.at(y, x, c);
        const double lo = pair.low.at(y, x, c);
        e.local_input.at(y, x, c) = orig;
        e.local_input.at(y, x, 3 + c) = hi;
        e.global_input.at(y, x, c) = orig;
        e.global_input.at(y, x, 3 + c) = lo;
        e.weight_input.at(y, x, c) = orig;
        e.weight_input.at(y, x, 3 + c) = hi;
        e.weight_input.at(y, x, 6 + c) = lo;
      }
    }
  }
  return e;
}

}  // namespace mesorch
