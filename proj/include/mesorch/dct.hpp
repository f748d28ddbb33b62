#ifndef MESORCH_DCT_HPP_
#define MESORCH_DCT_HPP_

#include <vector>

#include "mesorch/tensor.hpp"

namespace mesorch {

// RGB image, values in [0,1], stored [H, W, 3] row-major.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, 0.0) {}

  double& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
  }

  Tensor to_tensor() const;
  static Image from_tensor(const Tensor& t);
};

// Throws InvalidInputError unless H,W >= 8 and all values are finite.
void validate_image(const Image& img);

// Complementary frequency components of an image; high + low == source.
struct FrequencyPair {
  Tensor high;  // [H, W, 3]
  Tensor low;   // [H, W, 3]
};

// Channel-concatenated encoder inputs. The original image always occupies
// channels 0-2; frequency components follow.
struct EnhancedInput {
  Tensor local_input;   // [H, W, 6] = {x, x_h}
  Tensor global_input;  // [H, W, 6] = {x, x_l}
  Tensor weight_input;  // [H, W, 9] = {x, x_h, x_l}
};

// Orthonormal DCT-II basis matrix, B(k, n) = a_k cos(pi (2n+1) k / (2N)).
MatrixRM dct_basis(int n);

// Separable orthonormal type-II DCT of a [H, W] grid. Parseval holds exactly
// up to floating rounding.
Tensor dct2(const Tensor& grid);

// Exact inverse of dct2.
Tensor idct2(const Tensor& coeffs);

// Splits per channel in coefficient space: diagonals u+v <= floor(tau*(H+W-2))
// form the low mask, the complement the high mask. tau must lie in (0,1).
FrequencyPair split_frequencies(const Image& image, double tau);

// Builds the three concatenated encoder inputs from one decomposition.
EnhancedInput make_enhanced_inputs(const Image& image, double tau);

// Diagonal index of the last coefficient kept in the low band.
int low_band_cutoff(int h, int w, double tau);

}  // namespace mesorch

#endif  // MESORCH_DCT_HPP_
