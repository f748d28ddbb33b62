#ifndef MESORCH_IMAGEIO_HPP_
#define MESORCH_IMAGEIO_HPP_

#include <string>

#include "mesorch/dct.hpp"
#include "mesorch/tensor.hpp"

namespace mesorch {

// 8-bit RGB PNG.
void write_png_rgb(const std::string& path, const Image& img);
Image read_png_rgb(const std::string& path);

// 8-bit single-channel PNG; mask semantics 255 = manipulated.
void write_png_mask(const std::string& path, const Tensor& mask);
Tensor read_png_mask(const std::string& path);

// 8-bit grayscale PNG from values in [0,1].
void write_png_gray(const std::string& path, const Tensor& values);

// Encode/decode through JPEG (4:2:0 chroma subsampling) at the given quality.
Image jpeg_roundtrip(const Image& img, int quality);

}  // namespace mesorch

#endif  // MESORCH_IMAGEIO_HPP_
