#include "mesorch/imageio.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

namespace mesorch {

static unsigned char to_u8(double v) {
  const double s = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<unsigned char>(s);
}

static cv::Mat image_to_bgr8(const Image& img) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      row[x] = cv::Vec3b(to_u8(img.at(y, x, 2)), to_u8(img.at(y, x, 1)),
                         to_u8(img.at(y, x, 0)));
    }
  }
  return m;
}

static Image bgr8_to_image(const cv::Mat& m) {
  Image img(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      img.at(y, x, 0) = row[x][2] / 255.0;
      img.at(y, x, 1) = row[x][1] / 255.0;
      img.at(y, x, 2) = row[x][0] / 255.0;
    }
  }
  return img;
}

void write_png_rgb(const std::string& path, const Image& img) {
  if (!cv::imwrite(path, image_to_bgr8(img))) {
    throw IoError("failed to write PNG: " + path);
  }
}

Image read_png_rgb(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("failed to read PNG: " + path);
  return bgr8_to_image(m);
}

void write_png_mask(const std::string& path, const Tensor& mask) {
  check_input(mask.shape.size() == 2, "mask must be [H, W]");
  cv::Mat m(mask.shape[0], mask.shape[1], CV_8UC1);
  for (int y = 0; y < mask.shape[0]; ++y) {
    auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < mask.shape[1]; ++x) {
      row[x] = mask.at2(y, x) >= 0.5 ? 255 : 0;
    }
  }
  if (!cv::imwrite(path, m)) throw IoError("failed to write PNG: " + path);
}

Tensor read_png_mask(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("failed to read PNG: " + path);
  Tensor mask({m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < m.cols; ++x) mask.at2(y, x) = row[x] >= 128 ? 1.0 : 0.0;
  }
  return mask;
}

void write_png_gray(const std::string& path, const Tensor& values) {
  const bool trailing1 = values.shape.size() == 3 && values.shape[2] == 1;
  check_input(values.shape.size() == 2 || trailing1, "expected [H, W] or [H, W, 1]");
  cv::Mat m(values.shape[0], values.shape[1], CV_8UC1);
  for (int y = 0; y < values.shape[0]; ++y) {
    auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < values.shape[1]; ++x) {
      row[x] = to_u8(values.data[static_cast<size_t>(y) * values.shape[1] + x]);
    }
  }
  if (!cv::imwrite(path, m)) throw IoError("failed to write PNG: " + path);
}

Image jpeg_roundtrip(const Image& img, int quality) {
  std::vector<unsigned char> buf;
  // libjpeg's default chroma subsampling is 4:2:0
  const std::vector<int> params = {cv::IMWRITE_JPEG_QUALITY, quality};
  if (!cv::imencode(".jpg", image_to_bgr8(img), buf, params)) {
    throw IoError("JPEG encode failed");
  }
  cv::Mat m = cv::imdecode(buf, cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("JPEG decode failed");
  return bgr8_to_image(m);
}

}  // namespace mesorch
