#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace vlm3d {

// Row-major, channel-interleaved image with 1 (grayscale), 3 (rgb) or
// 4 (rgba) channels. Values are doubles; renders keep rgb in [0,1] and
// alpha in [0,1], but preprocessing stages may move values outside that.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  static Image make(int width, int height, int channels, double fill = 0.0);

  double& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::size_t value_count() const { return data.size(); }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * height;
  }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  bool all_finite() const;
};

// Raw float dump: magic "VLM3D-IMG", u32 version, u32 width/height/channels,
// then float32 values row-major interleaved, little-endian. Used for test
// dumps and for target images referenced from configs.
void save_image_raw(const std::string& path, const Image& img);
Image load_image_raw(const std::string& path);

// 8-bit PNG export for diagnostics; values clamped to [0,1].
void save_image_png(const std::string& path, const Image& img);

}  // namespace vlm3d
