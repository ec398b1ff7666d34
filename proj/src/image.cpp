#include "vlm3d/image.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vlm3d {

namespace {
constexpr char kImageMagic[] = "VLM3D-IMG";
constexpr std::uint32_t kImageVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
}  // namespace

Image Image::make(int width, int height, int channels, double fill) {
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("image size must be positive");
  if (channels != 1 && channels != 3 && channels != 4)
    throw std::invalid_argument("image channels must be 1, 3 or 4");
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.data.assign(static_cast<std::size_t>(width) * height * channels, fill);
  return img;
}

bool Image::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void save_image_raw(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kImageMagic, sizeof(kImageMagic) - 1);
  write_u32(os, kImageVersion);
  write_u32(os, static_cast<std::uint32_t>(img.width));
  write_u32(os, static_cast<std::uint32_t>(img.height));
  write_u32(os, static_cast<std::uint32_t>(img.channels));
  std::vector<float> buf(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i)
    buf[i] = static_cast<float>(img.data[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw std::runtime_error("write failed: " + path);
}

Image load_image_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image: " + path);
  char magic[sizeof(kImageMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kImageMagic, sizeof(magic)) != 0)
    throw std::runtime_error("bad image magic in " + path);
  const std::uint32_t version = read_u32(is);
  if (version != kImageVersion)
    throw std::runtime_error("unsupported image version in " + path);
  const std::uint32_t w = read_u32(is);
  const std::uint32_t h = read_u32(is);
  const std::uint32_t c = read_u32(is);
  if (!is || w == 0 || h == 0 || (c != 1 && c != 3 && c != 4))
    throw std::runtime_error("bad image header in " + path);
  Image img = Image::make(static_cast<int>(w), static_cast<int>(h),
                          static_cast<int>(c));
  std::vector<float> buf(img.data.size());
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!is) throw std::runtime_error("truncated image data in " + path);
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i];
  return img;
}

}  // namespace vlm3d
