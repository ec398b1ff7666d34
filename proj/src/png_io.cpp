#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "vlm3d/image.hpp"

namespace vlm3d {

namespace {

void append_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
  append_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc =
      crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  append_u32_be(out, static_cast<std::uint32_t>(crc));
}

std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

void save_image_png(const std::string& path, const Image& img) {
  const int c = img.channels;
  // PNG color type: 0 gray, 2 rgb, 6 rgba.
  const std::uint8_t color_type = c == 1 ? 0 : (c == 3 ? 2 : 6);

  // Scanlines with filter byte 0.
  std::vector<std::uint8_t> raw;
  raw.reserve((static_cast<std::size_t>(img.width) * c + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    for (int x = 0; x < img.width; ++x)
      for (int ch = 0; ch < c; ++ch) raw.push_back(to_byte(img.at(x, y, ch)));
  }

  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_size);
  if (compress2(comp.data(), &comp_size, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png deflate failed for " + path);
  comp.resize(comp_size);

  std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  append_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  append_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);           // bit depth
  ihdr.push_back(color_type);
  ihdr.push_back(0);           // compression
  ihdr.push_back(0);           // filter
  ihdr.push_back(0);           // interlace
  append_chunk(png, "IHDR", ihdr);
  append_chunk(png, "IDAT", comp);
  append_chunk(png, "IEND", {});

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(png.data()),
           static_cast<std::streamsize>(png.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace vlm3d
