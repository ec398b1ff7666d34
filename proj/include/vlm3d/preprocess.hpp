#pragma once

#include <variant>
#include <vector>

#include "vlm3d/image.hpp"

namespace vlm3d {

// Gradient-preserving preprocessing stages. Resize is bilinear with sample
// centers at (i + 0.5) / n (half-pixel convention, align-corners=false);
// CenterCropOrPad removes equal margins or pads symmetrically with a fixed
// value; Normalize applies (x - mean) / scale per channel.
struct ResizeStage {
  int width = 0;
  int height = 0;
};

struct CropOrPadStage {
  int width = 0;
  int height = 0;
  double pad_value = 0.0;
};

struct NormalizeStage {
  std::vector<double> mean;   // one per channel
  std::vector<double> scale;  // one per channel, nonzero
};

using PreprocStage = std::variant<ResizeStage, CropOrPadStage, NormalizeStage>;

struct PreprocChain {
  std::vector<PreprocStage> stages;
};

struct ImageShape {
  int width = 0;
  int height = 0;
  int channels = 0;
  bool operator==(const ImageShape&) const = default;
};

// Output shape of the chain, derivable without pixel data. Throws on an
// invalid stage (zero target size, normalize channel-count mismatch).
ImageShape chain_output_shape(const PreprocChain& chain, ImageShape input);

Image preproc_apply(const PreprocChain& chain, const Image& image);

// Exact adjoint of preproc_apply: maps a gradient over the output image to a
// gradient over the input image.
Image preproc_vjp(const PreprocChain& chain, const Image& image,
                  const Image& upstream);

}  // namespace vlm3d
