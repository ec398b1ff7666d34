#include "vlm3d/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vlm3d {

namespace {

struct LerpIndex {
  int i0 = 0, i1 = 0;
  double f = 0.0;
};

// Source index pair for output index i under the half-pixel convention.
LerpIndex lerp_index(int i, int n_out, int n_in) {
  double s = (i + 0.5) * static_cast<double>(n_in) / n_out - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
  LerpIndex li;
  li.i0 = std::min(static_cast<int>(s), std::max(n_in - 2, 0));
  li.i1 = std::min(li.i0 + 1, n_in - 1);
  li.f = s - li.i0;
  return li;
}

Image resize_apply(const ResizeStage& st, const Image& in) {
  Image out = Image::make(st.width, st.height, in.channels);
  for (int y = 0; y < st.height; ++y) {
    const LerpIndex ly = lerp_index(y, st.height, in.height);
    for (int x = 0; x < st.width; ++x) {
      const LerpIndex lx = lerp_index(x, st.width, in.width);
      for (int c = 0; c < in.channels; ++c) {
        const double v00 = in.at(lx.i0, ly.i0, c);
        const double v10 = in.at(lx.i1, ly.i0, c);
        const double v01 = in.at(lx.i0, ly.i1, c);
        const double v11 = in.at(lx.i1, ly.i1, c);
        // Difference form keeps constant images bit-exactly constant.
        const double top = v00 + lx.f * (v10 - v00);
        const double bottom = v01 + lx.f * (v11 - v01);
        out.at(x, y, c) = top + ly.f * (bottom - top);
      }
    }
  }
  return out;
}

// Transpose of the bilinear interpolation matrix: scatter each output
// gradient to the four source pixels it read.
Image resize_vjp(const ResizeStage& st, const ImageShape& in_shape,
                 const Image& upstream) {
  Image grad = Image::make(in_shape.width, in_shape.height, in_shape.channels);
  for (int y = 0; y < st.height; ++y) {
    const LerpIndex ly = lerp_index(y, st.height, in_shape.height);
    for (int x = 0; x < st.width; ++x) {
      const LerpIndex lx = lerp_index(x, st.width, in_shape.width);
      for (int c = 0; c < in_shape.channels; ++c) {
        const double u = upstream.at(x, y, c);
        if (u == 0.0) continue;
        grad.at(lx.i0, ly.i0, c) += u * (1.0 - ly.f) * (1.0 - lx.f);
        grad.at(lx.i1, ly.i0, c) += u * (1.0 - ly.f) * lx.f;
        grad.at(lx.i0, ly.i1, c) += u * ly.f * (1.0 - lx.f);
        grad.at(lx.i1, ly.i1, c) += u * ly.f * lx.f;
      }
    }
  }
  return grad;
}

// Maps output index to input index, or -1 inside a padded margin.
int crop_src_index(int i, int n_out, int n_in) {
  if (n_out <= n_in) {
    const int off = (n_in - n_out) / 2;
    return i + off;
  }
  const int off = (n_out - n_in) / 2;
  const int src = i - off;
  return (src >= 0 && src < n_in) ? src : -1;
}

Image crop_apply(const CropOrPadStage& st, const Image& in) {
  Image out = Image::make(st.width, st.height, in.channels, st.pad_value);
  for (int y = 0; y < st.height; ++y) {
    const int sy = crop_src_index(y, st.height, in.height);
    if (sy < 0) continue;
    for (int x = 0; x < st.width; ++x) {
      const int sx = crop_src_index(x, st.width, in.width);
      if (sx < 0) continue;
      for (int c = 0; c < in.channels; ++c) out.at(x, y, c) = in.at(sx, sy, c);
    }
  }
  return out;
}

Image crop_vjp(const CropOrPadStage& st, const ImageShape& in_shape,
               const Image& upstream) {
  Image grad = Image::make(in_shape.width, in_shape.height, in_shape.channels);
  for (int y = 0; y < st.height; ++y) {
    const int sy = crop_src_index(y, st.height, in_shape.height);
    if (sy < 0) continue;
    for (int x = 0; x < st.width; ++x) {
      const int sx = crop_src_index(x, st.width, in_shape.width);
      if (sx < 0) continue;
      for (int c = 0; c < in_shape.channels; ++c)
        grad.at(sx, sy, c) += upstream.at(x, y, c);
    }
  }
  return grad;
}

void validate_normalize(const NormalizeStage& st, int channels) {
  if (static_cast<int>(st.mean.size()) != channels ||
      static_cast<int>(st.scale.size()) != channels)
    throw std::invalid_argument(
        "normalize stage mean/scale size does not match image channels");
  for (double s : st.scale)
    if (s == 0.0)
      throw std::invalid_argument("normalize scale must be nonzero");
}

Image normalize_apply(const NormalizeStage& st, const Image& in) {
  validate_normalize(st, in.channels);
  Image out = in;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const int c = static_cast<int>(i % out.channels);
    out.data[i] = (out.data[i] - st.mean[c]) / st.scale[c];
  }
  return out;
}

Image normalize_vjp(const NormalizeStage& st, const Image& upstream) {
  Image grad = upstream;
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    grad.data[i] /= st.scale[static_cast<int>(i % grad.channels)];
  return grad;
}

ImageShape stage_output_shape(const PreprocStage& stage, ImageShape in) {
  if (const auto* r = std::get_if<ResizeStage>(&stage)) {
    if (r->width < 1 || r->height < 1)
      throw std::invalid_argument("resize target size must be positive");
    return {r->width, r->height, in.channels};
  }
  if (const auto* cp = std::get_if<CropOrPadStage>(&stage)) {
    if (cp->width < 1 || cp->height < 1)
      throw std::invalid_argument("crop/pad target size must be positive");
    return {cp->width, cp->height, in.channels};
  }
  const auto& n = std::get<NormalizeStage>(stage);
  validate_normalize(n, in.channels);
  return in;
}

}  // namespace

ImageShape chain_output_shape(const PreprocChain& chain, ImageShape input) {
  ImageShape shape = input;
  for (const auto& stage : chain.stages) shape = stage_output_shape(stage, shape);
  return shape;
}

Image preproc_apply(const PreprocChain& chain, const Image& image) {
  Image cur = image;
  for (const auto& stage : chain.stages) {
    stage_output_shape(stage, {cur.width, cur.height, cur.channels});
    if (const auto* r = std::get_if<ResizeStage>(&stage))
      cur = resize_apply(*r, cur);
    else if (const auto* cp = std::get_if<CropOrPadStage>(&stage))
      cur = crop_apply(*cp, cur);
    else
      cur = normalize_apply(std::get<NormalizeStage>(stage), cur);
  }
  return cur;
}

Image preproc_vjp(const PreprocChain& chain, const Image& image,
                  const Image& upstream) {
  // Forward shapes per stage, then adjoints composed in reverse.
  std::vector<ImageShape> shapes;
  shapes.push_back({image.width, image.height, image.channels});
  for (const auto& stage : chain.stages)
    shapes.push_back(stage_output_shape(stage, shapes.back()));

  const ImageShape out_shape = shapes.back();
  if (upstream.width != out_shape.width ||
      upstream.height != out_shape.height ||
      upstream.channels != out_shape.channels)
    throw std::invalid_argument("preproc_vjp: upstream shape mismatch");

  Image grad = upstream;
  for (std::size_t i = chain.stages.size(); i-- > 0;) {
    const ImageShape in_shape = shapes[i];
    const PreprocStage& stage = chain.stages[i];
    if (const auto* r = std::get_if<ResizeStage>(&stage))
      grad = resize_vjp(*r, in_shape, grad);
    else if (const auto* cp = std::get_if<CropOrPadStage>(&stage))
      grad = crop_vjp(*cp, in_shape, grad);
    else
      grad = normalize_vjp(std::get<NormalizeStage>(stage), grad);
  }
  return grad;
}

}  // namespace vlm3d
