#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"

namespace lfd {

// RGB image, HWC, values in [0,1].
struct Image {
  int h = 0, w = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), rgb(static_cast<size_t>(h_) * w_ * 3, 0.0f) {}

  float* px(int y, int x) { return rgb.data() + 3 * (static_cast<size_t>(y) * w + x); }
  const float* px(int y, int x) const { return rgb.data() + 3 * (static_cast<size_t>(y) * w + x); }
};

// Quantization boundary, pinned once: u8 = round(clamp(v,0,1)*255), v = u8/255.
std::uint8_t quantize_u8(float v);

Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);
void write_pgm(const std::string& path, int h, int w, const std::vector<std::uint8_t>& gray);

Image bilinear_resize(const Image& img, int out_h, int out_w);

// Diffusion-side conversions: images live in [-1,1] as (3,H,W) tensors.
Tensor<float> image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor<float>& t);

}  // namespace lfd
