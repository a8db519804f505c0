#include "image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lfd {

std::uint8_t quantize_u8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

namespace {

// Reads one PNM token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  const std::string magic = next_token(in);
  if (magic != "P6") fail(ErrorCode::parse, path + ": not a binary PPM (P6)");
  const int w = std::stoi(next_token(in));
  const int h = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (w <= 0 || h <= 0) fail(ErrorCode::parse, path + ": bad image size");
  if (maxval != 255) fail(ErrorCode::parse, path + ": only maxval 255 is supported");
  std::vector<std::uint8_t> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    fail(ErrorCode::parse, path + ": truncated pixel data");
  Image img(h, w);
  for (size_t i = 0; i < raw.size(); ++i) img.rgb[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<std::uint8_t> raw(img.rgb.size());
  for (size_t i = 0; i < img.rgb.size(); ++i) raw[i] = quantize_u8(img.rgb[i]);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) fail(ErrorCode::io, "failed writing " + path);
}

void write_pgm(const std::string& path, int h, int w, const std::vector<std::uint8_t>& gray) {
  LFD_CHECK(gray.size() == static_cast<size_t>(h) * w, "pgm: buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!out) fail(ErrorCode::io, "failed writing " + path);
}

Image bilinear_resize(const Image& img, int out_h, int out_w) {
  LFD_CHECK(out_h > 0 && out_w > 0, "resize: bad output size");
  Image out(out_h, out_w);
  const double sy = static_cast<double>(img.h) / out_h;
  const double sx = static_cast<double>(img.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.w - 1);
      const double wx = fx - x0;
      const float* p00 = img.px(y0, x0);
      const float* p01 = img.px(y0, x1);
      const float* p10 = img.px(y1, x0);
      const float* p11 = img.px(y1, x1);
      float* dst = out.px(y, x);
      for (int c = 0; c < 3; ++c) {
        const double top = p00[c] * (1.0 - wx) + p01[c] * wx;
        const double bot = p10[c] * (1.0 - wx) + p11[c] * wx;
        dst[c] = static_cast<float>(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Tensor<float> image_to_tensor(const Image& img) {
  Tensor<float> t({3, img.h, img.w});
  const size_t plane = static_cast<size_t>(img.h) * img.w;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const float* p = img.px(y, x);
      const size_t i = static_cast<size_t>(y) * img.w + x;
      for (int c = 0; c < 3; ++c) t.v[c * plane + i] = 2.0f * p[c] - 1.0f;
    }
  return t;
}

Image tensor_to_image(const Tensor<float>& t) {
  LFD_CHECK(t.rank() == 3 && t.dim(0) == 3, "tensor_to_image: expected (3,H,W)");
  Image img(t.dim(1), t.dim(2));
  const size_t plane = static_cast<size_t>(img.h) * img.w;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      float* p = img.px(y, x);
      const size_t i = static_cast<size_t>(y) * img.w + x;
      for (int c = 0; c < 3; ++c)
        p[c] = std::clamp(0.5f * (t.v[c * plane + i] + 1.0f), 0.0f, 1.0f);
    }
  return img;
}

}  // namespace lfd
