#pragma once

#include <string>
#include <utility>

#include "camera.hpp"
#include "common.hpp"

namespace lfd {

struct EncodingConfig {
  int octaves = 15;
  bool normalize_dirs = true;
  int downsample = 1;

  void validate() const {
    LFD_CHECK(octaves >= 1, "encoding: octaves must be >= 1");
    LFD_CHECK(downsample >= 1, "encoding: downsample must be >= 1");
  }
  int channels() const { return 12 * octaves; }
};

// Sinusoidal encoding of a light field, narrowed to training precision.
// Channel layout is frozen (checkpoints depend on it): component-major over
// the 6 ray components (ox, oy, oz, dx, dy, dz); per component, octaves
// ascend and each octave contributes a (sin, cos) pair:
//   channel(c, k, f) = c * 2 * octaves + 2 * k + f,  f = 0 for sin, 1 for cos
// with values sin(2^k pi x) and cos(2^k pi x).
struct LightFieldEncoding {
  int h = 0, w = 0, channels = 0;
  std::vector<float> values;  // CHW

  float at(int c, int v, int u) const {
    return values[(static_cast<size_t>(c) * h + v) * w + u];
  }
};

// Double-precision encoding, kept for oracles and exact-comparison tests.
Tensor<double> positional_encode_d(const LightField& lf, const EncodingConfig& cfg);

LightFieldEncoding positional_encode(const LightField& lf, const EncodingConfig& cfg);

// Source encoding comes from the canonical frame (identity rotation, zero
// origin); target from relative_pose(source, target).
std::pair<LightFieldEncoding, LightFieldEncoding> encode_view_pair(
    const CameraIntrinsics& K, const CameraPose& source_pose, const CameraPose& target_pose,
    const PixelGrid& grid, const EncodingConfig& cfg);

// Channel index metadata for the encode-dump debug format.
std::string encoding_layout_json(const EncodingConfig& cfg);

}  // namespace lfd
