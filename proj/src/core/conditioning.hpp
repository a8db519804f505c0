#pragma once

#include "camera.hpp"
#include "checkpoint.hpp"
#include "encoding.hpp"
#include "image.hpp"

namespace lfd {

// Zero-copy view of an encoding as a (C,H,W) float tensor.
Tensor<float> encoding_to_tensor(const LightFieldEncoding& enc);

// The 12 numbers of (R_rel row-major, t_rel) tiled over every pixel.
Tensor<float> rt_conditioning(const CameraPose& rel, int h, int w);

// Target-side conditioning channels for one (source, target) pose pair.
Tensor<float> target_conditioning(const RunConfig& run, const CameraIntrinsics& K,
                                  const CameraPose& source, const CameraPose& target);

// Source-branch input: source image concatenated with the canonical-frame
// conditioning (identity pose).
Tensor<float> source_input(const RunConfig& run, const CameraIntrinsics& K, const Image& source);

}  // namespace lfd
