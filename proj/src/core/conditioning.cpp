#include "conditioning.hpp"

#include "nn.hpp"

namespace lfd {

Tensor<float> encoding_to_tensor(const LightFieldEncoding& enc) {
  Tensor<float> t;
  t.shape = {enc.channels, enc.h, enc.w};
  t.v = enc.values;
  return t;
}

Tensor<float> rt_conditioning(const CameraPose& rel, int h, int w) {
  Tensor<float> t({12, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) {
      const float v = static_cast<float>(rel.R(i, k));
      std::fill_n(t.v.begin() + static_cast<size_t>(3 * i + k) * plane, plane, v);
    }
  for (int i = 0; i < 3; ++i) {
    const float v = static_cast<float>(rel.t[i]);
    std::fill_n(t.v.begin() + static_cast<size_t>(9 + i) * plane, plane, v);
  }
  return t;
}

Tensor<float> target_conditioning(const RunConfig& run, const CameraIntrinsics& K,
                                  const CameraPose& source, const CameraPose& target) {
  const CameraPose rel = relative_pose(source, target);
  if (run.denoiser.conditioning == DenoiserConfig::Conditioning::rt_baseline)
    return rt_conditioning(rel, run.denoiser.image_size, run.denoiser.image_size);
  LFD_CHECK(run.denoiser.conditioning == DenoiserConfig::Conditioning::lightfield,
            "target_conditioning: refiner models take image conditioning");
  const PixelGrid grid = PixelGrid::for_camera(K, run.encoding.downsample);
  const LightField lf = build_light_field(K, rel, grid, run.encoding.normalize_dirs);
  return encoding_to_tensor(positional_encode(lf, run.encoding));
}

Tensor<float> source_input(const RunConfig& run, const CameraIntrinsics& K, const Image& source) {
  const Tensor<float> img = image_to_tensor(source);
  return concat_channels(img, target_conditioning(run, K, CameraPose::identity(),
                                                  CameraPose::identity()));
}

}  // namespace lfd
