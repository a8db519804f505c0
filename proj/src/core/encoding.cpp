#include "encoding.hpp"

#include <cmath>
#include <json.hpp>

namespace lfd {

Tensor<double> positional_encode_d(const LightField& lf, const EncodingConfig& cfg) {
  cfg.validate();
  LFD_CHECK(lf.h > 0 && lf.w > 0, "encode: empty light field");
  const int K = cfg.octaves;
  Tensor<double> out({12 * K, lf.h, lf.w});
  const size_t plane = static_cast<size_t>(lf.h) * lf.w;
  for (int v = 0; v < lf.h; ++v) {
    for (int u = 0; u < lf.w; ++u) {
      const double* cell = lf.ray(v, u);
      const size_t px = static_cast<size_t>(v) * lf.w + u;
      for (int c = 0; c < 6; ++c) {
        double scaled = M_PI * cell[c];
        for (int k = 0; k < K; ++k) {
          const size_t ch = static_cast<size_t>(c) * 2 * K + 2 * static_cast<size_t>(k);
          out.v[ch * plane + px] = std::sin(scaled);
          out.v[(ch + 1) * plane + px] = std::cos(scaled);
          scaled *= 2.0;
        }
      }
    }
  }
  return out;
}

LightFieldEncoding positional_encode(const LightField& lf, const EncodingConfig& cfg) {
  const Tensor<double> d = positional_encode_d(lf, cfg);
  LightFieldEncoding enc;
  enc.h = lf.h;
  enc.w = lf.w;
  enc.channels = cfg.channels();
  enc.values.resize(d.v.size());
  for (size_t i = 0; i < d.v.size(); ++i) enc.values[i] = static_cast<float>(d.v[i]);
  return enc;
}

std::pair<LightFieldEncoding, LightFieldEncoding> encode_view_pair(
    const CameraIntrinsics& K, const CameraPose& source_pose, const CameraPose& target_pose,
    const PixelGrid& grid, const EncodingConfig& cfg) {
  source_pose.validate();
  target_pose.validate();
  const LightField source_lf = build_light_field(K, CameraPose::identity(), grid, cfg.normalize_dirs);
  const CameraPose rel = relative_pose(source_pose, target_pose);
  const LightField target_lf = build_light_field(K, rel, grid, cfg.normalize_dirs);
  return {positional_encode(source_lf, cfg), positional_encode(target_lf, cfg)};
}

std::string encoding_layout_json(const EncodingConfig& cfg) {
  static const char* kComponents[6] = {"origin_x", "origin_y", "origin_z",
                                       "dir_x", "dir_y", "dir_z"};
  nlohmann::json channels = nlohmann::json::array();
  for (int c = 0; c < 6; ++c) {
    for (int k = 0; k < cfg.octaves; ++k) {
      for (int f = 0; f < 2; ++f) {
        nlohmann::json e;
        e["channel"] = c * 2 * cfg.octaves + 2 * k + f;
        e["component"] = kComponents[c];
        e["octave"] = k;
        e["function"] = f == 0 ? "sin" : "cos";
        channels.push_back(e);
      }
    }
  }
  nlohmann::json j;
  j["octaves"] = cfg.octaves;
  j["normalize_dirs"] = cfg.normalize_dirs;
  j["downsample"] = cfg.downsample;
  j["channel_count"] = cfg.channels();
  j["channels"] = channels;
  return j.dump(2);
}

}  // namespace lfd
