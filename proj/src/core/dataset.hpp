#pragma once

#include <string>
#include <vector>

#include "camera.hpp"
#include "image.hpp"

namespace lfd {

struct DatasetMeta {
  int n_scenes = 0, views_per_scene = 0, image_size = 0;
  std::uint64_t seed = 0;
  CameraIntrinsics intrinsics;
};

struct SceneData {
  std::vector<Image> images;
  std::vector<CameraPose> poses;
};

// In-memory posed multi-view dataset (scenegen layout).
class Dataset {
 public:
  static Dataset load(const std::string& dir);

  const DatasetMeta& meta() const { return meta_; }
  int n_scenes() const { return meta_.n_scenes; }
  int views() const { return meta_.views_per_scene; }
  const SceneData& scene(int i) const { return scenes_[static_cast<size_t>(i)]; }
  const std::string& dir() const { return dir_; }

 private:
  DatasetMeta meta_;
  std::vector<SceneData> scenes_;
  std::string dir_;
};

std::string scene_dir_name(int scene);
std::string view_file_name(int view);

// Parses one camera list file ([{view, R, t}, ...]); validates poses.
std::vector<CameraPose> load_scene_cameras(const std::string& path, int expected_views);

}  // namespace lfd
