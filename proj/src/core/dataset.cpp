#include "dataset.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace lfd {

std::string scene_dir_name(int scene) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d", scene);
  return buf;
}

std::string view_file_name(int view) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%02d.ppm", view);
  return buf;
}

std::vector<CameraPose> load_scene_cameras(const std::string& path, int expected_views) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::parse, path + ": " + e.what());
  }
  LFD_CHECK(j.is_array(), path + ": expected an array of cameras");
  std::vector<CameraPose> poses(static_cast<size_t>(expected_views));
  std::vector<bool> seen(static_cast<size_t>(expected_views), false);
  for (const auto& cam : j) {
    const int view = cam.at("view").get<int>();
    LFD_CHECK(view >= 0 && view < expected_views, path + ": view index out of range");
    const auto r = cam.at("R").get<std::vector<double>>();
    const auto t = cam.at("t").get<std::vector<double>>();
    LFD_CHECK(r.size() == 9 && t.size() == 3, path + ": malformed camera entry");
    CameraPose pose;
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) pose.R(i, k) = r[static_cast<size_t>(3 * i + k)];
    pose.t = Eigen::Vector3d(t[0], t[1], t[2]);
    pose.validate();
    poses[static_cast<size_t>(view)] = pose;
    seen[static_cast<size_t>(view)] = true;
  }
  for (int v = 0; v < expected_views; ++v)
    LFD_CHECK(seen[static_cast<size_t>(v)], path + ": missing view " + std::to_string(v));
  return poses;
}

Dataset Dataset::load(const std::string& dir) {
  Dataset ds;
  ds.dir_ = dir;
  std::ifstream meta_in(dir + "/meta.json");
  if (!meta_in) fail(ErrorCode::io, "cannot open " + dir + "/meta.json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::parse, dir + "/meta.json: " + e.what());
  }
  ds.meta_.n_scenes = meta.at("n_scenes").get<int>();
  ds.meta_.views_per_scene = meta.at("views_per_scene").get<int>();
  ds.meta_.image_size = meta.at("image_size").get<int>();
  ds.meta_.seed = meta.at("seed").get<std::uint64_t>();
  const auto& k = meta.at("intrinsics");
  ds.meta_.intrinsics.fx = k.at("fx").get<double>();
  ds.meta_.intrinsics.fy = k.at("fy").get<double>();
  ds.meta_.intrinsics.cx = k.at("cx").get<double>();
  ds.meta_.intrinsics.cy = k.at("cy").get<double>();
  ds.meta_.intrinsics.width = k.at("width").get<int>();
  ds.meta_.intrinsics.height = k.at("height").get<int>();
  ds.meta_.intrinsics.validate();

  ds.scenes_.resize(static_cast<size_t>(ds.meta_.n_scenes));
  for (int s = 0; s < ds.meta_.n_scenes; ++s) {
    const std::string scene_dir = dir + "/" + scene_dir_name(s);
    SceneData& scene = ds.scenes_[static_cast<size_t>(s)];
    scene.poses = load_scene_cameras(scene_dir + "/cameras.json", ds.meta_.views_per_scene);
    scene.images.reserve(static_cast<size_t>(ds.meta_.views_per_scene));
    for (int v = 0; v < ds.meta_.views_per_scene; ++v) {
      Image img = read_ppm(scene_dir + "/" + view_file_name(v));
      LFD_CHECK(img.h == ds.meta_.image_size && img.w == ds.meta_.image_size,
                scene_dir + ": view size does not match meta.json");
      scene.images.push_back(std::move(img));
    }
  }
  return ds;
}

}  // namespace lfd
