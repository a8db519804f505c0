#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "camera.hpp"
#include "image.hpp"
#include "rng.hpp"

namespace lfd {

struct Primitive {
  enum class Kind { sphere, box };
  Kind kind = Kind::sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  // sphere: size.x() is the radius; box: per-axis half extents.
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  Eigen::Vector3d albedo = Eigen::Vector3d::Ones();
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  Eigen::Vector3d light_dir = Eigen::Vector3d(0, 0, 1);  // toward the light, unit

  void validate() const;
};

struct ViewSpec {
  double azimuth = 0;    // radians
  double elevation = 0;  // radians, in (-pi/2, pi/2)
  double radius = 1;
  Eigen::Vector3d look_at = Eigen::Vector3d::Zero();

  void validate() const;
};

struct RenderedView {
  Image image;
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

// Orbit camera: center at look_at + radius (cos e cos a, cos e sin a, sin e),
// world up +z, viewing (+z camera) axis through look_at, right-handed frame.
CameraPose camera_from_orbit(const ViewSpec& view);

// One primary ray per pixel center (the camera module's ray path), nearest
// hit, Lambertian albedo * (max(0, n.l) + 0.1), miss -> background.
RenderedView render(const SceneSpec& scene, const CameraIntrinsics& K, const CameraPose& pose);

// Fixed capture protocol shared by generation and training.
CameraIntrinsics dataset_intrinsics(int image_size);
std::vector<ViewSpec> orbit_views(int count);

// Procedural scene: 1-4 primitives with random placement and colors.
SceneSpec sample_scene(Rng& rng);

// Writes meta.json, scene_NNNN/view_MM.ppm and scene_NNNN/cameras.json.
// Byte-reproducible from (n_scenes, views_per_scene, image_size, seed).
void make_dataset(const std::string& dir, int n_scenes, int views_per_scene, int image_size,
                  std::uint64_t seed);

}  // namespace lfd
