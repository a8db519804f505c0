#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "common.hpp"

namespace lfd {

// Pinhole intrinsics. The induced matrix is K = [[fx,0,cx],[0,fy,cy],[0,0,1]]
// with pixel units throughout.
struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
  Eigen::Matrix3d matrix() const;

  // K^{-1} [x, y, 1]^T without forming the inverse.
  Eigen::Vector3d unproject(double x, double y) const {
    return {(x - cx) / fx, (y - cy) / fy, 1.0};
  }

  // Intrinsics of the same camera rendered at size/s.
  CameraIntrinsics scaled(int s) const;
};

// Camera-to-world transform: R maps camera axes into world axes and t is the
// camera center, so the paper's "camera center o equals the translation
// vector" holds literally. The camera looks along its +z axis.
struct CameraPose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  void validate() const;
  static CameraPose identity() { return {}; }
};

// Pixel lattice after downsampling by s. Indices are 0-based, u = column,
// v = row; the cell (u, v) samples full-resolution point ((u+0.5)s, (v+0.5)s).
struct PixelGrid {
  int h = 0, w = 0, s = 1;

  void validate() const;
  static PixelGrid for_camera(const CameraIntrinsics& K, int s);
};

// Per-pixel ray grid: 6 doubles per cell, origin then direction, pixels in
// row-major (v, u) order. Origin is constant across the grid.
struct LightField {
  int h = 0, w = 0;
  std::vector<double> cells;

  const double* ray(int v, int u) const { return cells.data() + 6 * (static_cast<size_t>(v) * w + u); }
  double* ray(int v, int u) { return cells.data() + 6 * (static_cast<size_t>(v) * w + u); }
};

// Direction of the ray through pixel (u, v): R * K^{-1} * [x, y, 1]^T with
// (x, y) the pixel-center position at full resolution. Unit-normalized when
// `normalize` is set.
Eigen::Vector3d ray_direction(const CameraIntrinsics& K, const CameraPose& pose_rel, int u, int v,
                              const PixelGrid& grid, bool normalize = true);

// Target geometry expressed in the source camera frame:
// R_rel = Rs^T Rt, t_rel = Rs^T (Tt - Ts).
CameraPose relative_pose(const CameraPose& source, const CameraPose& target);

LightField build_light_field(const CameraIntrinsics& K, const CameraPose& pose_rel,
                             const PixelGrid& grid, bool normalize = true);

// Projects a world point through (K, pose); fails on non-positive depth.
Eigen::Vector2d project(const CameraIntrinsics& K, const CameraPose& pose,
                        const Eigen::Vector3d& world_point);

// JSON metadata: {"R":[9 row-major], "t":[3], "fx","fy","cx","cy","width","height"}.
std::string camera_to_json(const CameraIntrinsics& K, const CameraPose& pose);
void camera_from_json(const std::string& json_text, CameraIntrinsics& K, CameraPose& pose);

}  // namespace lfd
