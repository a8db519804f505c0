#include "camera.hpp"

#include <cmath>
#include <json.hpp>
#include <sstream>

namespace lfd {

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

void CameraIntrinsics::validate() const {
  LFD_CHECK(fx > 0 && fy > 0, "intrinsics: focal lengths must be positive");
  LFD_CHECK(width > 0 && height > 0, "intrinsics: image size must be positive");
  LFD_CHECK(std::isfinite(cx) && std::isfinite(cy), "intrinsics: principal point must be finite");
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = fx;
  K(1, 1) = fy;
  K(0, 2) = cx;
  K(1, 2) = cy;
  return K;
}

CameraIntrinsics CameraIntrinsics::scaled(int s) const {
  CameraIntrinsics out = *this;
  out.fx = fx / s;
  out.fy = fy / s;
  out.cx = cx / s;
  out.cy = cy / s;
  out.width = width / s;
  out.height = height / s;
  return out;
}

void CameraPose::validate() const {
  const Eigen::Matrix3d gram = R.transpose() * R - Eigen::Matrix3d::Identity();
  LFD_CHECK(gram.cwiseAbs().maxCoeff() <= 1e-9, "pose: R is not orthonormal");
  LFD_CHECK(std::abs(R.determinant() - 1.0) <= 1e-9, "pose: det(R) must be 1");
  LFD_CHECK(t.allFinite(), "pose: translation must be finite");
}

void PixelGrid::validate() const {
  LFD_CHECK(h > 0 && w > 0, "grid: size must be positive");
  LFD_CHECK(s > 0, "grid: downsample factor must be positive");
}

PixelGrid PixelGrid::for_camera(const CameraIntrinsics& K, int s) {
  LFD_CHECK(s > 0, "grid: downsample factor must be positive");
  LFD_CHECK(K.height % s == 0 && K.width % s == 0, "grid: downsample factor must divide image size");
  return {K.height / s, K.width / s, s};
}

Eigen::Vector3d ray_direction(const CameraIntrinsics& K, const CameraPose& pose_rel, int u, int v,
                              const PixelGrid& grid, bool normalize) {
  LFD_CHECK(u >= 0 && u < grid.w && v >= 0 && v < grid.h, "ray_direction: pixel index out of bounds");
  const double x = (u + 0.5) * grid.s;
  const double y = (v + 0.5) * grid.s;
  Eigen::Vector3d d = pose_rel.R * K.unproject(x, y);
  if (normalize) d.normalize();
  return d;
}

CameraPose relative_pose(const CameraPose& source, const CameraPose& target) {
  CameraPose rel;
  rel.R = source.R.transpose() * target.R;
  rel.t = source.R.transpose() * (target.t - source.t);
  return rel;
}

LightField build_light_field(const CameraIntrinsics& K, const CameraPose& pose_rel,
                             const PixelGrid& grid, bool normalize) {
  grid.validate();
  LightField lf;
  lf.h = grid.h;
  lf.w = grid.w;
  lf.cells.resize(static_cast<size_t>(grid.h) * grid.w * 6);
  for (int v = 0; v < grid.h; ++v) {
    for (int u = 0; u < grid.w; ++u) {
      double* cell = lf.ray(v, u);
      cell[0] = pose_rel.t.x();
      cell[1] = pose_rel.t.y();
      cell[2] = pose_rel.t.z();
      const Eigen::Vector3d d = ray_direction(K, pose_rel, u, v, grid, normalize);
      cell[3] = d.x();
      cell[4] = d.y();
      cell[5] = d.z();
    }
  }
  return lf;
}

Eigen::Vector2d project(const CameraIntrinsics& K, const CameraPose& pose,
                        const Eigen::Vector3d& world_point) {
  const Eigen::Vector3d p_cam = pose.R.transpose() * (world_point - pose.t);
  LFD_CHECK(p_cam.z() > 0, "project: point is behind the camera");
  return {K.fx * p_cam.x() / p_cam.z() + K.cx, K.fy * p_cam.y() / p_cam.z() + K.cy};
}

std::string camera_to_json(const CameraIntrinsics& K, const CameraPose& pose) {
  nlohmann::json j;
  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r[static_cast<size_t>(3 * i + k)] = pose.R(i, k);
  j["R"] = r;
  j["t"] = std::vector<double>{pose.t.x(), pose.t.y(), pose.t.z()};
  j["fx"] = K.fx;
  j["fy"] = K.fy;
  j["cx"] = K.cx;
  j["cy"] = K.cy;
  j["width"] = K.width;
  j["height"] = K.height;
  return j.dump(2);
}

void camera_from_json(const std::string& json_text, CameraIntrinsics& K, CameraPose& pose) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::parse, std::string("camera json: ") + e.what());
  }
  try {
    const auto r = j.at("R").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    LFD_CHECK(r.size() == 9, "camera json: R must have 9 entries");
    LFD_CHECK(t.size() == 3, "camera json: t must have 3 entries");
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) pose.R(i, k) = r[static_cast<size_t>(3 * i + k)];
    pose.t = Eigen::Vector3d(t[0], t[1], t[2]);
    K.fx = j.at("fx").get<double>();
    K.fy = j.at("fy").get<double>();
    K.cx = j.at("cx").get<double>();
    K.cy = j.at("cy").get<double>();
    K.width = j.at("width").get<int>();
    K.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("camera json: ") + e.what());
  }
  K.validate();
  pose.validate();
}

}  // namespace lfd
