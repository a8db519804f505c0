#include "scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

namespace lfd {

namespace fs = std::filesystem;

void SceneSpec::validate() const {
  for (const Primitive& p : primitives) {
    LFD_CHECK(p.size.minCoeff() > 0, "scene: primitive sizes must be positive");
    LFD_CHECK(p.albedo.minCoeff() >= 0 && p.albedo.maxCoeff() <= 1, "scene: albedo out of [0,1]");
  }
  LFD_CHECK(background.minCoeff() >= 0 && background.maxCoeff() <= 1,
            "scene: background out of [0,1]");
  LFD_CHECK(std::abs(light_dir.norm() - 1.0) <= 1e-9, "scene: light_dir must be unit");
}

void ViewSpec::validate() const {
  LFD_CHECK(radius > 0, "view: radius must be positive");
  LFD_CHECK(std::abs(elevation) < M_PI / 2, "view: elevation must be inside (-pi/2, pi/2)");
}

CameraPose camera_from_orbit(const ViewSpec& view) {
  view.validate();
  const double ce = std::cos(view.elevation);
  const Eigen::Vector3d offset(ce * std::cos(view.azimuth), ce * std::sin(view.azimuth),
                               std::sin(view.elevation));
  const Eigen::Vector3d center = view.look_at + view.radius * offset;
  const Eigen::Vector3d forward = (view.look_at - center).normalized();
  const Eigen::Vector3d up(0, 0, 1);
  const Eigen::Vector3d right_raw = forward.cross(up);
  LFD_CHECK(right_raw.norm() > 1e-9, "orbit: viewing axis aligned with world up");
  const Eigen::Vector3d right = right_raw.normalized();
  const Eigen::Vector3d down = forward.cross(right);  // image y grows downward
  CameraPose pose;
  pose.R.col(0) = right;
  pose.R.col(1) = down;
  pose.R.col(2) = forward;
  pose.t = center;
  return pose;
}

namespace {

constexpr double kRayMin = 1e-9;

bool hit_sphere(const Primitive& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                double& t_hit) {
  const Eigen::Vector3d oc = o - p.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - p.size.x() * p.size.x();
  const double disc = b * b - c;
  if (disc < 0) return false;
  const double s = std::sqrt(disc);
  double t = -b - s;
  if (t <= kRayMin) t = -b + s;
  if (t <= kRayMin) return false;
  t_hit = t;
  return true;
}

bool hit_box(const Primitive& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
             double& t_hit) {
  double tnear = -1e30, tfar = 1e30;
  for (int a = 0; a < 3; ++a) {
    const double lo = p.center[a] - p.size[a];
    const double hi = p.center[a] + p.size[a];
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo || o[a] > hi) return false;
      continue;
    }
    double t0 = (lo - o[a]) / d[a];
    double t1 = (hi - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    tnear = std::max(tnear, t0);
    tfar = std::min(tfar, t1);
    if (tnear > tfar) return false;
  }
  const double t = tnear > kRayMin ? tnear : tfar;
  if (t <= kRayMin) return false;
  t_hit = t;
  return true;
}

Eigen::Vector3d surface_normal(const Primitive& p, const Eigen::Vector3d& point) {
  if (p.kind == Primitive::Kind::sphere) return (point - p.center) / p.size.x();
  const Eigen::Vector3d local = point - p.center;
  int axis = 0;
  double best = -1;
  for (int a = 0; a < 3; ++a) {
    const double r = std::abs(local[a]) / p.size[a];
    if (r > best) {
      best = r;
      axis = a;
    }
  }
  Eigen::Vector3d n = Eigen::Vector3d::Zero();
  n[axis] = local[axis] >= 0 ? 1.0 : -1.0;
  return n;
}

}  // namespace

RenderedView render(const SceneSpec& scene, const CameraIntrinsics& K, const CameraPose& pose) {
  scene.validate();
  K.validate();
  pose.validate();
  const PixelGrid grid = PixelGrid::for_camera(K, 1);
  const LightField rays = build_light_field(K, pose, grid, true);

  RenderedView out;
  out.intrinsics = K;
  out.pose = pose;
  out.image = Image(grid.h, grid.w);
  for (int v = 0; v < grid.h; ++v) {
    for (int u = 0; u < grid.w; ++u) {
      const double* cell = rays.ray(v, u);
      const Eigen::Vector3d o(cell[0], cell[1], cell[2]);
      const Eigen::Vector3d d(cell[3], cell[4], cell[5]);
      double best_t = 1e30;
      const Primitive* best = nullptr;
      for (const Primitive& p : scene.primitives) {
        double t;
        const bool hit =
            p.kind == Primitive::Kind::sphere ? hit_sphere(p, o, d, t) : hit_box(p, o, d, t);
        if (hit && t < best_t) {
          best_t = t;
          best = &p;
        }
      }
      Eigen::Vector3d rgb = scene.background;
      if (best) {
        const Eigen::Vector3d point = o + best_t * d;
        const Eigen::Vector3d n = surface_normal(*best, point);
        const double diffuse = std::max(0.0, n.dot(scene.light_dir));
        rgb = best->albedo * (diffuse + 0.1);
      }
      float* px = out.image.px(v, u);
      for (int c = 0; c < 3; ++c)
        px[c] = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
    }
  }
  return out;
}

CameraIntrinsics dataset_intrinsics(int image_size) {
  CameraIntrinsics K;
  K.fx = K.fy = 1.1 * image_size;
  K.cx = K.cy = image_size / 2.0;
  K.width = K.height = image_size;
  return K;
}

std::vector<ViewSpec> orbit_views(int count) {
  static const double kElevations[3] = {0.15, 0.40, 0.65};
  std::vector<ViewSpec> views(static_cast<size_t>(count));
  for (int j = 0; j < count; ++j) {
    ViewSpec& v = views[static_cast<size_t>(j)];
    v.azimuth = 2.0 * M_PI * j / count;
    v.elevation = kElevations[j % 3];
    v.radius = 2.0;
    v.look_at = Eigen::Vector3d::Zero();
  }
  return views;
}

SceneSpec sample_scene(Rng& rng) {
  SceneSpec scene;
  const int n = 1 + static_cast<int>(rng.below(4));
  scene.primitives.resize(static_cast<size_t>(n));
  for (Primitive& p : scene.primitives) {
    p.kind = rng.below(2) == 0 ? Primitive::Kind::sphere : Primitive::Kind::box;
    for (int a = 0; a < 3; ++a) p.center[a] = -0.30 + 0.6 * rng.uniform();
    if (p.kind == Primitive::Kind::sphere) {
      p.size.setConstant(0.18 + 0.24 * rng.uniform());
    } else {
      for (int a = 0; a < 3; ++a) p.size[a] = 0.15 + 0.20 * rng.uniform();
    }
    for (int a = 0; a < 3; ++a) p.albedo[a] = 0.2 + 0.8 * rng.uniform();
  }
  for (int a = 0; a < 3; ++a) scene.background[a] = 0.05 + 0.15 * rng.uniform();
  const double az = 2.0 * M_PI * rng.uniform();
  const double el = 0.3 + 0.9 * rng.uniform();
  scene.light_dir =
      Eigen::Vector3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  return scene;
}

void make_dataset(const std::string& dir, int n_scenes, int views_per_scene, int image_size,
                  std::uint64_t seed) {
  LFD_CHECK(n_scenes >= 1 && views_per_scene >= 1 && image_size >= 1, "dataset: sizes must be >= 1");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + dir + ": " + ec.message());

  const CameraIntrinsics K = dataset_intrinsics(image_size);
  const std::vector<ViewSpec> views = orbit_views(views_per_scene);

  nlohmann::json meta;
  meta["n_scenes"] = n_scenes;
  meta["views_per_scene"] = views_per_scene;
  meta["image_size"] = image_size;
  meta["seed"] = seed;
  meta["intrinsics"] = {{"fx", K.fx},         {"fy", K.fy},
                        {"cx", K.cx},         {"cy", K.cy},
                        {"width", K.width},   {"height", K.height}};
  {
    std::ofstream out(dir + "/meta.json");
    if (!out) fail(ErrorCode::io, "cannot write meta.json in " + dir);
    out << meta.dump(2) << "\n";
  }

  char name[32];
  for (int s = 0; s < n_scenes; ++s) {
    Rng rng(seed, "scenegen/scene", static_cast<std::uint64_t>(s));
    const SceneSpec scene = sample_scene(rng);
    std::snprintf(name, sizeof(name), "scene_%04d", s);
    const std::string scene_dir = dir + "/" + name;
    fs::create_directories(scene_dir, ec);
    if (ec) fail(ErrorCode::io, "cannot create " + scene_dir);

    nlohmann::json cams = nlohmann::json::array();
    for (int m = 0; m < views_per_scene; ++m) {
      const CameraPose pose = camera_from_orbit(views[static_cast<size_t>(m)]);
      const RenderedView rv = render(scene, K, pose);
      std::snprintf(name, sizeof(name), "view_%02d.ppm", m);
      write_ppm(scene_dir + "/" + name, rv.image);

      nlohmann::json cam;
      cam["view"] = m;
      std::vector<double> r(9);
      for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) r[static_cast<size_t>(3 * i + k)] = pose.R(i, k);
      cam["R"] = r;
      cam["t"] = std::vector<double>{pose.t.x(), pose.t.y(), pose.t.z()};
      cams.push_back(cam);
    }
    std::ofstream out(scene_dir + "/cameras.json");
    if (!out) fail(ErrorCode::io, "cannot write cameras.json in " + scene_dir);
    out << cams.dump(2) << "\n";
  }
}

}  // namespace lfd
