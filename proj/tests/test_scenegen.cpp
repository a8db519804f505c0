#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dataset.hpp"
#include "scenegen.hpp"

using namespace lfd;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  const std::string dir = (fs::temp_directory_path() / ("lfd_test_" + tag)).string();
  fs::remove_all(dir);
  return dir;
}

std::vector<std::string> dir_files(const std::string& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).string());
  std::sort(out.begin(), out.end());
  return out;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("orbit camera examples") {
  ViewSpec v;
  v.azimuth = 0;
  v.elevation = 0;
  v.radius = 2;
  const CameraPose p = camera_from_orbit(v);
  CHECK((p.t - Eigen::Vector3d(2, 0, 0)).cwiseAbs().maxCoeff() <= 1e-12);
  p.validate();

  // look_at projects to the principal point
  const CameraIntrinsics K = dataset_intrinsics(32);
  for (double az : {0.0, 1.1, 2.9, 4.4}) {
    for (double el : {-0.8, 0.15, 0.65}) {
      ViewSpec vs;
      vs.azimuth = az;
      vs.elevation = el;
      vs.radius = 2.0;
      const CameraPose pose = camera_from_orbit(vs);
      const Eigen::Vector2d px = project(K, pose, vs.look_at);
      CHECK(std::abs(px.x() - K.cx) <= 1e-6);
      CHECK(std::abs(px.y() - K.cy) <= 1e-6);
    }
  }

  // antipodal azimuths reflect through look_at
  ViewSpec a;
  a.azimuth = 0.7;
  a.elevation = 0.3;
  a.radius = 2.0;
  a.look_at = Eigen::Vector3d(0.1, -0.2, 0.5);
  ViewSpec b = a;
  b.azimuth = a.azimuth + M_PI;
  const CameraPose pa = camera_from_orbit(a);
  const CameraPose pb = camera_from_orbit(b);
  // reflection through look_at in the horizontal plane: elevation offsets match
  const Eigen::Vector3d da = pa.t - a.look_at;
  const Eigen::Vector3d db = pb.t - a.look_at;
  CHECK(std::abs(da.x() + db.x()) <= 1e-12);
  CHECK(std::abs(da.y() + db.y()) <= 1e-12);
  CHECK(std::abs(da.z() - db.z()) <= 1e-12);

  ViewSpec bad;
  bad.elevation = M_PI / 2;
  bad.radius = 1;
  CHECK_THROWS_AS(camera_from_orbit(bad), Error);
}

TEST_CASE("render: empty scene is the constant background") {
  SceneSpec scene;
  scene.background = Eigen::Vector3d(0.25, 0.5, 0.75);
  const CameraIntrinsics K = dataset_intrinsics(16);
  ViewSpec v;
  v.radius = 2;
  const RenderedView rv = render(scene, K, camera_from_orbit(v));
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      CHECK(rv.image.px(y, x)[0] == 0.25f);
      CHECK(rv.image.px(y, x)[1] == 0.5f);
      CHECK(rv.image.px(y, x)[2] == 0.75f);
    }
}

TEST_CASE("render matches an independent ray-march over the shared ray grid") {
  SceneSpec scene;
  Primitive sphere;
  sphere.kind = Primitive::Kind::sphere;
  sphere.center = Eigen::Vector3d(0.1, -0.05, 0.1);
  sphere.size = Eigen::Vector3d::Constant(0.4);
  sphere.albedo = Eigen::Vector3d(0.9, 0.4, 0.2);
  scene.primitives.push_back(sphere);
  scene.background = Eigen::Vector3d(0.1, 0.1, 0.1);
  scene.light_dir = Eigen::Vector3d(0.3, 0.2, 0.93).normalized();

  const CameraIntrinsics K = dataset_intrinsics(24);
  ViewSpec v;
  v.azimuth = 0.4;
  v.elevation = 0.3;
  v.radius = 2.0;
  const CameraPose pose = camera_from_orbit(v);
  const RenderedView rv = render(scene, K, pose);

  // Same rays as the camera module; same shading arithmetic.
  const LightField rays = build_light_field(K, pose, PixelGrid::for_camera(K, 1), true);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) {
      const double* cell = rays.ray(y, x);
      const Eigen::Vector3d o(cell[0], cell[1], cell[2]);
      const Eigen::Vector3d d(cell[3], cell[4], cell[5]);
      const Eigen::Vector3d oc = o - sphere.center;
      const double b = oc.dot(d);
      const double c = oc.squaredNorm() - 0.4 * 0.4;
      const double disc = b * b - c;
      Eigen::Vector3d expect = scene.background;
      if (disc >= 0 && -b - std::sqrt(disc) > 1e-9) {
        const double t = -b - std::sqrt(disc);
        const Eigen::Vector3d n = (o + t * d - sphere.center) / 0.4;
        expect = sphere.albedo * (std::max(0.0, n.dot(scene.light_dir)) + 0.1);
      }
      for (int ch = 0; ch < 3; ++ch)
        CHECK(std::abs(rv.image.px(y, x)[ch] -
                       static_cast<float>(std::clamp(expect[ch], 0.0, 1.0))) <= 1e-12);
    }
}

TEST_CASE("projected sphere center matches the rendered disk centroid") {
  SceneSpec scene;
  Primitive sphere;
  sphere.kind = Primitive::Kind::sphere;
  sphere.center = Eigen::Vector3d(0.15, 0.1, -0.05);
  sphere.size = Eigen::Vector3d::Constant(0.35);
  sphere.albedo = Eigen::Vector3d(1, 1, 1);
  scene.primitives.push_back(sphere);
  scene.background = Eigen::Vector3d::Zero();
  scene.light_dir = Eigen::Vector3d(0, 0, 1);

  const CameraIntrinsics K = dataset_intrinsics(64);
  for (double az : {0.0, 1.3, 3.7}) {
    ViewSpec v;
    v.azimuth = az;
    v.elevation = 0.35;
    v.radius = 2.0;
    const CameraPose pose = camera_from_orbit(v);
    const RenderedView rv = render(scene, K, pose);

    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (rv.image.px(y, x)[0] > 0.02f) {
          sx += x + 0.5;
          sy += y + 0.5;
          n += 1;
        }
    REQUIRE(n > 30);
    const Eigen::Vector2d proj = project(K, pose, sphere.center);
    CHECK(std::abs(sx / n - proj.x()) <= 1.0);
    CHECK(std::abs(sy / n - proj.y()) <= 1.0);
  }
}

TEST_CASE("dataset generation is byte-identical and loads back") {
  const std::string d1 = temp_dir("ds1");
  const std::string d2 = temp_dir("ds2");
  make_dataset(d1, 3, 12, 16, 99);
  make_dataset(d2, 3, 12, 16, 99);

  const auto files1 = dir_files(d1);
  const auto files2 = dir_files(d2);
  REQUIRE(files1 == files2);
  REQUIRE(!files1.empty());
  for (const auto& f : files1) CHECK(file_bytes(d1 + "/" + f) == file_bytes(d2 + "/" + f));

  const Dataset ds = Dataset::load(d1);
  CHECK(ds.n_scenes() == 3);
  CHECK(ds.views() == 12);
  CHECK(ds.meta().image_size == 16);
  CHECK(ds.meta().seed == 99);
  for (int s = 0; s < 3; ++s) {
    CHECK(ds.scene(s).images.size() == 12);
    for (const CameraPose& p : ds.scene(s).poses) p.validate();
  }

  // cameras.json round-trips through the loader losslessly
  const auto poses = load_scene_cameras(d1 + "/scene_0000/cameras.json", 12);
  const auto views = orbit_views(12);
  for (int m = 0; m < 12; ++m) {
    const CameraPose expect = camera_from_orbit(views[static_cast<size_t>(m)]);
    CHECK((poses[static_cast<size_t>(m)].R - expect.R).cwiseAbs().maxCoeff() == 0.0);
    CHECK((poses[static_cast<size_t>(m)].t - expect.t).cwiseAbs().maxCoeff() == 0.0);
  }

  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("primitive centers stay in frame across all dataset views") {
  const CameraIntrinsics K = dataset_intrinsics(32);
  const auto views = orbit_views(12);
  for (int s = 0; s < 16; ++s) {
    Rng rng(2024, "scenegen/scene", static_cast<std::uint64_t>(s));
    const SceneSpec scene = sample_scene(rng);
    scene.validate();
    for (const auto& view : views) {
      const CameraPose pose = camera_from_orbit(view);
      for (const Primitive& p : scene.primitives) {
        const Eigen::Vector2d px = project(K, pose, p.center);
        CHECK(px.x() >= 0);
        CHECK(px.x() <= 32);
        CHECK(px.y() >= 0);
        CHECK(px.y() <= 32);
      }
    }
  }
}
