#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <json.hpp>

#include "metrics.hpp"
#include "rng.hpp"

using namespace lfd;
namespace fs = std::filesystem;

namespace {

Image constant_image(int size, float r, float g, float b) {
  Image img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      img.px(y, x)[0] = r;
      img.px(y, x)[1] = g;
      img.px(y, x)[2] = b;
    }
  return img;
}

Image random_image(int size, Rng& rng) {
  Image img(size, size);
  for (auto& v : img.rgb) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("psnr examples") {
  Rng rng(31, "psnr", 0);
  const Image a = random_image(16, rng);
  CHECK(std::isinf(psnr(a, a)));

  // uniform a=0, b=0.5 -> mse 0.25 -> ~6.0206 dB
  const Image z = constant_image(16, 0, 0, 0);
  const Image h = constant_image(16, 0.5f, 0.5f, 0.5f);
  CHECK(psnr(z, h) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-9));

  // mse 0.01 -> 20 dB
  const Image d = constant_image(16, 0.1f, 0.1f, 0.1f);
  CHECK(psnr(z, d) == doctest::Approx(20.0).epsilon(1e-6));

  Image wrong(8, 8);
  CHECK_THROWS_AS(psnr(a, wrong), Error);
}

TEST_CASE("psnr decreases monotonically with added noise") {
  Rng rng(32, "noise", 0);
  const Image base = random_image(32, rng);
  for (int seed = 0; seed < 10; ++seed) {
    double last = std::numeric_limits<double>::infinity();
    for (const double sigma : {0.01, 0.05, 0.1}) {
      Rng nrng(33, "noise/sigma", static_cast<std::uint64_t>(seed * 100 + sigma * 1000));
      Image noisy = base;
      for (auto& v : noisy.rgb)
        v = std::clamp(v + static_cast<float>(sigma * nrng.normal()), 0.0f, 1.0f);
      const double p = psnr(base, noisy);
      CHECK(p < last);
      last = p;
    }
  }
}

TEST_CASE("ssim examples") {
  Rng rng(34, "ssim", 0);
  const Image a = random_image(16, rng);
  CHECK(ssim(a, a) == 1.0);  // exact

  // constant 0 vs constant 1: C1/(1+C1)
  const Image z = constant_image(16, 0, 0, 0);
  const Image o = constant_image(16, 1, 1, 1);
  const double c1 = 0.01 * 0.01;
  CHECK(ssim(z, o) == doctest::Approx(c1 / (1 + c1)).epsilon(1e-9));

  // symmetry
  for (int i = 0; i < 5; ++i) {
    const Image x = random_image(16, rng);
    const Image y = random_image(16, rng);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
    const double v = ssim(x, y);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }

  Image small(8, 8);
  CHECK_THROWS_AS(ssim(small, small), Error);
}

TEST_CASE("evaluate_views pairs by index") {
  const std::string gen = (fs::temp_directory_path() / "lfd_eval_gen").string();
  const std::string ref = (fs::temp_directory_path() / "lfd_eval_ref").string();
  fs::remove_all(gen);
  fs::remove_all(ref);
  fs::create_directories(gen);
  fs::create_directories(ref);

  Rng rng(35, "eval", 0);
  for (int i : {0, 3, 7}) {
    const Image img = random_image(16, rng);
    write_ppm(gen + "/view_" + (i < 10 ? std::string("0") : std::string()) + std::to_string(i) +
                  ".ppm",
              img);
    write_ppm(ref + "/view_" + (i < 10 ? std::string("0") : std::string()) + std::to_string(i) +
                  ".ppm",
              img);
  }

  const MetricReport rep = evaluate_views(gen, ref);
  CHECK(rep.views.size() == 3);
  for (const auto& v : rep.views) {
    CHECK(v.psnr_inf);
    CHECK(v.ssim == 1.0);
  }
  CHECK(rep.psnr_all_inf);
  CHECK(rep.mean_ssim == 1.0);
  CHECK(rep.std_ssim == 0.0);

  const nlohmann::json j = nlohmann::json::parse(rep.to_json());
  CHECK(j.at("views").size() == 3);
  CHECK(j.at("views")[0].at("psnr").is_null());
  CHECK(j.at("views")[0].at("psnr_inf").get<bool>());
  CHECK(j.at("mean_ssim").get<double>() == 1.0);

  // single pair: mean is the pair value, std 0
  const std::string gen1 = (fs::temp_directory_path() / "lfd_eval_gen1").string();
  const std::string ref1 = (fs::temp_directory_path() / "lfd_eval_ref1").string();
  fs::remove_all(gen1);
  fs::remove_all(ref1);
  fs::create_directories(gen1);
  fs::create_directories(ref1);
  const Image a = random_image(16, rng);
  const Image b = random_image(16, rng);
  write_ppm(gen1 + "/view_00.ppm", a);
  write_ppm(ref1 + "/view_00.ppm", b);
  const MetricReport rep1 = evaluate_views(gen1, ref1);
  CHECK(rep1.views.size() == 1);
  CHECK(rep1.std_psnr == 0.0);
  CHECK(rep1.std_ssim == 0.0);
  // quantization at the PPM boundary: compare against the files read back
  const Image qa = read_ppm(gen1 + "/view_00.ppm");
  const Image qb = read_ppm(ref1 + "/view_00.ppm");
  CHECK(rep1.mean_psnr == doctest::Approx(psnr(qa, qb)).epsilon(1e-12));

  // missing pair: error mentions the unmatched index
  fs::remove(ref + "/view_07.ppm");
  try {
    evaluate_views(gen, ref);
    FAIL("expected an error for the missing pair");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("7") != std::string::npos);
  }

  fs::remove_all(gen);
  fs::remove_all(ref);
  fs::remove_all(gen1);
  fs::remove_all(ref1);
}

TEST_CASE("image io round trip and resize") {
  Rng rng(36, "io", 0);
  Image img = random_image(17, rng);
  const std::string path = (fs::temp_directory_path() / "lfd_io_test.ppm").string();
  write_ppm(path, img);
  const Image back = read_ppm(path);
  REQUIRE(back.h == 17);
  REQUIRE(back.w == 17);
  for (size_t i = 0; i < img.rgb.size(); ++i)
    CHECK(std::abs(back.rgb[i] - img.rgb[i]) <= 0.5f / 255.0f + 1e-6f);

  // tensor mapping round trip
  const Tensor<float> t = image_to_tensor(back);
  CHECK(t.shape == std::vector<int>{3, 17, 17});
  for (float v : t.v) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  const Image again = tensor_to_image(t);
  for (size_t i = 0; i < back.rgb.size(); ++i) CHECK(again.rgb[i] == doctest::Approx(back.rgb[i]));

  // 2x bilinear upsample of a constant image is constant
  const Image c = constant_image(8, 0.3f, 0.6f, 0.9f);
  const Image up = bilinear_resize(c, 16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      CHECK(up.px(y, x)[0] == doctest::Approx(0.3f));
      CHECK(up.px(y, x)[2] == doctest::Approx(0.9f));
    }
  fs::remove(path);
}
