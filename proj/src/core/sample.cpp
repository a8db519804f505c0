#include "sample.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "dataset.hpp"
#include "scenegen.hpp"

namespace lfd {

namespace fs = std::filesystem;
using nlohmann::json;

LoadedModel load_model(const std::string& checkpoint_dir, bool use_ema) {
  Checkpoint ck = load_checkpoint(checkpoint_dir);
  LoadedModel lm;
  lm.run = ck.run;
  lm.use_ema = use_ema;
  lm.model = std::make_shared<NvsModelF>(ck.run.denoiser);
  check_manifest(lm.model->params().manifest(), ck.manifest);
  lm.model->params().values() = use_ema ? std::move(ck.ema) : std::move(ck.params);
  return lm;
}

Image sample_view(const LoadedModel& lm, const Image& source, const CameraIntrinsics& K,
                  const CameraPose& source_pose, const CameraPose& target_pose,
                  const SamplerConfig& sampler) {
  const RunConfig& run = lm.run;
  LFD_CHECK(run.denoiser.conditioning != DenoiserConfig::Conditioning::refiner,
            "sample: refiner checkpoints go through `refine`");
  const int size = run.denoiser.image_size;
  LFD_CHECK(source.h == size && source.w == size, "sample: source image size mismatch");
  LFD_CHECK(K.width == size && K.height == size, "sample: camera size mismatch");
  source_pose.validate();
  target_pose.validate();

  const Tensor<float> cond = target_conditioning(run, K, source_pose, target_pose);
  const Tensor<float> src_in = source_input(run, K, source);
  const NvsModelF& model = *lm.model;
  const SourceFeatures<float> feats = model.encode_source(src_in, nullptr);
  const SourceFeatures<float> null_feats = model.null_features();

  const GuidedEpsFn fn = [&](const Tensor<float>& x, int t, bool uncond) {
    return model.predict_eps(x, t, cond, uncond ? null_feats : feats, nullptr);
  };
  const NoiseSchedule sched =
      make_schedule(run.schedule.T, run.schedule.beta_start, run.schedule.beta_end);
  const std::vector<int> shape = {3, size, size};
  const Tensor<float> out = sampler.kind == SamplerConfig::Kind::ddpm
                                ? ddpm_sample(fn, shape, sched, sampler)
                                : ddim_sample(fn, shape, sched, sampler);
  return tensor_to_image(out);
}

Image refine_image(const LoadedModel& refiner, const Image& low, int steps, std::uint64_t seed) {
  const RunConfig& run = refiner.run;
  LFD_CHECK(run.denoiser.conditioning == DenoiserConfig::Conditioning::refiner,
            "refine: checkpoint is not a refiner");
  const int size = run.denoiser.image_size;
  LFD_CHECK(2 * low.h == size && 2 * low.w == size,
            "refine: input must be exactly half the refiner resolution");

  const Tensor<float> cond = image_to_tensor(bilinear_resize(low, size, size));
  const NvsModelF& model = *refiner.model;
  const SourceFeatures<float> empty;
  const GuidedEpsFn fn = [&](const Tensor<float>& x, int t, bool) {
    return model.predict_eps(x, t, cond, empty, nullptr);
  };
  const NoiseSchedule sched =
      make_schedule(run.schedule.T, run.schedule.beta_start, run.schedule.beta_end);
  SamplerConfig cfg;
  cfg.kind = SamplerConfig::Kind::ddim;
  cfg.steps = steps;
  cfg.eta = 0.0;
  cfg.guidance_scale = 1.0;
  cfg.seed = seed;
  return tensor_to_image(ddim_sample(fn, {3, size, size}, sched, cfg));
}

namespace {

int line_of_offset(const std::string& text, size_t byte) {
  int line = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace

std::vector<TargetCamera> parse_target_cameras(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::parse, "target cameras: parse error at line " +
                               std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
  }
  LFD_CHECK(j.is_array(), "target cameras: expected a JSON array");
  std::vector<TargetCamera> out;
  int position = 0;
  for (const auto& cam : j) {
    TargetCamera tc;
    try {
      const auto r = cam.at("R").get<std::vector<double>>();
      const auto t = cam.at("t").get<std::vector<double>>();
      LFD_CHECK(r.size() == 9 && t.size() == 3, "target cameras: malformed entry");
      for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) tc.pose.R(i, k) = r[static_cast<size_t>(3 * i + k)];
      tc.pose.t = Eigen::Vector3d(t[0], t[1], t[2]);
      tc.view = cam.contains("view") ? cam.at("view").get<int>() : position;
    } catch (const json::exception& e) {
      fail(ErrorCode::parse,
           "target cameras: entry " + std::to_string(position) + ": " + e.what());
    }
    tc.pose.validate();
    out.push_back(tc);
    ++position;
  }
  return out;
}

void encode_dump(const std::string& source_camera_json, const std::string& target_camera_json,
                 int downsample, int octaves, bool normalize_dirs, const std::string& out_dir) {
  const auto read_file = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };

  CameraIntrinsics K;
  CameraPose src_pose;
  camera_from_json(read_file(source_camera_json), K, src_pose);
  CameraPose rel = CameraPose::identity();
  if (!target_camera_json.empty()) {
    CameraIntrinsics K_t;
    CameraPose tgt_pose;
    camera_from_json(read_file(target_camera_json), K_t, tgt_pose);
    rel = relative_pose(src_pose, tgt_pose);
  }

  EncodingConfig cfg;
  cfg.octaves = octaves;
  cfg.normalize_dirs = normalize_dirs;
  cfg.downsample = downsample;
  cfg.validate();
  const PixelGrid grid = PixelGrid::for_camera(K, downsample);
  const LightFieldEncoding enc =
      positional_encode(build_light_field(K, rel, grid, normalize_dirs), cfg);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + out_dir);

  std::vector<std::uint8_t> gray(static_cast<size_t>(enc.h) * enc.w);
  char name[32];
  for (int c = 0; c < enc.channels; ++c) {
    for (int v = 0; v < enc.h; ++v)
      for (int u = 0; u < enc.w; ++u)
        gray[static_cast<size_t>(v) * enc.w + u] = quantize_u8(0.5f * (enc.at(c, v, u) + 1.0f));
    std::snprintf(name, sizeof(name), "chan_%03d.pgm", c);
    write_pgm(out_dir + "/" + name, enc.h, enc.w, gray);
  }

  json index = json::parse(encoding_layout_json(cfg));
  index["grid"] = {{"h", grid.h}, {"w", grid.w}, {"s", grid.s}};
  index["source_camera"] = source_camera_json;
  index["target_camera"] =
      target_camera_json.empty() ? json(nullptr) : json(target_camera_json);
  index["value_mapping"] = "u8 = round((v+1)/2 * 255)";
  std::ofstream out(out_dir + "/index.json");
  if (!out) fail(ErrorCode::io, "cannot write index.json in " + out_dir);
  out << index.dump(2) << "\n";
}

void check_matched_budget(const RunConfig& lightfield, const RunConfig& rt) {
  RunConfig rt_expected = lightfield;
  rt_expected.denoiser = make_rt_baseline(lightfield.denoiser);
  const std::string diff = run_config_diff(rt_expected, rt);
  if (!diff.empty())
    fail(ErrorCode::config_mismatch,
         "ablate refused, budgets differ beyond the conditioning mode:\n" + diff);
}

namespace {

struct VariantScore {
  double mean_psnr = 0;
  double mean_ssim = 0;
};

VariantScore eval_holdout(const LoadedModel& lm, const Dataset& ds, const AblateOptions& opts,
                          const std::string& image_dir) {
  const RunConfig& run = lm.run;
  std::error_code ec;
  fs::create_directories(image_dir, ec);
  std::vector<ViewMetric> metrics;
  const int scenes = std::min(opts.eval_scenes, ds.n_scenes());
  LFD_CHECK(scenes > 0, "ablate: no scenes to evaluate");
  LFD_CHECK(!run.holdout_views.empty(), "ablate: run config has no holdout views");
  int counter = 0;
  for (int s = 0; s < scenes; ++s) {
    const SceneData& scene = ds.scene(s);
    const Image& src_img = scene.images[static_cast<size_t>(opts.source_view)];
    const CameraPose& src_pose = scene.poses[static_cast<size_t>(opts.source_view)];
    for (int tv : run.holdout_views) {
      SamplerConfig cfg = opts.sampler;
      cfg.seed = opts.sampler.seed + static_cast<std::uint64_t>(counter);
      const Image gen = sample_view(lm, src_img, ds.meta().intrinsics, src_pose,
                                    scene.poses[static_cast<size_t>(tv)], cfg);
      char name[48];
      std::snprintf(name, sizeof(name), "scene_%04d_view_%02d.ppm", s, tv);
      write_ppm(image_dir + "/" + name, gen);
      ViewMetric m;
      m.view = counter;
      const double p = psnr(gen, scene.images[static_cast<size_t>(tv)]);
      m.psnr_inf = std::isinf(p);
      m.psnr = m.psnr_inf ? 0.0 : p;
      m.ssim = ssim(gen, scene.images[static_cast<size_t>(tv)]);
      metrics.push_back(m);
      ++counter;
    }
  }
  const MetricReport rep = report_from_pairs(metrics);
  return {rep.mean_psnr, rep.mean_ssim};
}

}  // namespace

std::string ablate(const RunConfig& base, const std::string& dataset_dir,
                   const AblateOptions& opts, const std::string& out_dir,
                   const ProgressFn& progress) {
  LFD_CHECK(base.denoiser.conditioning == DenoiserConfig::Conditioning::lightfield,
            "ablate: base config must use light-field conditioning");
  LFD_CHECK(!base.holdout_views.empty(), "ablate: holdout views required for evaluation");
  const Dataset ds = Dataset::load(dataset_dir);

  json seeds_out = json::array();
  int lfd_wins = 0;
  for (const std::uint64_t seed : opts.seeds) {
    RunConfig run_lfd = base;
    run_lfd.seed = seed;
    RunConfig run_rt = run_lfd;
    run_rt.denoiser = make_rt_baseline(run_lfd.denoiser);
    check_matched_budget(run_lfd, run_rt);

    const std::string seed_dir = out_dir + "/seed_" + std::to_string(seed);
    train_main(run_lfd, dataset_dir, seed_dir + "/lightfield", "", progress);
    train_main(run_rt, dataset_dir, seed_dir + "/rt", "", progress);

    const LoadedModel lfd_model = load_model(seed_dir + "/lightfield/final", true);
    const LoadedModel rt_model = load_model(seed_dir + "/rt/final", true);
    const VariantScore lfd_score = eval_holdout(lfd_model, ds, opts, seed_dir + "/lightfield/gen");
    const VariantScore rt_score = eval_holdout(rt_model, ds, opts, seed_dir + "/rt/gen");

    const bool win = lfd_score.mean_psnr >= rt_score.mean_psnr;
    lfd_wins += win ? 1 : 0;
    json row;
    row["seed"] = seed;
    row["iterations"] = base.iterations;
    row["lightfield"] = {{"mean_psnr", lfd_score.mean_psnr}, {"mean_ssim", lfd_score.mean_ssim}};
    row["rt"] = {{"mean_psnr", rt_score.mean_psnr}, {"mean_ssim", rt_score.mean_ssim}};
    row["lightfield_wins_psnr"] = win;
    seeds_out.push_back(row);
  }

  json report;
  report["dataset"] = dataset_dir;
  report["iterations"] = base.iterations;
  report["eval_scenes"] = std::min(opts.eval_scenes, ds.n_scenes());
  report["holdout_views"] = base.holdout_views;
  report["source_view"] = opts.source_view;
  report["sampler_steps"] = opts.sampler.steps;
  report["guidance_scale"] = opts.sampler.guidance_scale;
  report["seeds"] = seeds_out;
  report["lightfield_win_count"] = lfd_wins;
  report["n_seeds"] = opts.seeds.size();
  const std::string text = report.dump(2);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream out(out_dir + "/ablate_report.json");
  if (!out) fail(ErrorCode::io, "cannot write ablate report in " + out_dir);
  out << text << "\n";
  return text;
}

std::string refine_sweep(const LoadedModel& refiner, const std::string& dataset_lo,
                         const std::string& dataset_hi, const std::vector<int>& steps_list,
                         int max_views, std::uint64_t seed, const std::string& out_dir) {
  LFD_CHECK(!steps_list.empty(), "refine sweep: need at least one step count");
  const Dataset lo = Dataset::load(dataset_lo);
  const Dataset hi = Dataset::load(dataset_hi);
  LFD_CHECK(hi.meta().image_size == 2 * lo.meta().image_size,
            "refine sweep: datasets are not a 2x pair");
  LFD_CHECK(hi.n_scenes() == lo.n_scenes() && hi.views() == lo.views(),
            "refine sweep: datasets must pair view for view");

  struct Pair {
    const Image* low;
    const Image* high;
  };
  std::vector<Pair> pairs;
  for (int s = 0; s < hi.n_scenes() && static_cast<int>(pairs.size()) < max_views; ++s)
    for (int v = 0; v < hi.views() && static_cast<int>(pairs.size()) < max_views; ++v)
      pairs.push_back({&lo.scene(s).images[static_cast<size_t>(v)],
                       &hi.scene(s).images[static_cast<size_t>(v)]});
  LFD_CHECK(!pairs.empty(), "refine sweep: no views to evaluate");

  std::error_code ec;
  fs::create_directories(out_dir, ec);

  const int hi_size = hi.meta().image_size;
  double bilinear_psnr = 0, bilinear_ssim = 0;
  for (const Pair& p : pairs) {
    const Image up = bilinear_resize(*p.low, hi_size, hi_size);
    bilinear_psnr += psnr(up, *p.high);
    bilinear_ssim += ssim(up, *p.high);
  }
  bilinear_psnr /= static_cast<double>(pairs.size());
  bilinear_ssim /= static_cast<double>(pairs.size());

  json sweep = json::array();
  for (const int steps : steps_list) {
    char sub[32];
    std::snprintf(sub, sizeof(sub), "steps_%03d", steps);
    const std::string step_dir = out_dir + "/" + sub;
    fs::create_directories(step_dir, ec);
    const auto t0 = std::chrono::steady_clock::now();
    double mean_psnr = 0, mean_ssim = 0;
    for (size_t i = 0; i < pairs.size(); ++i) {
      const Image refined =
          refine_image(refiner, *pairs[i].low, steps, seed + static_cast<std::uint64_t>(i));
      char name[32];
      std::snprintf(name, sizeof(name), "view_%02d.ppm", static_cast<int>(i));
      write_ppm(step_dir + "/" + name, refined);
      mean_psnr += psnr(refined, *pairs[i].high);
      mean_ssim += ssim(refined, *pairs[i].high);
    }
    const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    mean_psnr /= static_cast<double>(pairs.size());
    mean_ssim /= static_cast<double>(pairs.size());
    json row;
    row["steps"] = steps;
    row["mean_psnr"] = mean_psnr;
    row["mean_ssim"] = mean_ssim;
    row["runtime_s"] = runtime;
    sweep.push_back(row);
  }

  json report;
  report["n_views"] = pairs.size();
  report["bilinear"] = {{"mean_psnr", bilinear_psnr}, {"mean_ssim", bilinear_ssim}};
  report["sweep"] = sweep;
  const std::string text = report.dump(2);
  std::ofstream out(out_dir + "/refine_sweep.json");
  if (!out) fail(ErrorCode::io, "cannot write refine_sweep.json in " + out_dir);
  out << text << "\n";
  return text;
}

}  // namespace lfd
