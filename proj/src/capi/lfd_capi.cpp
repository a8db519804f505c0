#include "lfd/lfd.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dataset.hpp"
#include "sample.hpp"
#include "scenegen.hpp"

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename Fn>
lfd_status guard(Fn&& fn) {
  try {
    fn();
    return LFD_OK;
  } catch (const lfd::Error& e) {
    g_last_error = e.what();
    return static_cast<lfd_status>(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LFD_ERR_INTERNAL;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) lfd::fail(lfd::ErrorCode::io, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<std::uint64_t> parse_u64_csv(const char* csv) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(csv ? csv : "");
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoull(item));
  }
  return out;
}

lfd::SamplerConfig sampler_from_json(const char* text) {
  lfd::SamplerConfig cfg;
  if (!text || !*text) return cfg;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    lfd::fail(lfd::ErrorCode::parse, std::string("sampler json: ") + e.what());
  }
  if (j.contains("kind")) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "ddpm")
      cfg.kind = lfd::SamplerConfig::Kind::ddpm;
    else if (kind == "ddim")
      cfg.kind = lfd::SamplerConfig::Kind::ddim;
    else
      lfd::fail(lfd::ErrorCode::parse, "sampler json: unknown kind " + kind);
  }
  if (j.contains("steps")) cfg.steps = j.at("steps").get<int>();
  if (j.contains("eta")) cfg.eta = j.at("eta").get<double>();
  if (j.contains("guidance")) cfg.guidance_scale = j.at("guidance").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("variance")) {
    const std::string v = j.at("variance").get<std::string>();
    if (v == "beta")
      cfg.variance = lfd::SamplerConfig::Variance::beta;
    else if (v == "beta_tilde")
      cfg.variance = lfd::SamplerConfig::Variance::beta_tilde;
    else
      lfd::fail(lfd::ErrorCode::parse, "sampler json: unknown variance " + v);
  }
  return cfg;
}

lfd::ProgressFn wrap_progress(lfd_progress_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](std::int64_t iter, double loss, double lr, double elapsed) {
    fn(iter, loss, lr, elapsed, user);
  };
}

}  // namespace

extern "C" {

struct lfd_model {
  lfd::LoadedModel loaded;
};

const char* lfd_status_name(lfd_status status) {
  switch (status) {
    case LFD_OK: return "ok";
    case LFD_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case LFD_ERR_IO: return "io";
    case LFD_ERR_PARSE: return "parse";
    case LFD_ERR_CONFIG_MISMATCH: return "config_mismatch";
    case LFD_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* lfd_last_error(void) { return g_last_error.c_str(); }

const char* lfd_version(void) { return "0.1.0"; }

void lfd_string_free(char* s) { delete[] s; }

lfd_status lfd_gen_data(const char* out_dir, int32_t n_scenes, int32_t views_per_scene,
                        int32_t image_size, uint64_t seed) {
  return guard([&] {
    LFD_CHECK(out_dir, "gen_data: out_dir is required");
    lfd::make_dataset(out_dir, n_scenes, views_per_scene, image_size, seed);
  });
}

lfd_status lfd_default_config(const char* conditioning, int32_t image_size, char** json_out) {
  return guard([&] {
    LFD_CHECK(conditioning && json_out, "default_config: null argument");
    const std::string mode = conditioning;
    lfd::RunConfig run;
    run.denoiser.image_size = image_size;
    if (mode == "lightfield") {
      run.denoiser.conditioning = lfd::DenoiserConfig::Conditioning::lightfield;
      run.denoiser.encoding_channels = 12 * run.encoding.octaves;
    } else if (mode == "rt") {
      run.denoiser.conditioning = lfd::DenoiserConfig::Conditioning::rt_baseline;
      run.denoiser.encoding_channels = 12;
    } else if (mode == "refiner") {
      run.denoiser.conditioning = lfd::DenoiserConfig::Conditioning::refiner;
      run.denoiser.encoding_channels = 3;
      run.denoiser.p_uncond = 0.0;
    } else {
      lfd::fail(lfd::ErrorCode::invalid_argument, "unknown conditioning: " + mode);
    }
    run.validate();
    *json_out = dup_string(lfd::run_config_to_json(run));
  });
}

lfd_status lfd_train(const lfd_train_options* options) {
  return guard([&] {
    LFD_CHECK(options, "train: options are required");
    LFD_CHECK(options->dataset_dir && options->out_dir && options->config_json,
              "train: dataset_dir, out_dir and config_json are required");
    const lfd::RunConfig run = lfd::run_config_from_json(options->config_json);
    const std::string resume = options->resume_dir ? options->resume_dir : "";
    const lfd::ProgressFn progress = wrap_progress(options->progress, options->user);
    if (run.denoiser.conditioning == lfd::DenoiserConfig::Conditioning::refiner) {
      LFD_CHECK(options->dataset_hi_dir, "train: refiner needs dataset_hi_dir");
      lfd::train_refiner(run, options->dataset_dir, options->dataset_hi_dir, options->out_dir,
                         resume, progress);
    } else {
      LFD_CHECK(!options->dataset_hi_dir, "train: dataset_hi_dir is for refiner runs");
      lfd::train_main(run, options->dataset_dir, options->out_dir, resume, progress);
    }
  });
}

lfd_status lfd_model_open(const char* checkpoint_dir, int32_t use_ema, lfd_model** out) {
  return guard([&] {
    LFD_CHECK(checkpoint_dir && out, "model_open: null argument");
    auto model = std::make_unique<lfd_model>();
    model->loaded = lfd::load_model(checkpoint_dir, use_ema != 0);
    *out = model.release();
  });
}

void lfd_model_close(lfd_model* model) { delete model; }

lfd_status lfd_model_config(const lfd_model* model, char** json_out) {
  return guard([&] {
    LFD_CHECK(model && json_out, "model_config: null argument");
    *json_out = dup_string(lfd::run_config_to_json(model->loaded.run));
  });
}

lfd_status lfd_sample(const lfd_model* model, const char* source_image_ppm,
                      const char* source_camera_json_file, const char* target_cameras_json_file,
                      const char* sampler_json, const char* out_dir) {
  return guard([&] {
    LFD_CHECK(model && source_image_ppm && source_camera_json_file && target_cameras_json_file &&
                  out_dir,
              "sample: null argument");
    const lfd::Image source = lfd::read_ppm(source_image_ppm);
    lfd::CameraIntrinsics K;
    lfd::CameraPose src_pose;
    lfd::camera_from_json(read_file(source_camera_json_file), K, src_pose);
    const auto targets = lfd::parse_target_cameras(read_file(target_cameras_json_file));
    LFD_CHECK(!targets.empty(), "sample: no target cameras");
    const lfd::SamplerConfig base_cfg = sampler_from_json(sampler_json);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) lfd::fail(lfd::ErrorCode::io, std::string("cannot create ") + out_dir);
    for (size_t i = 0; i < targets.size(); ++i) {
      lfd::SamplerConfig cfg = base_cfg;
      cfg.seed = base_cfg.seed + i;
      const lfd::Image img =
          lfd::sample_view(model->loaded, source, K, src_pose, targets[i].pose, cfg);
      char name[32];
      std::snprintf(name, sizeof(name), "view_%02d.ppm", targets[i].view);
      lfd::write_ppm(std::string(out_dir) + "/" + name, img);
    }
  });
}

lfd_status lfd_refine(const lfd_model* refiner, const char* input_ppm, const char* output_ppm,
                      int32_t steps, uint64_t seed) {
  return guard([&] {
    LFD_CHECK(refiner && input_ppm && output_ppm, "refine: null argument");
    LFD_CHECK(steps >= 1, "refine: steps must be >= 1");
    const lfd::Image low = lfd::read_ppm(input_ppm);
    const lfd::Image out = lfd::refine_image(refiner->loaded, low, steps, seed);
    lfd::write_ppm(output_ppm, out);
  });
}

lfd_status lfd_refine_sweep(const lfd_model* refiner, const char* dataset_lo,
                            const char* dataset_hi, const char* steps_csv, int32_t max_views,
                            uint64_t seed, const char* out_dir, char** report_json_out) {
  return guard([&] {
    LFD_CHECK(refiner && dataset_lo && dataset_hi && steps_csv && out_dir,
              "refine_sweep: null argument");
    std::vector<int> steps;
    for (const std::uint64_t s : parse_u64_csv(steps_csv)) steps.push_back(static_cast<int>(s));
    const std::string report = lfd::refine_sweep(refiner->loaded, dataset_lo, dataset_hi, steps,
                                                 max_views, seed, out_dir);
    if (report_json_out) *report_json_out = dup_string(report);
  });
}

lfd_status lfd_eval(const char* generated_dir, const char* reference_dir, const char* report_path,
                    char** report_json_out) {
  return guard([&] {
    LFD_CHECK(generated_dir && reference_dir, "eval: null argument");
    const lfd::MetricReport report = lfd::evaluate_views(generated_dir, reference_dir);
    const std::string text = report.to_json();
    if (report_path) {
      std::ofstream out(report_path);
      if (!out) lfd::fail(lfd::ErrorCode::io, std::string("cannot write ") + report_path);
      out << text << "\n";
    }
    if (report_json_out) *report_json_out = dup_string(text);
  });
}

lfd_status lfd_encode_dump(const char* source_camera_json_file, const char* target_camera_json_file,
                           int32_t downsample, int32_t octaves, int32_t normalize_dirs,
                           const char* out_dir) {
  return guard([&] {
    LFD_CHECK(source_camera_json_file && out_dir, "encode_dump: null argument");
    lfd::encode_dump(source_camera_json_file,
                     target_camera_json_file ? target_camera_json_file : "", downsample, octaves,
                     normalize_dirs != 0, out_dir);
  });
}

lfd_status lfd_ablate(const char* dataset_dir, const char* config_json, const char* rt_config_json,
                      const char* seeds_csv, int32_t eval_scenes, int32_t source_view,
                      int32_t sampler_steps, double guidance_scale, const char* out_dir,
                      lfd_progress_fn progress, void* user, char** report_json_out) {
  return guard([&] {
    LFD_CHECK(dataset_dir && config_json && out_dir, "ablate: null argument");
    const lfd::RunConfig base = lfd::run_config_from_json(config_json);
    if (rt_config_json && *rt_config_json) {
      const lfd::RunConfig rt = lfd::run_config_from_json(rt_config_json);
      lfd::check_matched_budget(base, rt);
    }
    lfd::AblateOptions opts;
    if (seeds_csv && *seeds_csv) opts.seeds = parse_u64_csv(seeds_csv);
    LFD_CHECK(!opts.seeds.empty(), "ablate: need at least one seed");
    opts.eval_scenes = eval_scenes;
    opts.source_view = source_view;
    opts.sampler.kind = lfd::SamplerConfig::Kind::ddim;
    opts.sampler.steps = sampler_steps;
    opts.sampler.guidance_scale = guidance_scale;
    const std::string report =
        lfd::ablate(base, dataset_dir, opts, out_dir, wrap_progress(progress, user));
    if (report_json_out) *report_json_out = dup_string(report);
  });
}

}  // extern "C"
