// lfd: dataset generation, training, sampling, refinement and evaluation for
// light-field-conditioned diffusion, driven entirely through the C API.

#include <CLI11.hpp>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "lfd/lfd.h"

namespace {

int g_verbosity = 1;  // 0 quiet, 1 info, 2 debug (env LFD_LOG)

void read_verbosity() {
  const char* env = std::getenv("LFD_LOG");
  if (!env) return;
  const std::string v = env;
  if (v == "quiet" || v == "0")
    g_verbosity = 0;
  else if (v == "debug" || v == "2")
    g_verbosity = 2;
  else
    g_verbosity = 1;
}

[[noreturn]] void die(lfd_status status) {
  nlohmann::json err;
  err["error"] = {{"code", lfd_status_name(status)}, {"message", lfd_last_error()}};
  std::cerr << err.dump() << std::endl;
  std::exit(status == LFD_OK ? 1 : static_cast<int>(status));
}

void check(lfd_status status) {
  if (status != LFD_OK) die(status);
}

std::string take_string(char* s) {
  std::string out = s ? s : "";
  lfd_string_free(s);
  return out;
}

void progress_cb(int64_t iter, double loss, double lr, double elapsed_s, void*) {
  if (g_verbosity < 1) return;
  std::printf("iter %lld  loss %.6f  lr %g  elapsed %.1fs\n", static_cast<long long>(iter), loss,
              lr, elapsed_s);
  std::fflush(stdout);
}

struct ConfigFlags {
  std::string config_file;
  std::string conditioning = "lightfield";
  int image_size = 32;
  std::vector<std::pair<std::string, std::string>> overrides;  // json-pointer -> raw value

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "run config JSON file");
    cmd->add_option("--conditioning", conditioning, "lightfield | rt (default config only)");
    cmd->add_option("--size", image_size, "image size for the default config");
    const auto add = [this, cmd](const std::string& flag, const std::string& pointer,
                                 const std::string& help) {
      cmd->add_option_function<std::string>(
             flag,
             [this, pointer](const std::string& v) { overrides.emplace_back(pointer, v); }, help)
          ->expected(1);
    };
    add("--iterations", "/iterations", "training iterations");
    add("--batch-size", "/batch_size", "batch size");
    add("--seed", "/seed", "run seed");
    add("--lr", "/optimizer/lr", "learning rate");
    add("--weight-decay", "/optimizer/weight_decay", "decoupled weight decay");
    add("--ema-decay", "/ema_decay", "EMA decay");
    add("--threads", "/threads", "worker threads");
    add("--checkpoint-every", "/checkpoint_every", "checkpoint cadence (0: final only)");
    add("--log-every", "/log_every", "loss log cadence");
    add("--p-uncond", "/denoiser/p_uncond", "conditioning dropout probability");
    add("--base-channels", "/denoiser/base_channels", "U-Net base channels");
    add("--octaves", "/encoding/octaves", "encoding octaves");
    add("--holdout", "/holdout_views", "held-out view indices, e.g. [3,7,11]");
  }

  std::string resolve(const std::string& default_conditioning) const {
    nlohmann::json cfg;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) {
        std::cerr << R"({"error":{"code":"io","message":"cannot open )" << config_file
                  << R"("}})" << std::endl;
        std::exit(LFD_ERR_IO);
      }
      cfg = nlohmann::json::parse(in, nullptr, false);
      if (cfg.is_discarded()) {
        std::cerr << R"({"error":{"code":"parse","message":"bad JSON in )" << config_file
                  << R"("}})" << std::endl;
        std::exit(LFD_ERR_PARSE);
      }
    } else {
      const std::string mode =
          default_conditioning.empty() ? conditioning : default_conditioning;
      char* text = nullptr;
      check(lfd_default_config(mode.c_str(), image_size, &text));
      cfg = nlohmann::json::parse(take_string(text));
    }
    for (const auto& [pointer, raw] : overrides) {
      nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
      if (value.is_discarded()) value = raw;  // plain strings
      cfg[nlohmann::json::json_pointer(pointer)] = value;
    }
    // Octave changes imply the conditioning channel count.
    if (cfg["denoiser"]["conditioning"] == "lightfield")
      cfg["denoiser"]["encoding_channels"] = 12 * cfg["encoding"]["octaves"].get<int>();
    return cfg.dump(2);
  }
};

}  // namespace

int main(int argc, char** argv) {
  read_verbosity();
  CLI::App app{"light-field diffusion toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a synthetic multi-view dataset");
  std::string gen_out;
  int gen_scenes = 64, gen_views = 12, gen_size = 32;
  std::uint64_t gen_seed = 7;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--scenes", gen_scenes, "number of scenes");
  gen->add_option("--views", gen_views, "views per scene");
  gen->add_option("--size", gen_size, "image size in pixels");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->callback([&] {
    check(lfd_gen_data(gen_out.c_str(), gen_scenes, gen_views, gen_size, gen_seed));
    std::printf("wrote %d scenes x %d views at %dpx to %s\n", gen_scenes, gen_views, gen_size,
                gen_out.c_str());
  });

  // train
  auto* train = app.add_subcommand("train", "train the conditional denoiser");
  std::string train_dataset, train_out, train_resume;
  ConfigFlags train_cfg;
  train->add_option("--dataset", train_dataset, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", train_resume, "checkpoint directory to resume from");
  train_cfg.attach(train);
  train->callback([&] {
    const std::string cfg = train_cfg.resolve("");
    lfd_train_options opts{};
    opts.dataset_dir = train_dataset.c_str();
    opts.out_dir = train_out.c_str();
    opts.config_json = cfg.c_str();
    opts.resume_dir = train_resume.empty() ? nullptr : train_resume.c_str();
    opts.progress = progress_cb;
    check(lfd_train(&opts));
    std::printf("final checkpoint: %s/final\n", train_out.c_str());
  });

  // train-refiner
  auto* trainr = app.add_subcommand("train-refiner", "train the 2x super-resolution refiner");
  std::string trainr_lo, trainr_hi, trainr_out, trainr_resume;
  ConfigFlags trainr_cfg;
  trainr->add_option("--dataset-lo", trainr_lo, "low-res dataset directory")->required();
  trainr->add_option("--dataset-hi", trainr_hi, "2x dataset directory")->required();
  trainr->add_option("--out", trainr_out, "output directory")->required();
  trainr->add_option("--resume", trainr_resume, "checkpoint directory to resume from");
  trainr_cfg.attach(trainr);
  trainr->callback([&] {
    const std::string cfg = trainr_cfg.resolve("refiner");
    lfd_train_options opts{};
    opts.dataset_dir = trainr_lo.c_str();
    opts.dataset_hi_dir = trainr_hi.c_str();
    opts.out_dir = trainr_out.c_str();
    opts.config_json = cfg.c_str();
    opts.resume_dir = trainr_resume.empty() ? nullptr : trainr_resume.c_str();
    opts.progress = progress_cb;
    check(lfd_train(&opts));
    std::printf("final checkpoint: %s/final\n", trainr_out.c_str());
  });

  // sample
  auto* sample = app.add_subcommand("sample", "synthesize novel views from one source image");
  std::string s_ckpt, s_image, s_camera, s_targets, s_out, s_kind = "ddim", s_weights = "ema";
  int s_steps = 50;
  double s_eta = 0.0, s_guidance = 3.0;
  std::uint64_t s_seed = 0;
  sample->add_option("--checkpoint", s_ckpt, "checkpoint directory")->required();
  sample->add_option("--source-image", s_image, "source view PPM")->required();
  sample->add_option("--source-camera", s_camera, "source camera JSON")->required();
  sample->add_option("--targets", s_targets, "target cameras JSON (array)")->required();
  sample->add_option("--out", s_out, "output directory")->required();
  sample->add_option("--sampler", s_kind, "ddpm | ddim");
  sample->add_option("--steps", s_steps, "sampler steps");
  sample->add_option("--eta", s_eta, "DDIM eta");
  sample->add_option("--guidance", s_guidance, "classifier-free guidance scale");
  sample->add_option("--seed", s_seed, "sampling seed");
  sample->add_option("--weights", s_weights, "ema | raw");
  sample->callback([&] {
    lfd_model* model = nullptr;
    check(lfd_model_open(s_ckpt.c_str(), s_weights == "ema" ? 1 : 0, &model));
    nlohmann::json sj;
    sj["kind"] = s_kind;
    sj["steps"] = s_steps;
    sj["eta"] = s_eta;
    sj["guidance"] = s_guidance;
    sj["seed"] = s_seed;
    const std::string sampler = sj.dump();
    const lfd_status rc = lfd_sample(model, s_image.c_str(), s_camera.c_str(), s_targets.c_str(),
                                     sampler.c_str(), s_out.c_str());
    lfd_model_close(model);
    check(rc);
    std::printf("samples written to %s\n", s_out.c_str());
  });

  // refine
  auto* refine = app.add_subcommand("refine", "2x refine a low-res image (or sweep step counts)");
  std::string r_ckpt, r_input, r_output, r_sweep, r_lo, r_hi, r_out;
  int r_steps = 200, r_max_views = 32;
  std::uint64_t r_seed = 0;
  refine->add_option("--checkpoint", r_ckpt, "refiner checkpoint directory")->required();
  refine->add_option("--input", r_input, "low-res input PPM");
  refine->add_option("--output", r_output, "refined output PPM");
  refine->add_option("--steps", r_steps, "refiner steps");
  refine->add_option("--seed", r_seed, "sampling seed");
  refine->add_option("--sweep", r_sweep, "comma-separated step counts, e.g. 50,100,200");
  refine->add_option("--dataset-lo", r_lo, "low-res dataset (sweep mode)");
  refine->add_option("--dataset-hi", r_hi, "2x reference dataset (sweep mode)");
  refine->add_option("--max-views", r_max_views, "views evaluated in sweep mode");
  refine->add_option("--out", r_out, "output directory (sweep mode)");
  refine->callback([&] {
    lfd_model* model = nullptr;
    check(lfd_model_open(r_ckpt.c_str(), 1, &model));
    lfd_status rc;
    if (!r_sweep.empty()) {
      char* report = nullptr;
      rc = lfd_refine_sweep(model, r_lo.c_str(), r_hi.c_str(), r_sweep.c_str(), r_max_views,
                            r_seed, r_out.c_str(), &report);
      if (rc == LFD_OK) std::printf("%s\n", take_string(report).c_str());
    } else {
      rc = lfd_refine(model, r_input.c_str(), r_output.c_str(), r_steps, r_seed);
      if (rc == LFD_OK) std::printf("refined image written to %s\n", r_output.c_str());
    }
    lfd_model_close(model);
    check(rc);
  });

  // eval
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM report for paired view directories");
  std::string e_gen, e_ref, e_report;
  eval->add_option("--generated", e_gen, "generated view directory")->required();
  eval->add_option("--reference", e_ref, "ground-truth view directory")->required();
  eval->add_option("--report", e_report, "report JSON path");
  eval->callback([&] {
    char* report = nullptr;
    check(lfd_eval(e_gen.c_str(), e_ref.c_str(), e_report.empty() ? nullptr : e_report.c_str(),
                   &report));
    std::printf("%s\n", take_string(report).c_str());
  });

  // encode-dump
  auto* dump = app.add_subcommand("encode-dump", "grayscale dump of the light-field encoding");
  std::string d_source, d_target, d_out;
  int d_downsample = 1, d_octaves = 15;
  bool d_no_normalize = false;
  dump->add_option("--source", d_source, "source camera JSON")->required();
  dump->add_option("--target", d_target, "target camera JSON (omit for the canonical encoding)");
  dump->add_option("--downsample", d_downsample, "grid downsample factor");
  dump->add_option("--octaves", d_octaves, "encoding octaves");
  dump->add_flag("--no-normalize", d_no_normalize, "keep unnormalized ray directions");
  dump->add_option("--out", d_out, "output directory")->required();
  dump->callback([&] {
    check(lfd_encode_dump(d_source.c_str(), d_target.empty() ? nullptr : d_target.c_str(),
                          d_downsample, d_octaves, d_no_normalize ? 0 : 1, d_out.c_str()));
    std::printf("encoding channels dumped to %s\n", d_out.c_str());
  });

  // ablate
  auto* ablate = app.add_subcommand(
      "ablate", "train light-field and RT variants under matched budgets and compare");
  std::string a_dataset, a_out, a_seeds = "1,2,3", a_rt_config;
  ConfigFlags a_cfg;
  int a_eval_scenes = 16, a_source_view = 0, a_steps = 50;
  double a_guidance = 3.0;
  ablate->add_option("--dataset", a_dataset, "dataset directory")->required();
  ablate->add_option("--out", a_out, "output directory")->required();
  ablate->add_option("--seeds", a_seeds, "comma-separated seeds");
  ablate->add_option("--rt-config", a_rt_config, "explicit RT config (must match budgets)");
  ablate->add_option("--eval-scenes", a_eval_scenes, "scenes evaluated");
  ablate->add_option("--source-view", a_source_view, "source view index");
  ablate->add_option("--sampler-steps", a_steps, "DDIM steps for evaluation");
  ablate->add_option("--guidance", a_guidance, "guidance scale for evaluation");
  a_cfg.attach(ablate);
  ablate->callback([&] {
    const std::string cfg = a_cfg.resolve("lightfield");
    std::string rt_cfg_text;
    if (!a_rt_config.empty()) {
      std::ifstream in(a_rt_config);
      if (!in) die(LFD_ERR_IO);
      rt_cfg_text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    char* report = nullptr;
    check(lfd_ablate(a_dataset.c_str(), cfg.c_str(),
                     rt_cfg_text.empty() ? nullptr : rt_cfg_text.c_str(), a_seeds.c_str(),
                     a_eval_scenes, a_source_view, a_steps, a_guidance, a_out.c_str(),
                     progress_cb, nullptr, &report));
    std::printf("%s\n", take_string(report).c_str());
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}
