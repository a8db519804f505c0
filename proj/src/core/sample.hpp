#pragma once

#include <memory>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "conditioning.hpp"
#include "diffusion.hpp"
#include "image.hpp"
#include "metrics.hpp"
#include "train.hpp"

namespace lfd {

struct LoadedModel {
  RunConfig run;
  std::shared_ptr<NvsModelF> model;
  bool use_ema = true;
};

LoadedModel load_model(const std::string& checkpoint_dir, bool use_ema);

// One novel view from one source view.
Image sample_view(const LoadedModel& lm, const Image& source, const CameraIntrinsics& K,
                  const CameraPose& source_pose, const CameraPose& target_pose,
                  const SamplerConfig& sampler);

// 2x super-resolution by the refiner diffusion model (DDIM, eta 0).
Image refine_image(const LoadedModel& refiner, const Image& low, int steps, std::uint64_t seed);

// Target list for `sample`: a JSON array of {"R","t"} objects with optional
// "view" indices. Parse errors carry a 1-based line number.
struct TargetCamera {
  int view = 0;
  CameraPose pose;
};
std::vector<TargetCamera> parse_target_cameras(const std::string& text);

// Debug dump: one 8-bit grayscale image per encoding channel + index.json.
void encode_dump(const std::string& source_camera_json, const std::string& target_camera_json,
                 int downsample, int octaves, bool normalize_dirs, const std::string& out_dir);

struct AblateOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int eval_scenes = 16;
  int source_view = 0;
  SamplerConfig sampler;
};

// Refuses unless the two configs differ only in the conditioning mode.
void check_matched_budget(const RunConfig& lightfield, const RunConfig& rt);

// Trains the light-field and RT variants under matched budgets and compares
// held-out-view quality; returns the side-by-side report JSON.
std::string ablate(const RunConfig& base, const std::string& dataset_dir,
                   const AblateOptions& opts, const std::string& out_dir,
                   const ProgressFn& progress);

// Runs the refiner at each step count over paired low/high-res renders;
// reports per-step quality and runtime next to the bilinear baseline.
std::string refine_sweep(const LoadedModel& refiner, const std::string& dataset_lo,
                         const std::string& dataset_hi, const std::vector<int>& steps_list,
                         int max_views, std::uint64_t seed, const std::string& out_dir);

}  // namespace lfd
