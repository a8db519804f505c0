#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "encoding.hpp"

namespace lfd {

struct ScheduleConfig {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
};

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double eps = 1e-8;
};

// Everything a training run depends on. `iterations`, `threads` and the
// logging/checkpoint cadence are runtime knobs; the rest identifies the model
// and the exact draw sequence, and must match when resuming.
struct RunConfig {
  DenoiserConfig denoiser;
  EncodingConfig encoding;
  ScheduleConfig schedule;
  OptimizerConfig optimizer;
  int batch_size = 8;
  std::int64_t iterations = 2000;
  double ema_decay = 0.9999;
  std::uint64_t seed = 0;
  int threads = 1;
  std::int64_t checkpoint_every = 0;  // 0: only final
  std::int64_t log_every = 10;
  std::vector<int> holdout_views;  // excluded from training pairs

  void validate() const;
};

std::string run_config_to_json(const RunConfig& run);
RunConfig run_config_from_json(const std::string& text);

// Flattened-key differences, ignoring runtime knobs. Empty when compatible.
std::string run_config_diff(const RunConfig& a, const RunConfig& b);

struct Checkpoint {
  RunConfig run;
  std::int64_t iteration = 0;
  std::int64_t adam_step = 0;
  std::vector<ParamInfo> manifest;
  std::vector<float> params, ema, adam_m, adam_v;
};

// Directory layout: config.json, manifest.json, params.bin, ema.bin,
// optim.bin (adam m then v). Binary files are little-endian float32 in
// manifest order; save(load(dir)) is byte-identical.
void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

// Manifest equality against a freshly built model (names, shapes, offsets).
void check_manifest(const std::vector<ParamInfo>& expected, const std::vector<ParamInfo>& actual);

}  // namespace lfd
