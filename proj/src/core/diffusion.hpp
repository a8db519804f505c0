#pragma once

#include <functional>

#include "common.hpp"
#include "rng.hpp"

namespace lfd {

// beta/alpha/alpha_bar sequences for t in {1..T}; stored 0-based, accessors
// take 1-based t and alpha_bar_t(0) == 1.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta, alpha, alpha_bar;

  double beta_t(int t) const { return beta[static_cast<size_t>(t - 1)]; }
  double alpha_t(int t) const { return alpha[static_cast<size_t>(t - 1)]; }
  double alpha_bar_t(int t) const { return t == 0 ? 1.0 : alpha_bar[static_cast<size_t>(t - 1)]; }
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Tensor<float> q_sample(const Tensor<float>& x0, int t, const Tensor<float>& eps,
                       const NoiseSchedule& sched);

// Pre-drawn randomness for one training example.
struct LossDraw {
  int t = 1;
  bool drop_cond = false;
  Tensor<float> eps;
};

// Streams: (seed, "loss/t" | "loss/eps" | "loss/drop", first_index + i).
std::vector<LossDraw> draw_loss_batch(std::uint64_t seed, std::uint64_t first_index, size_t n,
                                      const std::vector<int>& shape, int T, double p_uncond);

// eps-prediction under test: (x_t, t, drop_cond, example index) -> eps_hat.
using EpsFn =
    std::function<Tensor<float>(const Tensor<float>& x_t, int t, bool drop_cond, size_t index)>;

// Mean squared error between drawn eps and model prediction, averaged over
// every element of the batch.
double training_loss(const EpsFn& model, const std::vector<Tensor<float>>& x0s,
                     const std::vector<LossDraw>& draws, const NoiseSchedule& sched);

struct SamplerConfig {
  enum class Kind { ddpm, ddim };
  enum class Variance { beta_tilde, beta };

  Kind kind = Kind::ddim;
  int steps = 50;
  double eta = 0.0;
  double guidance_scale = 3.0;
  std::uint64_t seed = 0;
  bool clip_denoised = true;
  Variance variance = Variance::beta_tilde;

  void validate(int T) const;
};

// Conditional/unconditional predictor: (x_t, t, uncond) -> eps_hat. The
// samplers skip the branch a degenerate guidance scale makes irrelevant.
using GuidedEpsFn = std::function<Tensor<float>(const Tensor<float>&, int, bool)>;

// Optional per-step observer: called with (t, state after the t-step update).
using SampleObserver = std::function<void(int, const Tensor<float>&)>;

Tensor<float> ddpm_sample(const GuidedEpsFn& model, const std::vector<int>& shape,
                          const NoiseSchedule& sched, const SamplerConfig& cfg,
                          const SampleObserver& observer = {});

Tensor<float> ddim_sample(const GuidedEpsFn& model, const std::vector<int>& shape,
                          const NoiseSchedule& sched, const SamplerConfig& cfg,
                          const SampleObserver& observer = {});

// DDIM timestep subsequence (1-based, ascending): 1 + floor(j*T/steps).
std::vector<int> ddim_timesteps(int T, int steps);

// eps_uncond + scale * (eps_cond - eps_uncond); exact identity at scale 0/1.
Tensor<float> cfg_combine(const Tensor<float>& eps_cond, const Tensor<float>& eps_uncond,
                          double scale);

struct EmaState {
  double decay = 0.9999;
  std::vector<float> shadow;
};

void ema_update(EmaState& ema, const std::vector<float>& params);

}  // namespace lfd
