#include "diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace lfd {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  LFD_CHECK(T >= 2, "schedule: T must be >= 2");
  LFD_CHECK(beta_start > 0 && beta_start <= beta_end && beta_end < 1,
            "schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<size_t>(T));
  s.alpha.resize(static_cast<size_t>(T));
  s.alpha_bar.resize(static_cast<size_t>(T));
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double frac = static_cast<double>(t - 1) / static_cast<double>(T - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    s.beta[static_cast<size_t>(t - 1)] = b;
    s.alpha[static_cast<size_t>(t - 1)] = 1.0 - b;
    prod *= 1.0 - b;
    s.alpha_bar[static_cast<size_t>(t - 1)] = prod;
  }
  return s;
}

Tensor<float> q_sample(const Tensor<float>& x0, int t, const Tensor<float>& eps,
                       const NoiseSchedule& sched) {
  LFD_CHECK(t >= 1 && t <= sched.T, "q_sample: t out of range");
  LFD_CHECK(x0.shape == eps.shape, "q_sample: shape mismatch between x0 and eps");
  const double ab = sched.alpha_bar_t(t);
  const float a = static_cast<float>(std::sqrt(ab));
  const float b = static_cast<float>(std::sqrt(1.0 - ab));
  Tensor<float> out;
  out.shape = x0.shape;
  out.v.resize(x0.v.size());
  for (size_t i = 0; i < x0.v.size(); ++i) out.v[i] = a * x0.v[i] + b * eps.v[i];
  return out;
}

std::vector<LossDraw> draw_loss_batch(std::uint64_t seed, std::uint64_t first_index, size_t n,
                                      const std::vector<int>& shape, int T, double p_uncond) {
  std::vector<LossDraw> draws(n);
  for (size_t i = 0; i < n; ++i) {
    const std::uint64_t idx = first_index + i;
    Rng rng_t(seed, "loss/t", idx);
    Rng rng_eps(seed, "loss/eps", idx);
    Rng rng_drop(seed, "loss/drop", idx);
    LossDraw& d = draws[i];
    d.t = 1 + static_cast<int>(rng_t.below(static_cast<std::uint64_t>(T)));
    d.drop_cond = p_uncond > 0 && rng_drop.uniform() < p_uncond;
    d.eps = Tensor<float>(shape);
    for (auto& e : d.eps.v) e = static_cast<float>(rng_eps.normal());
  }
  return draws;
}

double training_loss(const EpsFn& model, const std::vector<Tensor<float>>& x0s,
                     const std::vector<LossDraw>& draws, const NoiseSchedule& sched) {
  LFD_CHECK(!x0s.empty() && x0s.size() == draws.size(), "training_loss: batch/draw size mismatch");
  double sum_sq = 0.0;
  std::int64_t count = 0;
  for (size_t i = 0; i < x0s.size(); ++i) {
    const LossDraw& d = draws[i];
    LFD_CHECK(x0s[i].shape == d.eps.shape, "training_loss: eps shape mismatch");
    const Tensor<float> x_t = q_sample(x0s[i], d.t, d.eps, sched);
    const Tensor<float> pred = model(x_t, d.t, d.drop_cond, i);
    LFD_CHECK(pred.shape == d.eps.shape, "training_loss: prediction shape mismatch");
    for (size_t e = 0; e < pred.v.size(); ++e) {
      const double r = static_cast<double>(d.eps.v[e]) - static_cast<double>(pred.v[e]);
      sum_sq += r * r;
    }
    count += d.eps.numel();
  }
  return sum_sq / static_cast<double>(count);
}

void SamplerConfig::validate(int T) const {
  LFD_CHECK(steps >= 1, "sampler: steps must be >= 1");
  LFD_CHECK(steps <= T, "sampler: steps must be <= schedule T");
  LFD_CHECK(eta >= 0, "sampler: eta must be >= 0");
  LFD_CHECK(guidance_scale >= 0, "sampler: guidance scale must be >= 0");
  if (kind == Kind::ddpm) LFD_CHECK(steps == T, "sampler: ancestral ddpm uses steps == T");
}

Tensor<float> cfg_combine(const Tensor<float>& eps_cond, const Tensor<float>& eps_uncond,
                          double scale) {
  LFD_CHECK(eps_cond.shape == eps_uncond.shape, "cfg_combine: shape mismatch");
  if (scale == 1.0) return eps_cond;
  if (scale == 0.0) return eps_uncond;
  Tensor<float> out;
  out.shape = eps_cond.shape;
  out.v.resize(eps_cond.v.size());
  const float s = static_cast<float>(scale);
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = eps_uncond.v[i] + s * (eps_cond.v[i] - eps_uncond.v[i]);
  return out;
}

namespace {

Tensor<float> guided_eps(const GuidedEpsFn& model, const Tensor<float>& x, int t, double scale) {
  if (scale == 1.0) return model(x, t, false);
  if (scale == 0.0) return model(x, t, true);
  return cfg_combine(model(x, t, false), model(x, t, true), scale);
}

Tensor<float> initial_noise(const std::vector<int>& shape, std::uint64_t seed) {
  Rng rng(seed, "sample/init", 0);
  Tensor<float> x(shape);
  for (auto& e : x.v) e = static_cast<float>(rng.normal());
  return x;
}

void clamp_unit(Tensor<float>& x) {
  for (auto& e : x.v) e = std::clamp(e, -1.0f, 1.0f);
}

}  // namespace

Tensor<float> ddpm_sample(const GuidedEpsFn& model, const std::vector<int>& shape,
                          const NoiseSchedule& sched, const SamplerConfig& cfg,
                          const SampleObserver& observer) {
  cfg.validate(sched.T);
  Tensor<float> x = initial_noise(shape, cfg.seed);
  const size_t n = x.v.size();
  for (int t = sched.T; t >= 1; --t) {
    const Tensor<float> eps = guided_eps(model, x, t, cfg.guidance_scale);
    const double ab_t = sched.alpha_bar_t(t);
    const double ab_prev = sched.alpha_bar_t(t - 1);
    const double a_t = sched.alpha_t(t);
    const double b_t = sched.beta_t(t);
    const double inv_sqrt_ab = 1.0 / std::sqrt(ab_t);
    const double sig_scale = std::sqrt(1.0 - ab_t);
    // Posterior q(x_{t-1} | x_t, x0_pred).
    const double coef_x0 = std::sqrt(ab_prev) * b_t / (1.0 - ab_t);
    const double coef_xt = std::sqrt(a_t) * (1.0 - ab_prev) / (1.0 - ab_t);
    double var = 0.0;
    if (t > 1) {
      var = cfg.variance == SamplerConfig::Variance::beta_tilde
                ? (1.0 - ab_prev) / (1.0 - ab_t) * b_t
                : b_t;
    }
    const double sigma = std::sqrt(var);
    Rng rng(cfg.seed, "sample/step", static_cast<std::uint64_t>(t));
    for (size_t i = 0; i < n; ++i) {
      double x0_pred = (x.v[i] - sig_scale * eps.v[i]) * inv_sqrt_ab;
      if (cfg.clip_denoised) x0_pred = std::clamp(x0_pred, -1.0, 1.0);
      double next = coef_x0 * x0_pred + coef_xt * x.v[i];
      if (t > 1) next += sigma * rng.normal();
      x.v[i] = static_cast<float>(next);
    }
    if (observer) observer(t, x);
  }
  clamp_unit(x);
  return x;
}

std::vector<int> ddim_timesteps(int T, int steps) {
  std::vector<int> taus(static_cast<size_t>(steps));
  for (int j = 0; j < steps; ++j)
    taus[static_cast<size_t>(j)] =
        1 + static_cast<int>((static_cast<std::int64_t>(j) * T) / steps);
  return taus;
}

Tensor<float> ddim_sample(const GuidedEpsFn& model, const std::vector<int>& shape,
                          const NoiseSchedule& sched, const SamplerConfig& cfg,
                          const SampleObserver& observer) {
  cfg.validate(sched.T);
  const std::vector<int> taus = ddim_timesteps(sched.T, cfg.steps);
  Tensor<float> x = initial_noise(shape, cfg.seed);
  const size_t n = x.v.size();
  for (int j = cfg.steps - 1; j >= 0; --j) {
    const int t = taus[static_cast<size_t>(j)];
    const int t_prev = j > 0 ? taus[static_cast<size_t>(j - 1)] : 0;
    const Tensor<float> eps = guided_eps(model, x, t, cfg.guidance_scale);
    const double ab_t = sched.alpha_bar_t(t);
    const double ab_prev = sched.alpha_bar_t(t_prev);
    const double inv_sqrt_ab = 1.0 / std::sqrt(ab_t);
    const double sig_t = std::sqrt(1.0 - ab_t);
    const double sigma =
        cfg.eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
    const double dir_scale = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    const double sqrt_ab_prev = std::sqrt(ab_prev);
    Rng rng(cfg.seed, "sample/step", static_cast<std::uint64_t>(t));
    for (size_t i = 0; i < n; ++i) {
      double x0_pred = (x.v[i] - sig_t * eps.v[i]) * inv_sqrt_ab;
      if (cfg.clip_denoised) x0_pred = std::clamp(x0_pred, -1.0, 1.0);
      // Re-derive the direction from the (possibly clipped) x0 prediction so
      // eta = 0 stays an exact interpolation.
      const double eps_dir = (x.v[i] - std::sqrt(ab_t) * x0_pred) / sig_t;
      double next = sqrt_ab_prev * x0_pred + dir_scale * eps_dir;
      if (sigma > 0) next += sigma * rng.normal();
      x.v[i] = static_cast<float>(next);
    }
    if (observer) observer(t, x);
  }
  clamp_unit(x);
  return x;
}

void ema_update(EmaState& ema, const std::vector<float>& params) {
  LFD_CHECK(ema.shadow.size() == params.size(), "ema: shadow/param size mismatch");
  LFD_CHECK(ema.decay >= 0.0 && ema.decay <= 1.0, "ema: decay must be in [0,1]");
  const float d = static_cast<float>(ema.decay);
  const float one_minus = 1.0f - d;
  for (size_t i = 0; i < params.size(); ++i)
    ema.shadow[i] = d * ema.shadow[i] + one_minus * params[i];
}

}  // namespace lfd
