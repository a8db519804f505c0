#include "train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "conditioning.hpp"
#include "diffusion.hpp"

namespace lfd {

namespace fs = std::filesystem;

namespace {

struct AdamState {
  std::vector<float> m, v;
  std::int64_t step = 0;
};

std::string ckpt_dir_name(std::int64_t iter) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06lld", static_cast<long long>(iter));
  return buf;
}

void save_state(const std::string& dir, const RunConfig& run, const NvsModelF& model,
                const EmaState& ema, const AdamState& adam, std::int64_t iteration) {
  Checkpoint ck;
  ck.run = run;
  ck.iteration = iteration;
  ck.adam_step = adam.step;
  ck.manifest = model.params().manifest();
  ck.params = model.params().values();
  ck.ema = ema.shadow;
  ck.adam_m = adam.m;
  ck.adam_v = adam.v;
  save_checkpoint(dir, ck);
}

}  // namespace

TrainOutput run_training(const RunConfig& run, const ExampleFn& examples,
                         const std::string& out_dir, const std::string& resume_dir,
                         const ProgressFn& progress) {
  run.validate();
  NvsModelF model(run.denoiser);
  ParamStore<float>& store = model.params();
  const std::int64_t total = store.total();

  EmaState ema;
  ema.decay = run.ema_decay;
  AdamState adam;
  std::int64_t start_iter = 0;

  if (!resume_dir.empty()) {
    Checkpoint ck = load_checkpoint(resume_dir);
    const std::string diff = run_config_diff(ck.run, run);
    if (!diff.empty())
      fail(ErrorCode::config_mismatch, "resume refused, config differs:\n" + diff);
    check_manifest(store.manifest(), ck.manifest);
    store.values() = std::move(ck.params);
    ema.shadow = std::move(ck.ema);
    adam.m = std::move(ck.adam_m);
    adam.v = std::move(ck.adam_v);
    adam.step = ck.adam_step;
    start_iter = ck.iteration;
    LFD_CHECK(start_iter <= run.iterations, "resume: checkpoint is past the requested iterations");
  } else {
    model.init_params(run.seed);
    ema.shadow = store.values();
    adam.m.assign(static_cast<size_t>(total), 0.0f);
    adam.v.assign(static_cast<size_t>(total), 0.0f);
  }

  const NoiseSchedule sched =
      make_schedule(run.schedule.T, run.schedule.beta_start, run.schedule.beta_end);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + out_dir + ": " + ec.message());
  std::ofstream log(out_dir + "/train_log.jsonl",
                    start_iter > 0 ? std::ios::app : std::ios::trunc);
  if (!log) fail(ErrorCode::io, "cannot open train log in " + out_dir);

  const int batch = run.batch_size;
  const int nthreads = std::max(1, std::min(run.threads, batch));
  std::vector<std::vector<float>> scratch(static_cast<size_t>(nthreads));
  for (auto& s : scratch) s.assign(static_cast<size_t>(total), 0.0f);
  std::vector<float> grads(static_cast<size_t>(total), 0.0f);
  std::vector<double> example_loss(static_cast<size_t>(batch), 0.0);
  const std::vector<int> x_shape = {3, run.denoiser.image_size, run.denoiser.image_size};

  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed_s = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  for (std::int64_t it = start_iter; it < run.iterations; ++it) {
    std::fill(grads.begin(), grads.end(), 0.0f);

    const auto run_example = [&](int i, std::vector<float>& g) {
      std::fill(g.begin(), g.end(), 0.0f);
      const std::uint64_t idx = static_cast<std::uint64_t>(it) * batch + static_cast<unsigned>(i);
      const TrainExample ex = examples(idx);
      const auto draws =
          draw_loss_batch(run.seed, idx, 1, x_shape, sched.T, run.denoiser.p_uncond);
      const LossDraw& d = draws[0];
      const Tensor<float> x_t = q_sample(ex.x0, d.t, d.eps, sched);

      SourceFeatures<float> feats;
      SourceTrace<float> strace;
      const bool use_src = ex.has_src && !d.drop_cond;
      feats = use_src ? model.encode_source(ex.src_input, &strace) : model.null_features();

      UnetTrace<float> trace;
      const Tensor<float> pred = model.predict_eps(x_t, d.t, ex.cond, feats, &trace);

      Tensor<float> dpred;
      dpred.shape = pred.shape;
      dpred.v.resize(pred.v.size());
      double lsum = 0;
      const double dscale = 2.0 / (static_cast<double>(batch) * pred.numel());
      for (size_t e = 0; e < pred.v.size(); ++e) {
        const double r = static_cast<double>(pred.v[e]) - d.eps.v[e];
        lsum += r * r;
        dpred.v[e] = static_cast<float>(dscale * r);
      }
      example_loss[static_cast<size_t>(i)] = lsum / static_cast<double>(pred.numel());

      const SourceFeatures<float> dsrc = model.backward(dpred, trace, g.data());
      if (ex.has_src) {
        if (d.drop_cond)
          model.backward_null(dsrc, g.data());
        else
          model.backward_source(dsrc, strace, g.data());
      }
    };

    // Waves of up to `nthreads` examples; gradients commit in example order
    // regardless of the thread count.
    for (int first = 0; first < batch; first += nthreads) {
      const int count = std::min(nthreads, batch - first);
      if (count == 1) {
        run_example(first, scratch[0]);
      } else {
        std::vector<std::thread> workers;
        workers.reserve(static_cast<size_t>(count));
        for (int k = 0; k < count; ++k)
          workers.emplace_back([&, k] { run_example(first + k, scratch[static_cast<size_t>(k)]); });
        for (auto& w : workers) w.join();
      }
      for (int k = 0; k < count; ++k) {
        const float* g = scratch[static_cast<size_t>(k)].data();
        for (std::int64_t j = 0; j < total; ++j) grads[static_cast<size_t>(j)] += g[j];
      }
    }

    double loss = 0;
    for (int i = 0; i < batch; ++i) loss += example_loss[static_cast<size_t>(i)];
    loss /= batch;

    // AdamW with decoupled weight decay.
    adam.step += 1;
    const double bc1 = 1.0 - std::pow(run.optimizer.beta1, static_cast<double>(adam.step));
    const double bc2 = 1.0 - std::pow(run.optimizer.beta2, static_cast<double>(adam.step));
    const float b1 = static_cast<float>(run.optimizer.beta1);
    const float b2 = static_cast<float>(run.optimizer.beta2);
    const float lr = static_cast<float>(run.optimizer.lr);
    const float wd = static_cast<float>(run.optimizer.weight_decay);
    const float adam_eps = static_cast<float>(run.optimizer.eps);
    const float inv_bc1 = static_cast<float>(1.0 / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    float* p = store.values().data();
    for (std::int64_t j = 0; j < total; ++j) {
      const float g = grads[static_cast<size_t>(j)];
      float& m = adam.m[static_cast<size_t>(j)];
      float& v = adam.v[static_cast<size_t>(j)];
      m = b1 * m + (1.0f - b1) * g;
      v = b2 * v + (1.0f - b2) * g * g;
      const float mh = m * inv_bc1;
      const float vh = v * inv_bc2;
      p[j] -= lr * (mh / (std::sqrt(vh) + adam_eps) + wd * p[j]);
    }
    ema_update(ema, store.values());

    const std::int64_t done = it + 1;
    if ((run.log_every > 0 && done % run.log_every == 0) || done == run.iterations) {
      nlohmann::json line;
      line["iter"] = done;
      line["loss"] = loss;
      line["lr"] = run.optimizer.lr;
      line["elapsed_s"] = elapsed_s();
      log << line.dump() << "\n";
      log.flush();
      if (progress) progress(done, loss, run.optimizer.lr, elapsed_s());
    }
    if (run.checkpoint_every > 0 && done % run.checkpoint_every == 0 && done < run.iterations)
      save_state(out_dir + "/" + ckpt_dir_name(done), run, model, ema, adam, done);
  }

  const std::string final_dir = out_dir + "/final";
  save_state(final_dir, run, model, ema, adam, run.iterations);
  return {run.iterations, final_dir};
}

TrainOutput train_main(const RunConfig& run, const std::string& dataset_dir,
                       const std::string& out_dir, const std::string& resume_dir,
                       const ProgressFn& progress) {
  run.validate();
  LFD_CHECK(run.denoiser.conditioning != DenoiserConfig::Conditioning::refiner,
            "train: use train_refiner for refiner models");
  const auto ds = std::make_shared<Dataset>(Dataset::load(dataset_dir));
  LFD_CHECK(ds->meta().image_size == run.denoiser.image_size,
            "train: dataset image size does not match the model");

  std::vector<int> allowed;
  for (int v = 0; v < ds->views(); ++v) {
    if (std::find(run.holdout_views.begin(), run.holdout_views.end(), v) ==
        run.holdout_views.end())
      allowed.push_back(v);
  }
  LFD_CHECK(!allowed.empty(), "train: every view is held out");

  const CameraIntrinsics K = ds->meta().intrinsics;
  const auto id_cond = std::make_shared<Tensor<float>>(
      target_conditioning(run, K, CameraPose::identity(), CameraPose::identity()));

  const ExampleFn examples = [run, ds, K, allowed, id_cond](std::uint64_t idx) {
    Rng pair_rng(run.seed, "train/pair", idx);
    const int scene = static_cast<int>(pair_rng.below(static_cast<std::uint64_t>(ds->n_scenes())));
    const int si = allowed[pair_rng.below(allowed.size())];
    const int ti = allowed[pair_rng.below(allowed.size())];
    const SceneData& sc = ds->scene(scene);
    TrainExample ex;
    ex.x0 = image_to_tensor(sc.images[static_cast<size_t>(ti)]);
    ex.cond = target_conditioning(run, K, sc.poses[static_cast<size_t>(si)],
                                  sc.poses[static_cast<size_t>(ti)]);
    ex.src_input =
        concat_channels(image_to_tensor(sc.images[static_cast<size_t>(si)]), *id_cond);
    ex.has_src = true;
    return ex;
  };
  return run_training(run, examples, out_dir, resume_dir, progress);
}

TrainOutput train_refiner(const RunConfig& run, const std::string& dataset_lo,
                          const std::string& dataset_hi, const std::string& out_dir,
                          const std::string& resume_dir, const ProgressFn& progress) {
  run.validate();
  LFD_CHECK(run.denoiser.conditioning == DenoiserConfig::Conditioning::refiner,
            "train_refiner: config must use refiner conditioning");
  LFD_CHECK(run.denoiser.encoding_channels == 3,
            "train_refiner: refiner conditioning is the upsampled RGB image");
  const auto lo = std::make_shared<Dataset>(Dataset::load(dataset_lo));
  const auto hi = std::make_shared<Dataset>(Dataset::load(dataset_hi));
  LFD_CHECK(hi->meta().image_size == 2 * lo->meta().image_size,
            "train_refiner: high-res dataset must be exactly 2x the low-res one");
  LFD_CHECK(hi->meta().image_size == run.denoiser.image_size,
            "train_refiner: model size must match the high-res dataset");
  LFD_CHECK(hi->n_scenes() == lo->n_scenes() && hi->views() == lo->views(),
            "train_refiner: datasets must pair scene for scene");

  std::vector<int> allowed;
  for (int v = 0; v < hi->views(); ++v) {
    if (std::find(run.holdout_views.begin(), run.holdout_views.end(), v) ==
        run.holdout_views.end())
      allowed.push_back(v);
  }
  LFD_CHECK(!allowed.empty(), "train_refiner: every view is held out");

  const int out_size = hi->meta().image_size;
  const ExampleFn examples = [run, lo, hi, allowed, out_size](std::uint64_t idx) {
    Rng pair_rng(run.seed, "train/pair", idx);
    const int scene = static_cast<int>(pair_rng.below(static_cast<std::uint64_t>(hi->n_scenes())));
    const int vi = allowed[pair_rng.below(allowed.size())];
    TrainExample ex;
    ex.x0 = image_to_tensor(hi->scene(scene).images[static_cast<size_t>(vi)]);
    ex.cond = image_to_tensor(
        bilinear_resize(lo->scene(scene).images[static_cast<size_t>(vi)], out_size, out_size));
    ex.has_src = false;
    return ex;
  };
  return run_training(run, examples, out_dir, resume_dir, progress);
}

}  // namespace lfd
