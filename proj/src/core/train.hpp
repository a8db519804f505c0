#pragma once

#include <functional>
#include <string>

#include "checkpoint.hpp"
#include "dataset.hpp"

namespace lfd {

using ProgressFn = std::function<void(std::int64_t iter, double loss, double lr, double elapsed_s)>;

// One training example; indexable by a global counter so the draw order is
// independent of batching and threading.
struct TrainExample {
  Tensor<float> x0;
  Tensor<float> cond;
  Tensor<float> src_input;
  bool has_src = false;
};

using ExampleFn = std::function<TrainExample(std::uint64_t index)>;

struct TrainOutput {
  std::int64_t iterations = 0;
  std::string final_checkpoint;
};

// Core loop: AdamW on the eps objective with conditioning dropout, EMA
// shadow, jsonl loss log, periodic + final checkpoints. Gradients commit in
// example order, so any thread count reproduces the single-threaded trace.
TrainOutput run_training(const RunConfig& run, const ExampleFn& examples,
                         const std::string& out_dir, const std::string& resume_dir,
                         const ProgressFn& progress);

// (source, target) view pairs drawn uniformly within a scene (holdout views
// excluded), light-field or RT conditioning per the run config.
TrainOutput train_main(const RunConfig& run, const std::string& dataset_dir,
                       const std::string& out_dir, const std::string& resume_dir,
                       const ProgressFn& progress);

// Super-resolution refiner: generates the high-res render conditioned on the
// bilinearly 2x-upsampled low-res render of the same view.
TrainOutput train_refiner(const RunConfig& run, const std::string& dataset_lo,
                          const std::string& dataset_hi, const std::string& out_dir,
                          const std::string& resume_dir, const ProgressFn& progress);

}  // namespace lfd
