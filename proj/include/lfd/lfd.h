/* Light-field diffusion for single-view novel view synthesis: C API.
 *
 * Every entry point returns LFD_OK or an error code; lfd_last_error() holds
 * a thread-local message for the most recent failure on this thread. Strings
 * returned through char** out-parameters are owned by the caller and must be
 * released with lfd_string_free().
 */
#ifndef LFD_H
#define LFD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LFD_API __declspec(dllexport)
#else
#define LFD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef int32_t lfd_status;
#define LFD_OK 0
#define LFD_ERR_INVALID_ARGUMENT 1
#define LFD_ERR_IO 2
#define LFD_ERR_PARSE 3
#define LFD_ERR_CONFIG_MISMATCH 4
#define LFD_ERR_INTERNAL 5

LFD_API const char* lfd_status_name(lfd_status status);
LFD_API const char* lfd_last_error(void);
LFD_API const char* lfd_version(void);
LFD_API void lfd_string_free(char* s);

/* Synthetic multi-view dataset: meta.json + scene_NNNN/view_MM.ppm +
 * scene_NNNN/cameras.json, byte-reproducible from the arguments. */
LFD_API lfd_status lfd_gen_data(const char* out_dir, int32_t n_scenes, int32_t views_per_scene,
                                int32_t image_size, uint64_t seed);

/* Default run-config JSON for "lightfield", "rt" or "refiner" conditioning. */
LFD_API lfd_status lfd_default_config(const char* conditioning, int32_t image_size,
                                      char** json_out);

typedef void (*lfd_progress_fn)(int64_t iter, double loss, double lr, double elapsed_s,
                                void* user);

typedef struct lfd_train_options {
  const char* dataset_dir;    /* low-res dataset when training a refiner */
  const char* dataset_hi_dir; /* refiner only; NULL otherwise */
  const char* out_dir;
  const char* config_json; /* full run config */
  const char* resume_dir;  /* NULL starts fresh */
  lfd_progress_fn progress;
  void* user;
} lfd_train_options;

LFD_API lfd_status lfd_train(const lfd_train_options* options);

/* A checkpoint loaded for inference (EMA or raw weights). */
typedef struct lfd_model lfd_model;
LFD_API lfd_status lfd_model_open(const char* checkpoint_dir, int32_t use_ema, lfd_model** out);
LFD_API void lfd_model_close(lfd_model* model);
LFD_API lfd_status lfd_model_config(const lfd_model* model, char** json_out);

/* One output image per entry of the target camera file, written to
 * out_dir/view_NN.ppm. sampler_json: {"kind":"ddim"|"ddpm","steps":50,
 * "eta":0.0,"guidance":3.0,"seed":0}; NULL for defaults. */
LFD_API lfd_status lfd_sample(const lfd_model* model, const char* source_image_ppm,
                              const char* source_camera_json_file,
                              const char* target_cameras_json_file, const char* sampler_json,
                              const char* out_dir);

/* 2x super-resolution of a low-res PPM through a refiner checkpoint. */
LFD_API lfd_status lfd_refine(const lfd_model* refiner, const char* input_ppm,
                              const char* output_ppm, int32_t steps, uint64_t seed);

/* Step sweep over paired low/high-res datasets; writes refine_sweep.json. */
LFD_API lfd_status lfd_refine_sweep(const lfd_model* refiner, const char* dataset_lo,
                                    const char* dataset_hi, const char* steps_csv,
                                    int32_t max_views, uint64_t seed, const char* out_dir,
                                    char** report_json_out);

/* Pairs view_NN.ppm files by index and reports PSNR/SSIM per view plus
 * aggregates. report_path may be NULL (report still returned). */
LFD_API lfd_status lfd_eval(const char* generated_dir, const char* reference_dir,
                            const char* report_path, char** report_json_out);

/* Per-channel grayscale dump of a light-field encoding plus index.json.
 * target may be NULL: the canonical (identity) encoding is dumped. */
LFD_API lfd_status lfd_encode_dump(const char* source_camera_json_file,
                                   const char* target_camera_json_file, int32_t downsample,
                                   int32_t octaves, int32_t normalize_dirs, const char* out_dir);

/* Trains light-field and RT-conditioned variants under matched budgets and
 * evaluates held-out views. rt_config_json may be NULL (derived from the
 * base config); a non-matching explicit config is refused. */
LFD_API lfd_status lfd_ablate(const char* dataset_dir, const char* config_json,
                              const char* rt_config_json, const char* seeds_csv,
                              int32_t eval_scenes, int32_t source_view, int32_t sampler_steps,
                              double guidance_scale, const char* out_dir,
                              lfd_progress_fn progress, void* user, char** report_json_out);

#ifdef __cplusplus
}
#endif

#endif /* LFD_H */
