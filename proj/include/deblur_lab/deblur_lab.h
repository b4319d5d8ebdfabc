#ifndef DEBLUR_LAB_H
#define DEBLUR_LAB_H

/* C interface to the deblurring toolkit.
 *
 * Every call returns a dbl_status; on failure the message is available from
 * dbl_last_error() (per thread, valid until the next failing call). Strings
 * returned through char** outputs are owned by the caller and released with
 * dbl_string_free. Pipeline entry points take and return JSON documents. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  ifdef DEBLUR_LAB_BUILDING
#    define DBL_API __declspec(dllexport)
#  else
#    define DBL_API __declspec(dllimport)
#  endif
#else
#  define DBL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dbl_status {
  DBL_OK = 0,
  DBL_ERR_DIMENSION = 1,
  DBL_ERR_CONFIG = 2,
  DBL_ERR_PARAMETER = 3,
  DBL_ERR_STATE = 4,
  DBL_ERR_NUMERIC = 5,
  DBL_ERR_CONVERGENCE = 6,
  DBL_ERR_IO = 7,
  DBL_ERR_EMPTY_DATASET = 8,
  DBL_ERR_INVALID_ARGUMENT = 9, /* null handle or output pointer */
  DBL_ERR_INTERNAL = 10
} dbl_status;

typedef struct dbl_kernel dbl_kernel;
typedef struct dbl_image dbl_image;

DBL_API const char* dbl_version(void);
DBL_API const char* dbl_status_name(dbl_status status);
DBL_API const char* dbl_last_error(void);
DBL_API void dbl_string_free(char* s);

/* Defaults for a config section as JSON: "model", "model_reduced" (needs
 * img_size), "train", "loss", "corpus", "deconv", "gradcheck". */
DBL_API dbl_status dbl_default_config(const char* section, int img_size, char** json_out);

/* ---- kernels ---- */
DBL_API dbl_status dbl_kernel_linear(int size, double angle_degrees, double length_px, dbl_kernel** out);
DBL_API dbl_status dbl_kernel_trajectory(int size, uint64_t seed, double jitter, dbl_kernel** out);
DBL_API dbl_status dbl_kernel_from_values(int size, const double* values, int normalize, dbl_kernel** out);
DBL_API dbl_status dbl_kernel_load(const char* path, dbl_kernel** out);
DBL_API dbl_status dbl_kernel_save(const dbl_kernel* k, const char* path);
DBL_API dbl_status dbl_kernel_size(const dbl_kernel* k, int* size);
/* Copies size*size row-major weights into values. */
DBL_API dbl_status dbl_kernel_values(const dbl_kernel* k, double* values, size_t count);
/* size, sum, generator, angle, length, seed and spectrum min/max/dc at h x w. */
DBL_API dbl_status dbl_kernel_describe(const dbl_kernel* k, size_t height, size_t width, char** json_out);
DBL_API dbl_status dbl_kernel_save_spectrum(const dbl_kernel* k, size_t height, size_t width, int log_scaled,
                                            const char* path);
DBL_API void dbl_kernel_free(dbl_kernel* k);

/* ---- images (HWC, float64 in [0,1]) ---- */
DBL_API dbl_status dbl_image_create(size_t height, size_t width, size_t channels, const double* data, dbl_image** out);
DBL_API dbl_status dbl_image_load(const char* path, dbl_image** out);
DBL_API dbl_status dbl_image_save(const dbl_image* img, const char* path);
DBL_API dbl_status dbl_image_shape(const dbl_image* img, size_t* height, size_t* width, size_t* channels);
/* Borrowed pointer, valid while img lives. */
DBL_API dbl_status dbl_image_data(const dbl_image* img, const double** data);
/* boundary: "circular" or "reflect". */
DBL_API dbl_status dbl_image_blur(const dbl_image* sharp, const dbl_kernel* k, double noise_sigma,
                                  const char* boundary, uint64_t seed, dbl_image** out);
/* method: inverse | wiener | richardson_lucy | landweber | tv; params_json may be NULL. */
DBL_API dbl_status dbl_image_deconvolve(const dbl_image* blurred, const dbl_kernel* k, const char* method,
                                        const char* params_json, dbl_image** out);
DBL_API dbl_status dbl_image_psnr(const dbl_image* a, const dbl_image* b, double* psnr_db);
DBL_API dbl_status dbl_image_ssim(const dbl_image* a, const dbl_image* b, double* ssim);
DBL_API void dbl_image_free(dbl_image* img);

/* ---- pipeline (JSON request -> JSON result) ----
 * Dataset requests share: blurred_dir, sharp_dir, img_size [h,w], jobs, seed,
 * and split as {"fractions":[train,val,test]} or {"counts":[train,val,test]}. */

/* {"corpus": {...}, "out_dir": "...", "jobs": n} -> {"pairs": [...], "stats": {...}} */
DBL_API dbl_status dbl_corpus_build(const char* request_json, char** result_json);

/* Blurred-vs-sharp severity summary, overall and per split. */
DBL_API dbl_status dbl_stats(const char* request_json, char** result_json);

typedef void (*dbl_epoch_callback)(const char* history_row_json, void* user);

/* {..dataset.., "model": {...}, "train": {...}, "out_dir": "..."} -> result
 * summary; history rows are also passed to on_epoch when non-NULL. */
DBL_API dbl_status dbl_train(const char* request_json, dbl_epoch_callback on_epoch, void* user, char** result_json);

/* {..dataset.., "checkpoint": path | "identity", "eval_split": "test"} -> EvalReport;
 * "csv_path" additionally writes the per-image table. */
DBL_API dbl_status dbl_eval(const char* request_json, char** report_json);

/* {"input", "output", "checkpoint" | "kernel", "method", "params", "ground_truth"} */
DBL_API dbl_status dbl_deblur(const char* request_json, char** result_json);

/* Options as from dbl_default_config("gradcheck"); report lists every case. */
DBL_API dbl_status dbl_gradcheck(const char* options_json, char** report_json);

#ifdef __cplusplus
}
#endif

#endif
