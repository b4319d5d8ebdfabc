/* Exercises the C interface from plain C. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "deblur_lab/deblur_lab.h"

static int failures = 0;

#define EXPECT(cond)                                                   \
  do {                                                                 \
    if (!(cond)) {                                                     \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                      \
    }                                                                  \
  } while (0)

#define EXPECT_OK(call)                                                               \
  do {                                                                                \
    dbl_status st_ = (call);                                                          \
    if (st_ != DBL_OK) {                                                              \
      fprintf(stderr, "%s:%d: %s -> %s: %s\n", __FILE__, __LINE__, #call,              \
              dbl_status_name(st_), dbl_last_error());                                \
      ++failures;                                                                     \
    }                                                                                 \
  } while (0)

static void test_kernels(const char* dir) {
  dbl_kernel* k = NULL;
  EXPECT_OK(dbl_kernel_linear(13, 30.0, 9.0, &k));
  int size = 0;
  EXPECT_OK(dbl_kernel_size(k, &size));
  EXPECT(size == 13);
  double v[169], sum = 0.0;
  EXPECT_OK(dbl_kernel_values(k, v, 169));
  for (int i = 0; i < 169; ++i) sum += v[i];
  EXPECT(fabs(sum - 1.0) < 1e-9);
  EXPECT(dbl_kernel_values(k, v, 10) == DBL_ERR_PARAMETER);

  char path[512];
  snprintf(path, sizeof path, "%s/k.psf", dir);
  EXPECT_OK(dbl_kernel_save(k, path));
  dbl_kernel* back = NULL;
  EXPECT_OK(dbl_kernel_load(path, &back));
  double w[169];
  EXPECT_OK(dbl_kernel_values(back, w, 169));
  EXPECT(memcmp(v, w, sizeof v) == 0);
  char* info = NULL;
  EXPECT_OK(dbl_kernel_describe(back, 32, 32, &info));
  EXPECT(info && strstr(info, "\"size\": 13"));
  dbl_string_free(info);
  snprintf(path, sizeof path, "%s/spec.png", dir);
  EXPECT_OK(dbl_kernel_save_spectrum(k, 32, 32, 1, path));
  dbl_kernel_free(k);
  dbl_kernel_free(back);

  EXPECT(dbl_kernel_linear(12, 0.0, 5.0, &k) == DBL_ERR_PARAMETER);
  EXPECT(strlen(dbl_last_error()) > 0);
  EXPECT(dbl_kernel_trajectory(13, 1, 1.0, NULL) == DBL_ERR_INVALID_ARGUMENT);
  EXPECT(dbl_kernel_load("/nonexistent/x.psf", &k) == DBL_ERR_IO);
  dbl_kernel_free(NULL);
}

static void test_images(void) {
  enum { H = 32, W = 32, C = 3 };
  static double px[H * W * C];
  unsigned s = 7;
  for (int i = 0; i < H * W * C; ++i) {
    s = s * 1103515245u + 12345u;
    px[i] = (double)(s >> 8 & 0xFFFF) / 65535.0;
  }
  dbl_image* sharp = NULL;
  EXPECT_OK(dbl_image_create(H, W, C, px, &sharp));
  size_t h = 0, w = 0, c = 0;
  EXPECT_OK(dbl_image_shape(sharp, &h, &w, &c));
  EXPECT(h == H && w == W && c == C);

  dbl_kernel* k = NULL;
  EXPECT_OK(dbl_kernel_trajectory(7, 3, 1.0, &k));
  dbl_image* blurred = NULL;
  EXPECT_OK(dbl_image_blur(sharp, k, 0.0, "circular", 0, &blurred));
  dbl_image* restored = NULL;
  EXPECT_OK(dbl_image_deconvolve(blurred, k, "richardson_lucy", "{\"iterations\": 30}", &restored));
  double before = 0.0, after = 0.0, same = 0.0;
  EXPECT_OK(dbl_image_psnr(blurred, sharp, &before));
  EXPECT_OK(dbl_image_psnr(restored, sharp, &after));
  EXPECT(after > before);
  EXPECT_OK(dbl_image_ssim(sharp, sharp, &same));
  EXPECT(same == 1.0);
  EXPECT(dbl_image_deconvolve(blurred, k, "magic", NULL, &restored) == DBL_ERR_PARAMETER);
  EXPECT(dbl_image_deconvolve(blurred, k, "wiener", "{\"nsr\": \"x\"}", &restored) == DBL_ERR_CONFIG);
  EXPECT(dbl_image_blur(sharp, k, 0.0, "reflect", 0, NULL) == DBL_ERR_INVALID_ARGUMENT);

  dbl_image* small = NULL;
  EXPECT_OK(dbl_image_create(8, 8, 3, NULL, &small));
  double p = 0.0;
  EXPECT(dbl_image_psnr(small, sharp, &p) == DBL_ERR_DIMENSION);

  dbl_image_free(small);
  dbl_image_free(restored);
  dbl_image_free(blurred);
  dbl_image_free(sharp);
  dbl_kernel_free(k);
}

static void test_pipeline(const char* dir) {
  char* out = NULL;
  EXPECT_OK(dbl_default_config("train", 0, &out));
  EXPECT(out && strstr(out, "\"epochs_max\": 100"));
  dbl_string_free(out);
  EXPECT(dbl_default_config("nope", 0, &out) == DBL_ERR_PARAMETER);

  char req[1024];
  snprintf(req, sizeof req,
           "{\"out_dir\": \"%s/corpus\", \"jobs\": 2, \"corpus\": {\"count\": 6, \"sizes\": \"5:7:2\","
           " \"img_size\": [32, 32], \"source\": \"text\", \"seed\": 3}}",
           dir);
  out = NULL;
  EXPECT_OK(dbl_corpus_build(req, &out));
  EXPECT(out && strstr(out, "\"00005\""));
  dbl_string_free(out);

  snprintf(req, sizeof req,
           "{\"blurred_dir\": \"%s/corpus/blurred\", \"sharp_dir\": \"%s/corpus/sharp\", \"img_size\": 32,"
           " \"split\": {\"counts\": [3, 1, 2]}, \"seed\": 9}",
           dir, dir);
  out = NULL;
  EXPECT_OK(dbl_stats(req, &out));
  EXPECT(out && strstr(out, "\"test\""));
  dbl_string_free(out);

  snprintf(req, sizeof req,
           "{\"blurred_dir\": \"%s/corpus/blurred\", \"sharp_dir\": \"%s/corpus/sharp\","
           " \"split\": {\"counts\": [3, 1, 2]}, \"seed\": 9, \"out_dir\": \"%s/run\","
           " \"model\": {\"img_size\": [32, 32], \"encoder_channels\": [8, 8, 8, 16, 16], \"token_channels\": 8,"
           " \"embed_dim\": 16, \"num_heads\": 2, \"mlp_dim\": 32, \"num_layers\": 1, \"patch_px\": 8,"
           " \"vit_out_channels\": 4, \"decoder_channels\": [16, 8, 8]},"
           " \"train\": {\"epochs_max\": 2, \"lr\": 0.001}}",
           dir, dir, dir);
  out = NULL;
  EXPECT_OK(dbl_train(req, NULL, NULL, &out));
  EXPECT(out && strstr(out, "\"epochs\": 2"));
  dbl_string_free(out);

  snprintf(req, sizeof req,
           "{\"blurred_dir\": \"%s/corpus/blurred\", \"sharp_dir\": \"%s/corpus/sharp\","
           " \"split\": {\"counts\": [3, 1, 2]}, \"seed\": 9, \"checkpoint\": \"%s/run/best.dbck\","
           " \"eval_split\": \"test\"}",
           dir, dir, dir);
  out = NULL;
  EXPECT_OK(dbl_eval(req, &out));
  EXPECT(out && strstr(out, "\"count\": 2") && strstr(out, "32.2"));
  dbl_string_free(out);

  snprintf(req, sizeof req, "{\"input\": \"%s/corpus/blurred/00000.png\", \"output\": \"%s/d.png\","
           " \"kernel\": \"%s/corpus/kernels/00000.psf\", \"method\": \"wiener\"}", dir, dir, dir);
  out = NULL;
  EXPECT_OK(dbl_deblur(req, &out));
  dbl_string_free(out);
  EXPECT(dbl_deblur("{\"input\": \"a.png\", \"output\": \"b.png\"}", &out) == DBL_ERR_PARAMETER);
  EXPECT(dbl_stats("{\"blurred_dir\": \"/nonexistent\", \"sharp_dir\": \"/nonexistent\"}", &out) == DBL_ERR_IO);
  EXPECT(dbl_stats("[1,", &out) == DBL_ERR_CONFIG);
  EXPECT(dbl_gradcheck("{\"bogus\": 1}", &out) == DBL_ERR_CONFIG);
}

int main(int argc, char** argv) {
  const char* dir = argc > 1 ? argv[1] : "capi_tmp";
  test_kernels(dir);
  test_images();
  test_pipeline(dir);
  if (failures) {
    fprintf(stderr, "%d failure(s)\n", failures);
    return 1;
  }
  printf("C API tests passed (%s)\n", dbl_version());
  return 0;
}
