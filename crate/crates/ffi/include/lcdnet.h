#ifndef LCDNET_H
#define LCDNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every call.
 */
typedef enum LcdStatus {
  LCD_STATUS_OK = 0,
  LCD_STATUS_NULL_POINTER = 1,
  LCD_STATUS_INVALID_ARGUMENT = 2,
  LCD_STATUS_DIMENSION = 3,
  LCD_STATUS_CONFIG = 4,
  LCD_STATUS_IO = 5,
  LCD_STATUS_CHECKPOINT = 6,
  LCD_STATUS_NUMERIC = 7,
  LCD_STATUS_PANIC = 8,
} LcdStatus;

/**
 * Opaque model handle.
 */
typedef struct LcdModel LcdModel;

/**
 * Cost of one forward pass.
 */
typedef struct LcdComplexity {
  uint64_t param_count;
  uint64_t mac_count;
  /**
   * Parameter storage at 4 bytes per value.
   */
  uint64_t model_bytes;
} LcdComplexity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library on the same thread.
 */
const char *lcd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lcd_version(void);

/**
 * Creates a model with Gaussian-initialised weights.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum LcdStatus lcd_model_new(uint64_t seed, struct LcdModel **out);

/**
 * Loads a checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum LcdStatus lcd_model_load(const char *path, struct LcdModel **out);

/**
 * Writes a checkpoint atomically.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum LcdStatus lcd_model_save(const struct LcdModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void lcd_model_free(struct LcdModel *model);

/**
 * Number of learnable parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
uint64_t lcd_model_param_count(const struct LcdModel *model);

/**
 * Parameter, MAC and size accounting for an `height x width` input.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum LcdStatus lcd_model_complexity(const struct LcdModel *model,
                                    size_t height,
                                    size_t width,
                                    struct LcdComplexity *out);

/**
 * Extent of the density map produced for an `height x width` image.
 *
 * # Safety
 * `out_height` and `out_width` must be writable.
 */
enum LcdStatus lcd_output_size(size_t height, size_t width, size_t *out_height, size_t *out_width);

/**
 * Runs the network on one planar RGB image. `out` must hold at least
 * `ceil(height / 2) * ceil(width / 2)` values (`out_len`).
 *
 * # Safety
 * `image` must point to `3 * height * width` readable values and `out` to
 * `out_len` writable values.
 */
enum LcdStatus lcd_model_forward(const struct LcdModel *model,
                                 const double *image,
                                 size_t height,
                                 size_t width,
                                 double *out,
                                 size_t out_len);

/**
 * Predicted object count for one planar RGB image.
 *
 * # Safety
 * As for [`lcd_model_forward`]; `count` must be writable.
 */
enum LcdStatus lcd_model_count(const struct LcdModel *model,
                               const double *image,
                               size_t height,
                               size_t width,
                               double *count);

/**
 * Renders a full-resolution density map from `n_points` interleaved
 * `(x, y)` pairs with a fixed kernel width. `out` receives
 * `height * width` values.
 *
 * # Safety
 * `points` must hold `2 * n_points` values (it may be null when
 * `n_points` is 0) and `out` `out_len` writable values.
 */
enum LcdStatus lcd_render_density_fixed(const double *points,
                                        size_t n_points,
                                        size_t width,
                                        size_t height,
                                        double sigma,
                                        double *out,
                                        size_t out_len);

/**
 * As [`lcd_render_density_fixed`] with kernel width `beta` times the mean
 * distance to the `k` nearest neighbours.
 *
 * # Safety
 * See [`lcd_render_density_fixed`].
 */
enum LcdStatus lcd_render_density_adaptive(const double *points,
                                           size_t n_points,
                                           size_t width,
                                           size_t height,
                                           size_t k,
                                           double beta,
                                           double *out,
                                           size_t out_len);

/**
 * 2x2 sum pooling of a `height x width` map into
 * `ceil(height / 2) * ceil(width / 2)` values; total mass is preserved.
 *
 * # Safety
 * `map` must hold `height * width` values and `out` `out_len`.
 */
enum LcdStatus lcd_downscale(const double *map,
                             size_t height,
                             size_t width,
                             double *out,
                             size_t out_len);

/**
 * Mean absolute error between `n` predicted and true counts.
 *
 * # Safety
 * `pred` and `gt` must hold `n` values; `out` must be writable.
 */
enum LcdStatus lcd_mae(const double *pred, const double *gt, size_t n, double *out);

/**
 * GAME of one map pair over a `rows x cols` patch grid.
 *
 * # Safety
 * Both maps must hold `height * width` values; `out` must be writable.
 */
enum LcdStatus lcd_game(const double *pred,
                        const double *gt,
                        size_t height,
                        size_t width,
                        size_t rows,
                        size_t cols,
                        double *out);

/**
 * Whole-map SSIM with automatically derived constants.
 *
 * # Safety
 * Both maps must hold `height * width` values; `out` must be writable.
 */
enum LcdStatus lcd_ssim(const double *pred,
                        const double *gt,
                        size_t height,
                        size_t width,
                        double *out);

/**
 * PSNR in dB. A `max_value` of NaN selects the ground-truth maximum;
 * identical maps give positive infinity.
 *
 * # Safety
 * Both maps must hold `height * width` values; `out` must be writable.
 */
enum LcdStatus lcd_psnr(const double *pred,
                        const double *gt,
                        size_t height,
                        size_t width,
                        double max_value,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LCDNET_H */
