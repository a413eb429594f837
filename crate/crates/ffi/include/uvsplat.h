#ifndef UVSPLAT_H
#define UVSPLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum UvsStatus {
  UVS_STATUS_OK = 0,
  UVS_STATUS_NULL_POINTER = 1,
  UVS_STATUS_INVALID_ARGUMENT = 2,
  UVS_STATUS_IO = 3,
  UVS_STATUS_FORMAT = 4,
  UVS_STATUS_CONFIG = 5,
  UVS_STATUS_NUMERIC = 6,
  UVS_STATUS_DIVERGED = 7,
  UVS_STATUS_GEOMETRY = 8,
  UVS_STATUS_PANIC = 9,
} UvsStatus;

/**
 * Which assembly a render uses.
 */
typedef enum UvsRenderPath {
  /**
   * Base appearance on the stage-1 geometry.
   */
  UVS_RENDER_PATH_BASE = 0,
  /**
   * Base plus residual with geometric deltas.
   */
  UVS_RENDER_PATH_FUSED = 1,
  /**
   * Fused, with the residual sampled at the undeformed uv.
   */
  UVS_RENDER_PATH_FUSED_NO_RESAMPLE = 2,
  /**
   * Residual field alone (single-stage ablation).
   */
  UVS_RENDER_PATH_RESIDUAL_ONLY = 3,
} UvsRenderPath;

/**
 * A trained or loaded avatar together with its configuration.
 */
typedef struct UvsAvatar UvsAvatar;

/**
 * A synthetic scene: rig, frames and ground-truth images.
 */
typedef struct UvsScene UvsScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *uvs_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *uvs_version(void);

/**
 * Generates a synthetic scene. `preset` is "static", "linear" or "nonlinear".
 */
enum UvsStatus uvs_scene_generate(const char *preset,
                                  uint64_t seed,
                                  size_t num_frames,
                                  size_t image_size,
                                  struct UvsScene **out);

/**
 * Reads a scene bundle directory.
 */
enum UvsStatus uvs_scene_load(const char *dir, struct UvsScene **out);

/**
 * Writes a scene bundle directory.
 */
enum UvsStatus uvs_scene_save(const struct UvsScene *scene, const char *dir);

/**
 * Frame count and image size of a scene. Any output pointer may be null.
 */
enum UvsStatus uvs_scene_info(const struct UvsScene *scene,
                              size_t *num_frames,
                              size_t *width,
                              size_t *height);

/**
 * Copies the ground-truth image of `frame` (row-major RGB, `w*h*3` values).
 */
enum UvsStatus uvs_scene_ground_truth(const struct UvsScene *scene,
                                      size_t frame,
                                      double *rgb,
                                      size_t len);

void uvs_scene_free(struct UvsScene *scene);

/**
 * Trains an avatar on `scene`. `config_toml` is a project configuration;
 * its `scene` and `output` paths are ignored. Runs stage 1 and then stage 2.
 */
enum UvsStatus uvs_train(const struct UvsScene *scene,
                         const char *config_toml,
                         struct UvsAvatar **out);

/**
 * Loads a checkpoint for rendering frames of `scene`.
 */
enum UvsStatus uvs_avatar_load(const char *path,
                               const struct UvsScene *scene,
                               struct UvsAvatar **out);

/**
 * Writes the avatar as a checkpoint.
 */
enum UvsStatus uvs_avatar_save(const struct UvsAvatar *avatar, const char *path);

/**
 * Number of Gaussians in the avatar's cloud.
 */
enum UvsStatus uvs_avatar_num_gaussians(const struct UvsAvatar *avatar, size_t *out);

/**
 * Renders `frame` of `scene` into `rgb` (row-major RGB, `w*h*3` values).
 */
enum UvsStatus uvs_avatar_render(const struct UvsAvatar *avatar,
                                 const struct UvsScene *scene,
                                 size_t frame,
                                 enum UvsRenderPath path,
                                 double *rgb,
                                 size_t len);

void uvs_avatar_free(struct UvsAvatar *avatar);

/**
 * Runs every finite-difference suite; `passed` receives 1 when all pass.
 */
enum UvsStatus uvs_gradcheck(uint64_t seed, size_t instances, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UVSPLAT_H */
