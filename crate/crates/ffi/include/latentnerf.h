#ifndef LATENTNERF_H
#define LATENTNERF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum LnrfStatus {
  LNRF_STATUS_OK = 0,
  LNRF_STATUS_NULL_POINTER = 1,
  LNRF_STATUS_INVALID_ARGUMENT = 2,
  LNRF_STATUS_IO = 3,
  LNRF_STATUS_RUNTIME = 4,
  LNRF_STATUS_PANIC = 5,
} LnrfStatus;

/**
 * Bounding volume hierarchy with its own copy of the mesh.
 */
typedef struct LnrfBvh LnrfBvh;

/**
 * Trained radiance field.
 */
typedef struct LnrfField LnrfField;

/**
 * Triangle mesh.
 */
typedef struct LnrfMesh LnrfMesh;

/**
 * Noise schedule.
 */
typedef struct LnrfSchedule LnrfSchedule;

/**
 * Closest-point and winding query result.
 */
typedef struct LnrfSurfaceQuery {
  double winding;
  double distance;
  double closest[3];
} LnrfSurfaceQuery;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 */
size_t lnrf_last_error(char *buf, size_t len);

/**
 * Writes the 3x4 row-major latent-to-RGB matrix into `out12`.
 */
enum LnrfStatus lnrf_rgb_adapter_matrix(double *out12);

/**
 * Builds a mesh from `n_vertices` xyz triples and `n_triangles` index
 * triples.
 */
enum LnrfStatus lnrf_mesh_new(const double *vertices,
                              size_t n_vertices,
                              const uint32_t *triangles,
                              size_t n_triangles,
                              struct LnrfMesh **out_mesh);

enum LnrfStatus lnrf_mesh_load_obj(const char *path_utf8, struct LnrfMesh **out_mesh);

enum LnrfStatus lnrf_mesh_triangle_count(const struct LnrfMesh *mesh, size_t *out_count);

void lnrf_mesh_free(struct LnrfMesh *mesh);

enum LnrfStatus lnrf_bvh_new(const struct LnrfMesh *mesh, struct LnrfBvh **out_bvh);

void lnrf_bvh_free(struct LnrfBvh *bvh);

/**
 * Winding number at `point3`. `exact != 0` sums every triangle; otherwise
 * the hierarchical approximation with accuracy parameter `beta` is used.
 */
enum LnrfStatus lnrf_winding_number(const struct LnrfBvh *bvh,
                                    const double *point3,
                                    int32_t exact,
                                    double beta,
                                    double *out_winding);

enum LnrfStatus lnrf_surface_query(const struct LnrfBvh *bvh,
                                   const double *point3,
                                   double beta,
                                   struct LnrfSurfaceQuery *out_query);

/**
 * Sketch occupancy loss over `n` points; `out_grad` receives dL/dalpha.
 */
enum LnrfStatus lnrf_sketch_loss(const double *alphas,
                                 const double *labels,
                                 const double *distances,
                                 size_t n,
                                 double sigma_s,
                                 double *out_loss,
                                 double *out_grad);

/**
 * Mean binary entropy of `n` blend weights and its gradient.
 */
enum LnrfStatus lnrf_sparsity_loss(const double *w_blend,
                                   size_t n,
                                   double *out_loss,
                                   double *out_grad);

/**
 * Linear-beta schedule. `weight_mode` 0 is uniform, 1 is `1 - alpha_bar`.
 */
enum LnrfStatus lnrf_schedule_new(size_t timesteps,
                                  double beta_start,
                                  double beta_end,
                                  int32_t weight_mode,
                                  struct LnrfSchedule **out_schedule);

enum LnrfStatus lnrf_schedule_alpha_bar(const struct LnrfSchedule *schedule,
                                        size_t t,
                                        double *out_alpha_bar);

void lnrf_schedule_free(struct LnrfSchedule *schedule);

/**
 * Score-distillation gradient of `x` against a Dirac denoiser centred on
 * `target`, for timestep `t` and noise `eps`. All images are
 * channel-major `c * h * w`.
 */
enum LnrfStatus lnrf_dirac_sds(const struct LnrfSchedule *schedule,
                               const double *x,
                               const double *target,
                               const double *eps,
                               size_t c,
                               size_t h,
                               size_t w,
                               size_t t,
                               double *out_grad);

/**
 * Loads a field checkpoint. `config_path` may be null for the default
 * architecture.
 */
enum LnrfStatus lnrf_field_load(const char *checkpoint_path,
                                const char *config_path,
                                struct LnrfField **out_field);

/**
 * Channels rendered by the field: 4 in latent mode, 3 in RGB mode.
 */
enum LnrfStatus lnrf_field_channels(const struct LnrfField *field, size_t *out_channels);

/**
 * Renders an orbit view into `out_image` (`channels * resolution^2`
 * values, channel-major). Angles in radians.
 */
enum LnrfStatus lnrf_field_render(const struct LnrfField *field,
                                  double azimuth,
                                  double elevation,
                                  double radius,
                                  double fov_y,
                                  size_t resolution,
                                  double *out_image,
                                  size_t out_len);

/**
 * Point occupancy `1 - exp(-delta_ref * sigma)` at `point3`.
 */
enum LnrfStatus lnrf_field_occupancy(const struct LnrfField *field,
                                     const double *point3,
                                     double *out_occupancy);

void lnrf_field_free(struct LnrfField *field);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATENTNERF_H */
