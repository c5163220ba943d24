/* C ABI for the proxops GNC library.
 *
 * Conventions:
 *   - every function returns a px_status code (PX_OK = 0 on success);
 *   - results travel through out-parameters;
 *   - heap objects are opaque handles released by their paired _free;
 *   - a mesh handle must outlive scanners bound to it, and a policy handle
 *     must outlive its sessions;
 *   - handles are not thread-safe; share read-only handles across threads
 *     only without concurrent mutation (sessions mutate on push).
 */

#ifndef PROXOPS_H
#define PROXOPS_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. */
enum px_status {
  PX_OK = 0,
  PX_NULL_ARGUMENT = 1,
  PX_INVALID_UTF8 = 2,
  PX_PARSE_ERROR = 3,
  PX_OPEN_MESH = 4,
  PX_INVERTED_MESH = 5,
  PX_IO_ERROR = 6,
  PX_INSIDE_BODY = 7,
  PX_SURFACE_SINGULARITY = 8,
  PX_BAD_CONFIG = 9,
  PX_BAD_CHECKPOINT = 10,
  PX_BUFFER_TOO_SMALL = 11,
  PX_EMPTY_BUFFER = 12,
  PX_INTERNAL_ERROR = 99
};

/* Opaque handles. */
typedef struct PxMesh PxMesh;
typedef struct PxScanner PxScanner;
typedef struct PxSurrogate PxSurrogate;
typedef struct PxPolicy PxPolicy;
typedef struct PxPolicySession PxPolicySession;

typedef struct PxMeshInfo {
  uint64_t n_vertices;
  uint64_t n_faces;
  double bounding_radius_m;
  double volume_m3;
} PxMeshInfo;

/* Library version string (static storage). */
const char *px_version(void);

/* Meshes and the gravity field. Positions/vectors are double[3], SI units. */
int32_t px_mesh_load_obj(const char *path, PxMesh **out);
void px_mesh_free(PxMesh *mesh);
int32_t px_mesh_info(const PxMesh *mesh, PxMeshInfo *out);

int32_t px_gravity_accel(const PxMesh *mesh, double density_kg_m3,
                         double gravitational_constant, const double *position,
                         double *out_accel);
int32_t px_gravity_potential(const PxMesh *mesh, double density_kg_m3,
                             double gravitational_constant,
                             const double *position, double *out_potential);
/* out_inside: 1 interior, 0 exterior. */
int32_t px_classify_point(const PxMesh *mesh, const double *position,
                          int32_t *out_inside);
/* out_hit: 1 hit (distance written), 0 miss. direction should be unit. */
int32_t px_raycast(const PxMesh *mesh, const double *origin,
                   const double *direction, double *out_distance,
                   int32_t *out_hit);

/* Lidar scanner: n_planes fans of rays_per_plane rays; frames are row-major
 * by azimuth with misses written as -100. */
int32_t px_scanner_new(const PxMesh *mesh, uint32_t n_planes,
                       uint32_t rays_per_plane, double max_range_m,
                       PxScanner **out);
void px_scanner_free(PxScanner *scanner);
uint64_t px_scanner_frame_len(const PxScanner *scanner);
int32_t px_scanner_scan(const PxScanner *scanner, const double *position,
                        float *out_ranges, uint64_t out_len);

/* Dual-threshold viability check (newtons, radians). out_viable: 1/0;
 * out_angle: inter-command angle, or -1 when the angle branch was skipped
 * because a command fell below eta_zero. */
int32_t px_viability_check(const double *u_mpc, const double *u_model,
                           double eps_magnitude_n, double eps_angle_rad,
                           double eta_zero_n, int32_t *out_viable,
                           double *out_magnitude_error, double *out_angle);

/* Position-to-frame surrogate. */
int32_t px_surrogate_load(const char *path, PxSurrogate **out);
void px_surrogate_free(PxSurrogate *surrogate);
uint64_t px_surrogate_frame_len(const PxSurrogate *surrogate);
int32_t px_surrogate_frame(const PxSurrogate *surrogate,
                           const double *position, float *out_ranges,
                           uint64_t out_len);

/* Imitation policy: push raw frames, then infer a thrust command (newtons)
 * from the buffered frames and the goal state. */
int32_t px_policy_load(const char *path, PxPolicy **out);
void px_policy_free(PxPolicy *policy);
uint64_t px_policy_frame_len(const PxPolicy *policy);
int32_t px_policy_session_new(const PxPolicy *policy, PxPolicySession **out);
void px_policy_session_free(PxPolicySession *session);
int32_t px_policy_session_push(PxPolicySession *session, const float *ranges,
                               uint64_t len);
int32_t px_policy_infer(const PxPolicySession *session,
                        const double *goal_position,
                        const double *goal_velocity, double *out_force);

/* Declared energy model: (model_time * model_tdp) / (expert_time * expert_tdp). */
int32_t px_energy_ratio(double expert_time_s, double expert_tdp_w,
                        double model_time_s, double model_tdp_w,
                        double *out_ratio);

#ifdef __cplusplus
}
#endif

#endif /* PROXOPS_H */
