#ifndef POLYCUBE_H
#define POLYCUBE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_POINTER = 1,
  PC_STATUS_PARAMETER = 2,
  PC_STATUS_TOPOLOGY = 3,
  PC_STATUS_DEGENERATE_GEOMETRY = 4,
  PC_STATUS_MALFORMED_CONTEXT = 5,
  PC_STATUS_LAYOUT = 6,
  PC_STATUS_UNSUPPORTED = 7,
  PC_STATUS_IO = 8,
  PC_STATUS_NO_CANDIDATE = 9,
  PC_STATUS_PANIC = 10,
  PC_STATUS_OTHER = 11,
} PcStatus;

typedef struct PcContext PcContext;

typedef struct PcHexMesh PcHexMesh;

typedef struct PcMesh PcMesh;

typedef struct PcTensor PcTensor;

// Message of the last failed call on this thread, or NULL. Valid until the next call.
const char *pc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pc_version(void);

// Releases a string returned by this library.
void pc_string_free(char *s);

// Builds a mesh from `n_vertices` xyz triples and `n_faces` index triples.
enum PcStatus pc_mesh_from_arrays(const double *vertices,
                                  size_t n_vertices,
                                  const uint32_t *faces,
                                  size_t n_faces,
                                  struct PcMesh **out);

// Primitive mesh of category `category` (1..10) with the default hole proportions.
enum PcStatus pc_mesh_primitive(uint8_t category, double edge, struct PcMesh **out);

enum PcStatus pc_mesh_read_obj(const char *path, struct PcMesh **out);

enum PcStatus pc_mesh_counts(const struct PcMesh *mesh, size_t *vertices, size_t *faces);

// Genus summed over components; fails with `Topology` for open or non-orientable meshes.
enum PcStatus pc_mesh_genus(const struct PcMesh *mesh, int64_t *genus);

void pc_mesh_free(struct PcMesh *mesh);

// Context from 12 cell labels, each in 0..10 (0 is null).
enum PcStatus pc_context_from_labels(const uint8_t *labels, struct PcContext **out);

// Context from its 132-character bitstring.
enum PcStatus pc_context_from_bitstring(const char *bits, struct PcContext **out);

// Writes the 12 cell labels into `labels`.
enum PcStatus pc_context_labels(const struct PcContext *ctx, uint8_t *labels);

enum PcStatus pc_context_genus(const struct PcContext *ctx, int64_t *genus);

void pc_context_free(struct PcContext *ctx);

// Ideal tensor of a context: each occupied cell holds its category template.
enum PcStatus pc_tensor_ideal(const struct PcContext *ctx,
                              uint64_t library_seed,
                              struct PcTensor **out);

enum PcStatus pc_tensor_read(const char *path, struct PcTensor **out);

enum PcStatus pc_tensor_write(const struct PcTensor *t, const char *path);

// Number of scalars in a tensor (64 * 96 * 3).
size_t pc_tensor_len(void);

// Copies the row-major (row, col, channel) values into `buf`, which holds `len` doubles.
enum PcStatus pc_tensor_copy(const struct PcTensor *t, double *buf, size_t len);

void pc_tensor_free(struct PcTensor *t);

// GOCC + TCV. Non-positive thresholds select the defaults.
enum PcStatus pc_verify(const struct PcTensor *t,
                        const struct PcContext *ctx,
                        uint64_t library_seed,
                        double tau_active,
                        double tau_cd,
                        double p,
                        int32_t *passed,
                        double *total_d_target);

// Automated context search with the template-projection denoiser. On success
// `*report_json` receives the full search report (free with `pc_string_free`);
// `NoCandidate` is returned, with the report still set, when nothing verified.
enum PcStatus pc_search_auto(const struct PcMesh *mesh,
                             size_t resolution,
                             uint64_t seed,
                             char **report_json);

// Structured hex mesh of a cube-only context with `n` elements per cell edge.
enum PcStatus pc_hex_from_context(const struct PcContext *ctx, size_t n, struct PcHexMesh **out);

enum PcStatus pc_hex_summary(const struct PcHexMesh *hex,
                             size_t *vertices,
                             size_t *elements,
                             double *min_scaled_jacobian);

void pc_hex_free(struct PcHexMesh *hex);

// Number of occupancy patterns of the 12-cell grid with at least `min_occupied` cells.
enum PcStatus pc_count_occupancy_patterns(size_t min_occupied, uint64_t *count);

#endif  /* POLYCUBE_H */
