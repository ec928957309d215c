#ifndef BUBBLESTEREO_H
#define BUBBLESTEREO_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum BsStatus {
  BS_STATUS_OK = 0,
  BS_STATUS_NULL_ARGUMENT = 1,
  BS_STATUS_INVALID_ARGUMENT = 2,
  // Bad configuration or calibration input.
  BS_STATUS_CONFIG = 3,
  // The two clocks could not be related.
  BS_STATUS_UNSYNCHRONIZABLE = 4,
  // A geometric computation had no valid answer.
  BS_STATUS_GEOMETRY = 5,
  BS_STATUS_IO = 6,
  BS_STATUS_PANIC = 7,
} BsStatus;

// Opaque stream report.
typedef struct BsReport BsReport;

// Opaque stereo rig.
typedef struct BsRig BsRig;

// Ellipsoid in camera-1 coordinates (mm). `rotation` is row-major; its columns are the axis directions.
typedef struct BsEllipsoid {
  double center[3];
  double rotation[9];
  double semi_axes[3];
} BsEllipsoid;

// Parametric ellipse in ideal pixels; `a ≥ b`, `theta` is the major-axis angle.
typedef struct BsEllipse {
  double u;
  double v;
  double a;
  double b;
  double theta;
} BsEllipse;

typedef struct BsReportSummary {
  uint64_t bubble_count;
  double duration_s;
  double total_volume_ml;
  double flow_rate_ml_s;
  double mean_diameter_mm;
  double std_diameter_mm;
  double mean_rise_velocity_cm_s;
  uint64_t merged_bubbles;
} BsReportSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *bs_version(void);

// Message of the last failure on this thread, or null. Valid until the next failing call.
const char *bs_last_error(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or come from a `bs_*` function that returns an owned string.
void bs_string_free(char *s);

// The built-in laboratory rig.
//
// # Safety
// `out` must be valid for writes.
enum BsStatus bs_rig_laboratory(struct BsRig **out);

// Loads a calibration file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for writes.
enum BsStatus bs_rig_load(const char *path, struct BsRig **out);

// Writes a calibration file.
//
// # Safety
// `rig` must be a live handle and `path` a NUL-terminated string.
enum BsStatus bs_rig_save(const struct BsRig *rig, const char *path, bool recalibrated);

// # Safety
// `rig` must be null or a handle not freed before.
void bs_rig_free(struct BsRig *rig);

// Symmetric epipolar distance (px) of an ideal-pixel correspondence.
//
// # Safety
// `rig` must be a live handle, `x1`/`x2` point to two doubles, `out` valid for writes.
enum BsStatus bs_rig_epipolar_distance(const struct BsRig *rig,
                                       const double (*x1)[2],
                                       const double (*x2)[2],
                                       double *out);

// Point closest to both optical axes, camera-1 frame (mm).
//
// # Safety
// `rig` must be a live handle and `out` point to three writable doubles.
enum BsStatus bs_rig_axes_crossing(const struct BsRig *rig, double (*out)[3]);

// Outline of an ellipsoid in one camera (1 or 2), ideal pixels.
//
// # Safety
// Pointers must be valid; `rig` a live handle.
enum BsStatus bs_project_ellipsoid(const struct BsRig *rig,
                                   const struct BsEllipsoid *ellipsoid,
                                   uint32_t camera,
                                   struct BsEllipse *out);

// Ellipsoid from one outline per camera: closed-form start, then least-squares
// refinement against `samples` points of each outline. `rms_px` may be null.
//
// # Safety
// Pointers must be valid; `rig` a live handle.
enum BsStatus bs_reconstruct(const struct BsRig *rig,
                             const struct BsEllipse *ellipse1,
                             const struct BsEllipse *ellipse2,
                             size_t samples,
                             struct BsEllipsoid *out,
                             double *rms_px);

// Diameter of the sphere with the ellipsoid's volume, mm.
//
// # Safety
// Pointers must be valid.
enum BsStatus bs_equivalent_diameter(const struct BsEllipsoid *ellipsoid, double *out);

// Minimum-cost maximum-cardinality assignment on a dense `rows × cols` cost
// matrix (row-major). Non-finite entries mark forbidden pairs. `row_to_col[i]`
// receives the matched column or -1; `total_cost` may be null.
//
// # Safety
// `costs` must hold `rows * cols` doubles and `row_to_col` `rows` writable slots.
enum BsStatus bs_solve_assignment(const double *costs,
                                  size_t rows,
                                  size_t cols,
                                  int64_t *row_to_col,
                                  double *total_cost);

// Renders a synthetic scene into `out_dir` (which must be empty or absent).
// `scene_config` may be null for the defaults.
//
// # Safety
// Strings must be NUL-terminated.
enum BsStatus bs_simulate(const char *scene_config, const char *out_dir);

// Runs the whole pipeline from a JSON config file.
//
// # Safety
// `config` must be NUL-terminated and `out` valid for writes.
enum BsStatus bs_run(const char *config, struct BsReport **out);

// # Safety
// Pointers must be valid; `report` a live handle.
enum BsStatus bs_report_summary(const struct BsReport *report, struct BsReportSummary *out);

// The full report as JSON; release with [`bs_string_free`].
//
// # Safety
// Pointers must be valid; `report` a live handle.
enum BsStatus bs_report_json(const struct BsReport *report, char **out);

// Writes report.json and the CSV files into `dir`.
//
// # Safety
// `report` must be a live handle and `dir` NUL-terminated.
enum BsStatus bs_report_write(const struct BsReport *report, const char *dir);

// # Safety
// `report` must be null or a handle not freed before.
void bs_report_free(struct BsReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BUBBLESTEREO_H */
