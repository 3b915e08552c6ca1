#ifndef TAPCAM_TAPCAM_H
#define TAPCAM_TAPCAM_H

/* C interface to the threshold-match CAM simulator. Every call returns a
 * status; on failure tapcam_last_error() holds a message for the calling
 * thread. Handles are owned by the caller and released with *_free. */

#include <stddef.h>

#if defined(TAPCAM_BUILDING_LIBRARY)
#define TAPCAM_API __attribute__((visibility("default")))
#else
#define TAPCAM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tapcam_status {
  TAPCAM_OK = 0,
  TAPCAM_ERR_USAGE = 1,
  TAPCAM_ERR_INFEASIBLE = 2,
  TAPCAM_ERR_DATA = 3,
  TAPCAM_ERR_NUMERIC = 4,
  TAPCAM_ERR_INTERNAL = 5
} tapcam_status;

typedef struct tapcam_config tapcam_config;
typedef struct tapcam_array tapcam_array;
typedef struct tapcam_calibration tapcam_calibration;
typedef struct tapcam_search_result tapcam_search_result;

TAPCAM_API const char* tapcam_last_error(void);

/* config */
TAPCAM_API tapcam_status tapcam_config_create(tapcam_config** out);
TAPCAM_API tapcam_status tapcam_config_load(const char* path,
                                            tapcam_config** out);
/* key is "section.name"; value is JSON text or a bare string */
TAPCAM_API tapcam_status tapcam_config_set(tapcam_config* cfg, const char* key,
                                           const char* value);
/* writes 16 hex digits plus NUL; len must be >= 17 */
TAPCAM_API tapcam_status tapcam_config_hash(const tapcam_config* cfg,
                                            char* buf, size_t len);
TAPCAM_API tapcam_status tapcam_config_out_dir(const tapcam_config* cfg,
                                               char* buf, size_t len);
TAPCAM_API tapcam_status tapcam_config_write(const tapcam_config* cfg,
                                             const char* path);
TAPCAM_API void tapcam_config_free(tapcam_config* cfg);

/* array file: one row per line over {0,1,X} */
TAPCAM_API tapcam_status tapcam_array_load(const tapcam_config* cfg,
                                           const char* path,
                                           tapcam_array** out);
TAPCAM_API size_t tapcam_array_rows(const tapcam_array* arr);
TAPCAM_API size_t tapcam_array_wordlength(const tapcam_array* arr);
TAPCAM_API void tapcam_array_free(tapcam_array* arr);

/* calibration of the configured thresholds; wordlength 0 uses the
 * configured geometry */
TAPCAM_API tapcam_status tapcam_calibrate(const tapcam_config* cfg,
                                          size_t wordlength,
                                          tapcam_calibration** out);
TAPCAM_API tapcam_status tapcam_calibration_load(const char* path,
                                                 tapcam_calibration** out);
TAPCAM_API tapcam_status tapcam_calibration_write(
    const tapcam_calibration* cal, const tapcam_config* cfg, const char* path);
/* guard-band replay as CSV; *all_pass set to 1 when every entry passes */
TAPCAM_API tapcam_status tapcam_calibration_report(
    const tapcam_calibration* cal, const tapcam_config* cfg, const char* path,
    int* all_pass);
TAPCAM_API size_t tapcam_calibration_size(const tapcam_calibration* cal);
TAPCAM_API tapcam_status tapcam_calibration_entry(
    const tapcam_calibration* cal, size_t index, int* threshold,
    double* v_eval);
TAPCAM_API double tapcam_calibration_deadline(const tapcam_calibration* cal);
TAPCAM_API void tapcam_calibration_free(tapcam_calibration* cal);

/* threshold search through both tiers. cal may be NULL, in which case the
 * threshold is calibrated for the array's wordlength. */
TAPCAM_API tapcam_status tapcam_search(const tapcam_config* cfg,
                                       const tapcam_array* arr,
                                       const tapcam_calibration* cal,
                                       const char* query, int threshold,
                                       tapcam_search_result** out);
TAPCAM_API size_t tapcam_result_count(const tapcam_search_result* res,
                                      int transient);
TAPCAM_API size_t tapcam_result_row(const tapcam_search_result* res,
                                    int transient, size_t index);
TAPCAM_API int tapcam_result_agree(const tapcam_search_result* res);
/* per-row CSV: row,mismatches,functional,transient */
TAPCAM_API tapcam_status tapcam_result_write(const tapcam_search_result* res,
                                             const tapcam_config* cfg,
                                             const char* path);
/* waveform of one row for the searched query */
TAPCAM_API tapcam_status tapcam_result_trace(const tapcam_search_result* res,
                                             size_t row, const char* path);
TAPCAM_API void tapcam_result_free(tapcam_search_result* res);

/* param: vdd, threshold, rows, wordlength. *failed counts infeasible
 * points (written as nan). */
TAPCAM_API tapcam_status tapcam_sweep(const tapcam_config* cfg,
                                      const char* param, const double* values,
                                      size_t count, const char* path,
                                      size_t* failed);

TAPCAM_API tapcam_status tapcam_montecarlo(const tapcam_config* cfg,
                                           int threshold, size_t runs,
                                           double vdd, const char* csv_path,
                                           const char* json_path,
                                           int* separable);

typedef struct tapcam_knn_summary {
  size_t train_size;
  size_t test_size;
  size_t wordlength;
  int best_threshold;
  double best_accuracy;
  double software_accuracy; /* Euclidean 5-NN on the same split */
  size_t fallbacks;
  double cam_seconds;
  double software_seconds;
} tapcam_knn_summary;

/* matcher: functional or transient. thresholds may be NULL to use the
 * configured schedule. audit_path may be NULL. */
TAPCAM_API tapcam_status tapcam_knn(const tapcam_config* cfg,
                                    const char* dataset_path,
                                    const char* matcher, const int* thresholds,
                                    size_t count, const char* csv_path,
                                    const char* audit_path,
                                    tapcam_knn_summary* summary);

#ifdef __cplusplus
}
#endif

#endif
