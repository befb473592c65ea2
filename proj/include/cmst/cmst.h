/* Copyright 2026 The cmst Authors
 * SPDX-License-Identifier: Apache-2.0 */

#ifndef CMST_CMST_H
#define CMST_CMST_H

/* C interface to the cmst library. Every object is an opaque handle owned by
 * the caller and released with its matching *_free function. Functions
 * return a status code; on failure cmst_last_error() describes the problem.
 * Strings returned through char** are released with cmst_string_free.
 * Configurations and reports cross the boundary as JSON text. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CMST_API __declspec(dllexport)
#else
#define CMST_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cmst_status {
  CMST_OK = 0,
  CMST_ERROR_CONFIG = 1,
  CMST_ERROR_DATA = 2,
  CMST_ERROR_TRAINING = 3,
  CMST_ERROR_IO = 4,
  CMST_ERROR_SHAPE = 5,
  CMST_ERROR_ARGUMENT = 6,
  CMST_ERROR_INTERNAL = 7
} cmst_status;

typedef struct cmst_run cmst_run;
typedef struct cmst_dataset cmst_dataset;
typedef struct cmst_model cmst_model;

CMST_API const char* cmst_version(void);
CMST_API const char* cmst_status_name(cmst_status status);
/* Message of the last failure on the calling thread. */
CMST_API const char* cmst_last_error(void);
CMST_API void cmst_string_free(char* text);

/* Progress lines from long operations; NULL disables. */
typedef void (*cmst_log_fn)(const char* line, void* user);
CMST_API void cmst_set_log(cmst_log_fn fn, void* user);

/* Run configuration. Resolution materializes every default. */
CMST_API cmst_status cmst_run_resolve(const char* json, cmst_run** out);
CMST_API cmst_status cmst_run_to_json(const cmst_run* run, char** out);
CMST_API const char* cmst_run_output(const cmst_run* run);
CMST_API void cmst_run_free(cmst_run* run);

/* Datasets. */
CMST_API cmst_status cmst_dataset_open(const cmst_run* run, cmst_dataset** out);
CMST_API cmst_status cmst_dataset_generate(const char* spec_json, cmst_dataset** out);
CMST_API cmst_status cmst_dataset_load(const char* manifest_path, cmst_dataset** out);
CMST_API cmst_status cmst_dataset_save(const cmst_dataset* data, const char* dir);
CMST_API cmst_status cmst_dataset_shape(const cmst_dataset* data, size_t* classes, size_t* samples_per_class,
                                        size_t* width);
/* features holds classes * samples_per_class * width values, labels one per row. */
CMST_API cmst_status cmst_dataset_rows(const cmst_dataset* data, double* features, int* labels);
/* Per object and angle SNR and rRCS against the dataset's empty-scene traces. */
CMST_API cmst_status cmst_dataset_write_signal_table(const cmst_dataset* data, const char* csv_path);
CMST_API void cmst_dataset_free(cmst_dataset* data);

/* Models. */
CMST_API cmst_status cmst_train(const cmst_run* run, const cmst_dataset* data, cmst_model** out);
CMST_API cmst_status cmst_model_save(const cmst_model* model, const char* dir);
CMST_API cmst_status cmst_model_load(const char* dir, cmst_model** out);
CMST_API cmst_status cmst_model_classify(const cmst_model* model, const double* rows, size_t count, size_t width,
                                         int* labels);
/* {"method", "classes", "input_width", "model_hash"} */
CMST_API cmst_status cmst_model_info(const cmst_model* model, char** json);
CMST_API void cmst_model_free(cmst_model* model);

/* Evaluation. Cross validation or a class-count sweep as configured. */
CMST_API cmst_status cmst_eval(const cmst_run* run, const cmst_dataset* data, char** report_json);
/* Accuracy of a trained model on every row of a dataset. */
CMST_API cmst_status cmst_eval_model(const cmst_model* model, const cmst_dataset* data, char** report_json);
CMST_API cmst_status cmst_bench(const cmst_run* run, const cmst_dataset* data, char** bench_json);
/* Writes report.json plus CSV exports for an eval or bench report. */
CMST_API cmst_status cmst_report_write(const char* report_json, const char* dir);
/* Merges eval report files into one comparison CSV. */
CMST_API cmst_status cmst_report_merge(const char* const* report_paths, size_t count, const char* csv_path);

#ifdef __cplusplus
}
#endif

#endif /* CMST_CMST_H */
