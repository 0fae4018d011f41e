/* Copyright 2026 The reglat Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/* C interface to reglat.
 *
 * Every fallible call returns a reglat_status; on failure the message is
 * available from reglat_last_error() on the same thread. Strings returned
 * through char** outputs are heap-allocated JSON and must be released with
 * reglat_string_free. Handles are opaque and released with their _free
 * function; passing NULL to a _free function is a no-op.
 */

#ifndef REGLAT_REGLAT_H_
#define REGLAT_REGLAT_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define REGLAT_API __declspec(dllexport)
#else
#define REGLAT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum reglat_status {
  REGLAT_OK = 0,
  REGLAT_ERR_INVALID_ARGUMENT = 2,
  REGLAT_ERR_IO = 3,
  REGLAT_ERR_FINGERPRINT = 4,
  REGLAT_ERR_FORMAT = 5,
  REGLAT_ERR_NUMERIC = 6,
  REGLAT_ERR_INTERNAL = 7
} reglat_status;

typedef struct reglat_dataset reglat_dataset;
typedef struct reglat_model reglat_model;
typedef struct reglat_basis reglat_basis;
typedef struct reglat_service reglat_service;

REGLAT_API const char* reglat_version(void);
REGLAT_API const char* reglat_last_error(void);
REGLAT_API void reglat_string_free(char* s);
/* Progress messages on stderr when non-zero. */
REGLAT_API void reglat_set_verbose(int verbose);

/* --- datasets --------------------------------------------------------- */

/* spec_json: phantom specification (NULL or "{}" for defaults). */
REGLAT_API reglat_status reglat_phantom_generate(const char* spec_json, const char* out_dir,
                                                 int force, reglat_dataset** out);
/* Translation-only benchmark specification as JSON. */
REGLAT_API reglat_status reglat_phantom_benchmark_spec(uint64_t seed, char** spec_json);
REGLAT_API reglat_status reglat_dataset_open(const char* manifest_path, reglat_dataset** out);
REGLAT_API void reglat_dataset_free(reglat_dataset* d);
/* {root, subjects:[{id, split}], shape, num_labels} */
REGLAT_API reglat_status reglat_dataset_info(const reglat_dataset* d, char** info_json);

/* --- training and evaluation ------------------------------------------ */

/* train_json / arch_json may be NULL for defaults. The input shape is
 * taken from the dataset. result_json: {checkpoint, epochs, eval}. */
REGLAT_API reglat_status reglat_train(const reglat_dataset* d, const char* train_json,
                                      const char* arch_json, const char* run_dir, int force,
                                      char** result_json);
REGLAT_API reglat_status reglat_model_load(const char* checkpoint_path, reglat_model** out);
/* Most recent checkpoint_NNNN.bin in run_dir. */
REGLAT_API reglat_status reglat_model_load_latest(const char* run_dir, reglat_model** out);
REGLAT_API void reglat_model_free(reglat_model* m);
/* {fingerprint, epoch, arch} */
REGLAT_API reglat_status reglat_model_info(const reglat_model* m, char** info_json);
/* split: "train" or "val". */
REGLAT_API reglat_status reglat_evaluate(const reglat_model* m, const reglat_dataset* d,
                                         const char* split, char** report_json);

/* --- latent space ----------------------------------------------------- */

REGLAT_API reglat_status reglat_latents_collect(const reglat_model* m, const reglat_dataset* d,
                                                const char* split, const char* out_path,
                                                char** info_json);
/* Fits the basis, writes it into out_dir together with coeffs.csv for the
 * fitted rows. */
REGLAT_API reglat_status reglat_pca_fit(const char* latents_path, int k, int center,
                                        const char* out_dir, int force, reglat_basis** out);
/* Projects every row of a latents file into a coefficient CSV. */
REGLAT_API reglat_status reglat_project_latents(const reglat_basis* b, const char* latents_path,
                                                const char* out_csv);
REGLAT_API reglat_status reglat_basis_load(const char* dir, reglat_basis** out);
REGLAT_API void reglat_basis_free(reglat_basis* b);
/* {K, N, evr, cumulative_evr, center, model_fingerprint} */
REGLAT_API reglat_status reglat_basis_info(const reglat_basis* b, char** info_json);

/* --- probes ----------------------------------------------------------- */

/* Decodes lambda * u_j, writes grid/ and deform.json (the /api/deform
 * payload for the one-hot coefficient vector) into out_dir. index < 0
 * selects the center plane. */
REGLAT_API reglat_status reglat_component(const reglat_model* m, const reglat_basis* b,
                                          const reglat_dataset* d, const char* subject_id,
                                          int j, double lambda, int axis, int64_t index,
                                          const char* out_dir, int force, char** payload_json);
/* slices: three plane indices or NULL for center planes. */
REGLAT_API reglat_status reglat_sweep(const reglat_model* m, const reglat_basis* b,
                                      const reglat_dataset* d, const char* subject_id, int j,
                                      const double* lambdas, size_t n_lambdas,
                                      const int64_t* slices, const char* out_dir, int force,
                                      char** info_json);
/* transform: e.g. "translation:z:10". When out_dir is not NULL the probe
 * CSV is written there as <kind>_<axis>_<amount>.csv. */
REGLAT_API reglat_status reglat_probe(const reglat_model* m, const reglat_basis* b,
                                      const reglat_dataset* d, const char* split,
                                      const char* transform, const char* out_dir,
                                      char** summary_json);
/* {transform, file}: canonical transform text and its probe CSV name. */
REGLAT_API reglat_status reglat_probe_describe(const char* transform, char** info_json);
/* Writes skip_<name>.csv and skip_<name>.json into out_dir when given. */
REGLAT_API reglat_status reglat_probe_compare(const reglat_model* noskip,
                                              const reglat_basis* basis_noskip,
                                              const reglat_model* skip,
                                              const reglat_basis* basis_skip,
                                              const reglat_dataset* d, const char* split,
                                              const char* transform, const char* out_dir,
                                              char** report_json);
/* reference_id NULL selects the first validation subject. */
REGLAT_API reglat_status reglat_fieldpca(const reglat_model* m, const reglat_dataset* d,
                                         const char* reference_id, int k, int center,
                                         const char* out_dir, int force, char** info_json);

/* --- service ---------------------------------------------------------- */

REGLAT_API reglat_status reglat_service_create(const char* cors_origin, reglat_service** out);
/* probe_dir may be NULL. */
REGLAT_API reglat_status reglat_service_initialize(reglat_service* s, const char* checkpoint,
                                                   const char* basis_dir, const char* manifest,
                                                   const char* probe_dir);
/* query: "a=1&b=2" or NULL. */
REGLAT_API reglat_status reglat_service_handle(const reglat_service* s, const char* method,
                                               const char* path, const char* query,
                                               const char* body, int* http_status,
                                               char** body_json);
REGLAT_API reglat_status reglat_service_bind(reglat_service* s, const char* host, int port,
                                             int* bound_port);
/* Blocks until reglat_service_stop. */
REGLAT_API reglat_status reglat_service_listen(reglat_service* s);
REGLAT_API void reglat_service_stop(reglat_service* s);
REGLAT_API void reglat_service_free(reglat_service* s);

#ifdef __cplusplus
}
#endif

#endif /* REGLAT_REGLAT_H_ */
