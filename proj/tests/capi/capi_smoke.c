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

/* Drives the shared library from C: tiny dataset, zero-epoch model, basis,
 * component, probe and in-process service requests. */

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "reglat/reglat.h"

static int failures = 0;

#define EXPECT(cond)                                                   \
  do {                                                                 \
    if (!(cond)) {                                                     \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                      \
    }                                                                  \
  } while (0)

#define OK(call)                                                                   \
  do {                                                                             \
    reglat_status s_ = (call);                                                     \
    if (s_ != REGLAT_OK) {                                                         \
      fprintf(stderr, "%s:%d: %s -> %d (%s)\n", __FILE__, __LINE__, #call, (int)s_, \
              reglat_last_error());                                                \
      return 1;                                                                    \
    }                                                                              \
  } while (0)

static void join(char* out, size_t n, const char* a, const char* b) {
  if (snprintf(out, n, "%s/%s", a, b) >= (int)n) {
    fprintf(stderr, "path too long: %s/%s\n", a, b);
    exit(2);
  }
}

int main(int argc, char** argv) {
  const char* root = argc > 1 ? argv[1] : "capi_scratch";
  char data[512], run[512], basis_dir[512], latents[512], comp[512], probes[512], manifest[512];
  join(data, sizeof data, root, "data");
  join(run, sizeof run, root, "run");
  join(basis_dir, sizeof basis_dir, root, "run/basis");
  join(latents, sizeof latents, root, "run/latents.bin");
  join(comp, sizeof comp, root, "run/component");
  join(probes, sizeof probes, root, "run/probes");
  join(manifest, sizeof manifest, root, "data/manifest.json");

  EXPECT(strlen(reglat_version()) > 0);

  reglat_dataset* missing = NULL;
  EXPECT(reglat_dataset_open("/nonexistent/manifest.json", &missing) == REGLAT_ERR_IO);
  EXPECT(strlen(reglat_last_error()) > 0);
  EXPECT(missing == NULL);
  EXPECT(reglat_dataset_open(NULL, &missing) == REGLAT_ERR_INVALID_ARGUMENT);
  reglat_dataset_free(NULL);
  reglat_model_free(NULL);
  reglat_basis_free(NULL);
  reglat_service_free(NULL);

  reglat_dataset* ds = NULL;
  OK(reglat_phantom_generate("{\"size\": 16, \"n_subjects\": 5, \"n_val\": 2, \"seed\": 3}", data, 1, &ds));
  char* info = NULL;
  OK(reglat_dataset_info(ds, &info));
  EXPECT(strstr(info, "\"shape\":[16,16,16]") != NULL);
  reglat_string_free(info);

  char* result = NULL;
  OK(reglat_train(ds, "{\"epochs\": 0}", "{\"base_channels\": 2, \"n_downsamplings\": 1}", run, 1, &result));
  EXPECT(strstr(result, "checkpoint_0000.bin") != NULL);
  reglat_string_free(result);

  reglat_model* model = NULL;
  OK(reglat_model_load_latest(run, &model));
  OK(reglat_model_info(model, &info));
  EXPECT(strstr(info, "\"epoch\":0") != NULL);
  reglat_string_free(info);

  OK(reglat_latents_collect(model, ds, "train", latents, NULL));
  reglat_basis* basis = NULL;
  OK(reglat_pca_fit(latents, 2, 0, basis_dir, 1, &basis));
  EXPECT(reglat_pca_fit(latents, 2, 0, basis_dir, 0, NULL) == REGLAT_ERR_INVALID_ARGUMENT);
  EXPECT(reglat_pca_fit(latents, 99, 0, basis_dir, 1, NULL) == REGLAT_ERR_INVALID_ARGUMENT);
  OK(reglat_basis_info(basis, &info));
  EXPECT(strstr(info, "\"K\":2") != NULL);
  reglat_string_free(info);

  char* payload = NULL;
  OK(reglat_component(model, basis, ds, NULL, 1, 100.0, 0, -1, comp, 1, &payload));
  EXPECT(strstr(payload, "\"api_version\":1") != NULL);
  EXPECT(reglat_component(model, basis, ds, NULL, 3, 1.0, 0, -1, comp, 1, NULL) == REGLAT_ERR_INVALID_ARGUMENT);

  OK(reglat_probe(model, basis, ds, "val", "identity", probes, &info));
  EXPECT(strstr(info, "\"dominance_ratio\":0.0") != NULL);
  reglat_string_free(info);
  EXPECT(reglat_probe(model, basis, ds, "val", "shear", probes, NULL) == REGLAT_ERR_INVALID_ARGUMENT);

  reglat_service* svc = NULL;
  OK(reglat_service_create("*", &svc));
  int status = 0;
  char* body = NULL;
  OK(reglat_service_handle(svc, "GET", "/api/meta", NULL, NULL, &status, &body));
  EXPECT(status == 503);
  reglat_string_free(body);
  EXPECT(reglat_service_initialize(svc, "", basis_dir, manifest, probes) == REGLAT_ERR_IO);
  {
    char ckpt[512];
    join(ckpt, sizeof ckpt, run, "checkpoint_0000.bin");
    OK(reglat_service_initialize(svc, ckpt, basis_dir, manifest, probes));
  }
  OK(reglat_service_handle(svc, "GET", "/api/meta", NULL, NULL, &status, &body));
  EXPECT(status == 200);
  EXPECT(strstr(body, "\"K\":2") != NULL);
  reglat_string_free(body);
  OK(reglat_service_handle(svc, "GET", "/api/subject/sub003/slice", "axis=1&index=99", NULL, &status, &body));
  EXPECT(status == 422);
  reglat_string_free(body);
  OK(reglat_service_handle(svc, "POST", "/api/deform", NULL,
                           "{\"subject_id\": \"sub003\", \"coefficients\": [100, 0], \"axis\": 0}", &status, &body));
  EXPECT(status == 200);
  EXPECT(strcmp(body, payload) == 0);
  reglat_string_free(body);
  reglat_string_free(payload);
  OK(reglat_service_handle(svc, "GET", "/api/probe/identity", NULL, NULL, &status, &body));
  EXPECT(status == 200);
  reglat_string_free(body);
  OK(reglat_service_handle(svc, "GET", "/nowhere", NULL, NULL, &status, &body));
  EXPECT(status == 404);
  reglat_string_free(body);

  reglat_service_free(svc);
  reglat_basis_free(basis);
  reglat_model_free(model);
  reglat_dataset_free(ds);

  if (failures == 0) printf("capi smoke: all checks passed\n");
  return failures == 0 ? 0 : 1;
}
