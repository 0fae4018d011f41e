// Copyright 2026 The reglat Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "reglat/reglat.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include "reglat/core/io.hpp"
#include "reglat/core/log.hpp"
#include "reglat/latent.hpp"
#include "reglat/phantom.hpp"
#include "reglat/probes.hpp"
#include "reglat/service.hpp"
#include "reglat/trainer.hpp"

using namespace reglat;
namespace fs = std::filesystem;
using io::Json;

struct reglat_dataset {
  DatasetManifest manifest;
};

struct reglat_model {
  Checkpoint checkpoint;
  RegNet<float> net;
};

struct reglat_basis {
  PCABasis basis;
};

struct reglat_service {
  service::Service svc;
  explicit reglat_service(std::string origin) : svc(std::move(origin)) {}
};

namespace {

thread_local std::string g_last_error;

template <class F>
reglat_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return REGLAT_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<reglat_status>(e.code());
  } catch (const fs::filesystem_error& e) {
    g_last_error = e.what();
    return REGLAT_ERR_IO;
  } catch (const Json::exception& e) {
    g_last_error = e.what();
    return REGLAT_ERR_FORMAT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return REGLAT_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return REGLAT_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) fail(ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const Json& j) {
  if (out != nullptr) *out = dup(j.dump());
}

Json parse_json(const char* text, const char* what) {
  if (text == nullptr || *text == '\0') return Json::object();
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::kFormat, std::string(what) + " is not a JSON object");
  return j;
}

Subject load_subject(const DatasetManifest& m, const char* id) {
  const SubjectEntry* e = nullptr;
  if (id != nullptr && *id != '\0') {
    e = &m.find(id);
  } else {
    const auto val = m.in_split(Split::kVal);
    require(!val.empty(), "dataset has no validation subject; pass a subject id");
    e = &m.find(val.front().id);
  }
  return {e->id, normalize_volume(m.load_subject_volume(*e)), m.load_subject_seg(*e)};
}

Dims dataset_shape(const DatasetManifest& m) {
  require(!m.subjects.empty(), "dataset has no subjects");
  return m.load_subject_volume(m.subjects.front()).dims();
}

Json evr_json(const PCABasis& b) {
  Json evr = Json::array(), cum = Json::array();
  double c = 0;
  for (Eigen::Index k = 0; k < b.evr.size(); ++k) {
    evr.push_back(b.evr[k]);
    cum.push_back(c += b.evr[k]);
  }
  return Json{{"K", b.K},
              {"N", b.components.cols()},
              {"evr", evr},
              {"cumulative_evr", cum},
              {"center", b.center},
              {"model_fingerprint", b.model_fingerprint}};
}

}  // namespace

extern "C" {

const char* reglat_version(void) { return "0.1.0"; }

const char* reglat_last_error(void) { return g_last_error.c_str(); }

void reglat_string_free(char* s) { std::free(s); }

void reglat_set_verbose(int verbose) { log::set_verbose(verbose != 0); }

// --- datasets ------------------------------------------------------------------------------

reglat_status reglat_phantom_generate(const char* spec_json, const char* out_dir, int force, reglat_dataset** out) {
  return guard([&] {
    need(out_dir, "out_dir");
    const PhantomSpec spec = PhantomSpec::from_json(parse_json(spec_json, "phantom spec"));
    io::prepare_output_dir(out_dir, force != 0);
    DatasetManifest m = generate_phantom_dataset(spec, out_dir);
    if (out != nullptr) *out = new reglat_dataset{std::move(m)};
  });
}

reglat_status reglat_phantom_benchmark_spec(uint64_t seed, char** spec_json) {
  return guard([&] {
    need(spec_json, "spec_json");
    emit(spec_json, PhantomSpec::translation_benchmark(seed).to_json());
  });
}

reglat_status reglat_dataset_open(const char* manifest_path, reglat_dataset** out) {
  return guard([&] {
    need(manifest_path, "manifest_path");
    need(out, "out");
    *out = new reglat_dataset{load_manifest(manifest_path)};
  });
}

void reglat_dataset_free(reglat_dataset* d) { delete d; }

reglat_status reglat_dataset_info(const reglat_dataset* d, char** info_json) {
  return guard([&] {
    need(d, "dataset");
    const auto& m = d->manifest;
    Json subjects = Json::array();
    for (const auto& e : m.subjects) subjects.push_back({{"id", e.id}, {"split", to_string(e.split)}});
    const Dims shape = dataset_shape(m);
    emit(info_json, Json{{"root", m.root.string()},
                         {"subjects", subjects},
                         {"shape", {shape.d, shape.h, shape.w}},
                         {"num_labels", m.load_subject_seg(m.subjects.front()).num_labels}});
  });
}

// --- training and evaluation ----------------------------------------------------------------

reglat_status reglat_train(const reglat_dataset* d, const char* train_json, const char* arch_json, const char* run_dir,
                           int force, char** result_json) {
  return guard([&] {
    need(d, "dataset");
    need(run_dir, "run_dir");
    const TrainConfig cfg = TrainConfig::from_json(parse_json(train_json, "train config"));
    Json aj = parse_json(arch_json, "arch config");
    const Dims shape = dataset_shape(d->manifest);
    aj["in_shape"] = {shape.d, shape.h, shape.w};
    const ArchConfig arch = ArchConfig::from_json(aj);
    TrainHooks hooks;
    hooks.on_eval = [](int epoch, const EvalReport& r) {
      log::info("epoch " + std::to_string(epoch) + ": val dice " + io::format_double(r.dice_before_mean) + " -> " +
                io::format_double(r.dice_after_mean) + ", folding " + io::format_double(r.folding_mean));
    };
    const TrainResult r = train(d->manifest, cfg, arch, run_dir, force != 0, hooks);
    emit(result_json, Json{{"checkpoint", latest_checkpoint(run_dir).string()},
                           {"epochs", r.checkpoint.epoch},
                           {"steps", r.history.size()},
                           {"model_fingerprint", r.checkpoint.fingerprint()},
                           {"eval", r.eval.to_json()}});
  });
}

reglat_status reglat_model_load(const char* checkpoint_path, reglat_model** out) {
  return guard([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    Checkpoint c = load_checkpoint(checkpoint_path);
    RegNet<float> net = c.network();
    *out = new reglat_model{std::move(c), std::move(net)};
  });
}

reglat_status reglat_model_load_latest(const char* run_dir, reglat_model** out) {
  return guard([&] {
    need(run_dir, "run_dir");
    need(out, "out");
    Checkpoint c = load_checkpoint(latest_checkpoint(run_dir));
    RegNet<float> net = c.network();
    *out = new reglat_model{std::move(c), std::move(net)};
  });
}

void reglat_model_free(reglat_model* m) { delete m; }

reglat_status reglat_model_info(const reglat_model* m, char** info_json) {
  return guard([&] {
    need(m, "model");
    emit(info_json, Json{{"fingerprint", m->net.fingerprint()},
                         {"epoch", m->checkpoint.epoch},
                         {"arch", m->checkpoint.arch.to_json()}});
  });
}

reglat_status reglat_evaluate(const reglat_model* m, const reglat_dataset* d, const char* split, char** report_json) {
  return guard([&] {
    need(m, "model");
    need(d, "dataset");
    const Split s = split_from_string(split ? split : "val");
    emit(report_json, evaluate(m->checkpoint, d->manifest, s).to_json());
  });
}

// --- latent space ------------------------------------------------------------------------------

reglat_status reglat_latents_collect(const reglat_model* m, const reglat_dataset* d, const char* split,
                                     const char* out_path, char** info_json) {
  return guard([&] {
    need(m, "model");
    need(d, "dataset");
    need(out_path, "out_path");
    const Split s = split_from_string(split ? split : "train");
    const auto subjects = load_subjects(d->manifest, s);
    require(!subjects.empty(), "split " + to_string(s) + " has no subjects");
    const LatentMatrix l = collect_latents(m->net, subjects);
    const fs::path p(out_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    save_latents(l, p);
    emit(info_json, Json{{"path", p.string()},
                         {"rows", l.n()},
                         {"dim", l.dim()},
                         {"subjects", l.subject_ids},
                         {"model_fingerprint", l.model_fingerprint}});
  });
}

reglat_status reglat_pca_fit(const char* latents_path, int k, int center, const char* out_dir, int force,
                             reglat_basis** out) {
  return guard([&] {
    need(latents_path, "latents_path");
    need(out_dir, "out_dir");
    const LatentMatrix l = load_latents(latents_path);
    PCABasis b = fit_pca(l, k, center != 0);
    io::prepare_output_dir(out_dir, force != 0);
    save_basis(b, out_dir);
    // Coefficients use the stored (float32) basis so that reloading and
    // reprojecting reproduces the file.
    b = load_basis(out_dir);
    save_coefficients(project_all(l, b), fs::path(out_dir) / "coeffs.csv");
    if (out != nullptr) *out = new reglat_basis{std::move(b)};
  });
}

reglat_status reglat_project_latents(const reglat_basis* b, const char* latents_path, const char* out_csv) {
  return guard([&] {
    need(b, "basis");
    need(latents_path, "latents_path");
    need(out_csv, "out_csv");
    const fs::path p(out_csv);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    save_coefficients(project_all(load_latents(latents_path), b->basis), p);
  });
}

reglat_status reglat_basis_load(const char* dir, reglat_basis** out) {
  return guard([&] {
    need(dir, "dir");
    need(out, "out");
    *out = new reglat_basis{load_basis(dir)};
  });
}

void reglat_basis_free(reglat_basis* b) { delete b; }

reglat_status reglat_basis_info(const reglat_basis* b, char** info_json) {
  return guard([&] {
    need(b, "basis");
    emit(info_json, evr_json(b->basis));
  });
}

// --- probes -------------------------------------------------------------------------------------

reglat_status reglat_component(const reglat_model* m, const reglat_basis* b, const reglat_dataset* d,
                               const char* subject_id, int j, double lambda, int axis, int64_t index,
                               const char* out_dir, int force, char** payload_json) {
  return guard([&] {
    need(m, "model");
    need(b, "basis");
    need(d, "dataset");
    need(out_dir, "out_dir");
    require(j >= 1 && j <= b->basis.K, "component index must be in [1, K]");
    require(axis >= 0 && axis < 3, "axis must be 0, 1 or 2");
    const Subject s = load_subject(d->manifest, subject_id);
    if (index < 0) index = s.volume.dims()[axis] / 2;
    const auto grid = decode_component(b->basis, j, lambda, m->net);
    std::vector<double> coeffs(std::size_t(b->basis.K), 0.0);
    coeffs[std::size_t(j - 1)] = lambda;
    const Json payload = service::deform_payload(m->net, b->basis, s, coeffs, axis, index);
    io::prepare_output_dir(out_dir, force != 0);
    save_array(grid.phi, fs::path(out_dir) / "grid");
    io::write_text(fs::path(out_dir) / "deform.json", payload.dump());
    emit(payload_json, payload);
  });
}

reglat_status reglat_sweep(const reglat_model* m, const reglat_basis* b, const reglat_dataset* d,
                           const char* subject_id, int j, const double* lambdas, size_t n_lambdas,
                           const int64_t* slices, const char* out_dir, int force, char** info_json) {
  return guard([&] {
    need(m, "model");
    need(b, "basis");
    need(d, "dataset");
    need(out_dir, "out_dir");
    SweepOptions opt;
    if (lambdas != nullptr) opt.lambdas.assign(lambdas, lambdas + n_lambdas);
    if (slices != nullptr) opt.slices = {slices[0], slices[1], slices[2]};
    const Subject s = load_subject(d->manifest, subject_id);
    io::prepare_output_dir(out_dir, force != 0);
    const auto images = lambda_sweep(m->net, b->basis, s, j, opt, out_dir);
    Json names = Json::array();
    for (const auto& p : images) names.push_back(p.string());
    emit(info_json, Json{{"subject", s.id}, {"component", j}, {"lambdas", opt.lambdas}, {"images", names}});
  });
}

reglat_status reglat_probe(const reglat_model* m, const reglat_basis* b, const reglat_dataset* d, const char* split,
                           const char* transform, const char* out_dir, char** summary_json) {
  return guard([&] {
    need(m, "model");
    need(b, "basis");
    need(d, "dataset");
    need(transform, "transform");
    const ProbeSpec spec = ProbeSpec::parse(transform);
    const ProbeResult r =
        affine_perturbation_probe(m->net, b->basis, load_subjects(d->manifest, split_from_string(split ? split : "val")), spec);
    Json summary = r.summary_json();
    if (out_dir != nullptr) {
      const fs::path csv = fs::path(out_dir) / service::probe_file_name(spec);
      write_probe_csv(r, csv);
      summary["csv"] = csv.string();
    }
    emit(summary_json, summary);
  });
}

reglat_status reglat_probe_describe(const char* transform, char** info_json) {
  return guard([&] {
    need(transform, "transform");
    const ProbeSpec spec = ProbeSpec::parse(transform);
    emit(info_json, Json{{"transform", spec.describe()}, {"file", service::probe_file_name(spec)}});
  });
}

reglat_status reglat_probe_compare(const reglat_model* noskip, const reglat_basis* basis_noskip,
                                   const reglat_model* skip, const reglat_basis* basis_skip, const reglat_dataset* d,
                                   const char* split, const char* transform, const char* out_dir,
                                   char** report_json) {
  return guard([&] {
    need(noskip, "noskip model");
    need(basis_noskip, "noskip basis");
    need(skip, "skip model");
    need(basis_skip, "skip basis");
    need(d, "dataset");
    need(transform, "transform");
    const auto subjects = load_subjects(d->manifest, split_from_string(split ? split : "val"));
    const ProbeSpec spec = ProbeSpec::parse(transform);
    const SkipComparison c =
        skip_connection_comparison(noskip->net, basis_noskip->basis, skip->net, basis_skip->basis, subjects, spec);
    Json report = c.report();
    if (out_dir != nullptr) {
      const fs::path base = fs::path(out_dir) / ("skip_" + service::probe_file_name(spec));
      write_skip_comparison_csv(c, base);
      report["csv"] = base.string();
      io::write_json(fs::path(base).replace_extension(".json"), report);
    }
    emit(report_json, report);
  });
}

reglat_status reglat_fieldpca(const reglat_model* m, const reglat_dataset* d, const char* reference_id, int k,
                              int center, const char* out_dir, int force, char** info_json) {
  return guard([&] {
    need(m, "model");
    need(d, "dataset");
    need(out_dir, "out_dir");
    const Subject ref = load_subject(d->manifest, reference_id);
    std::vector<Subject> all = load_subjects(d->manifest, Split::kTrain);
    for (auto& s : load_subjects(d->manifest, Split::kVal)) all.push_back(std::move(s));
    const PCABasis b = pca_on_fields(m->net, all, ref, k, center != 0);
    io::prepare_output_dir(out_dir, force != 0);
    save_basis(b, out_dir);
    Json info = evr_json(b);
    info["reference"] = ref.id;
    info["rows"] = all.size() - 1;
    emit(info_json, info);
  });
}

// --- service ------------------------------------------------------------------------------------

reglat_status reglat_service_create(const char* cors_origin, reglat_service** out) {
  return guard([&] {
    need(out, "out");
    *out = new reglat_service(cors_origin ? cors_origin : "*");
  });
}

reglat_status reglat_service_initialize(reglat_service* s, const char* checkpoint, const char* basis_dir,
                                        const char* manifest, const char* probe_dir) {
  return guard([&] {
    need(s, "service");
    need(checkpoint, "checkpoint");
    need(basis_dir, "basis_dir");
    need(manifest, "manifest");
    service::ServiceConfig cfg{checkpoint, basis_dir, manifest, probe_dir ? fs::path(probe_dir) : fs::path()};
    s->svc.initialize(service::Model::load(cfg));
  });
}

reglat_status reglat_service_handle(const reglat_service* s, const char* method, const char* path, const char* query,
                                    const char* body, int* http_status, char** body_json) {
  return guard([&] {
    need(s, "service");
    need(method, "method");
    need(path, "path");
    need(http_status, "http_status");
    std::multimap<std::string, std::string> params;
    if (query != nullptr) {
      const std::string q(query);
      std::size_t start = 0;
      while (start < q.size()) {
        const std::size_t amp = std::min(q.find('&', start), q.size());
        const std::string kv = q.substr(start, amp - start);
        const std::size_t eq = kv.find('=');
        if (!kv.empty()) params.emplace(kv.substr(0, eq), eq == std::string::npos ? "" : kv.substr(eq + 1));
        start = amp + 1;
      }
    }
    const service::Response r = s->svc.handle(method, path, params, body ? body : "");
    *http_status = r.status;
    if (body_json != nullptr) *body_json = dup(r.status == 204 ? std::string() : r.body.dump());
  });
}

reglat_status reglat_service_bind(reglat_service* s, const char* host, int port, int* bound_port) {
  return guard([&] {
    need(s, "service");
    const int p = s->svc.bind(host ? host : "127.0.0.1", port);
    if (bound_port != nullptr) *bound_port = p;
  });
}

reglat_status reglat_service_listen(reglat_service* s) {
  return guard([&] {
    need(s, "service");
    s->svc.listen();
  });
}

void reglat_service_stop(reglat_service* s) {
  if (s != nullptr) s->svc.stop();
}

void reglat_service_free(reglat_service* s) { delete s; }

}  // extern "C"
