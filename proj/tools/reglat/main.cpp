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

// reglat command-line driver. Every command accepts --seed, --config,
// --force, --run and --quiet. A --config file is a JSON object whose keys are
// option names (dashes or underscores); values given on the command line win
// over the file, which wins over built-in defaults.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "reglat/reglat.h"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

// --- C API helpers -----------------------------------------------------------------------------

struct Failure {
  int code;
  std::string message;
};

void check(reglat_status s) {
  if (s != REGLAT_OK) throw Failure{static_cast<int>(s), reglat_last_error()};
}

Json take_json(char* s) {
  const std::string text = s ? s : "";
  reglat_string_free(s);
  return text.empty() ? Json() : Json::parse(text);
}

struct Deleter {
  void operator()(reglat_dataset* p) const { reglat_dataset_free(p); }
  void operator()(reglat_model* p) const { reglat_model_free(p); }
  void operator()(reglat_basis* p) const { reglat_basis_free(p); }
  void operator()(reglat_service* p) const { reglat_service_free(p); }
};
using Dataset = std::unique_ptr<reglat_dataset, Deleter>;
using Model = std::unique_ptr<reglat_model, Deleter>;
using Basis = std::unique_ptr<reglat_basis, Deleter>;
using ServicePtr = std::unique_ptr<reglat_service, Deleter>;

Dataset open_dataset(const std::string& path) {
  reglat_dataset* d = nullptr;
  check(reglat_dataset_open(path.c_str(), &d));
  return Dataset(d);
}

Model open_model(const std::string& checkpoint, const std::string& run) {
  reglat_model* m = nullptr;
  check(checkpoint.empty() ? reglat_model_load_latest(run.c_str(), &m) : reglat_model_load(checkpoint.c_str(), &m));
  return Model(m);
}

Basis open_basis(const std::string& dir) {
  reglat_basis* b = nullptr;
  check(reglat_basis_load(dir.c_str(), &b));
  return Basis(b);
}

// --- run directory lock --------------------------------------------------------------------------

class RunLock {
 public:
  explicit RunLock(const fs::path& dir) {
    fs::create_directories(dir);
    fd_ = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
    if (fd_ < 0 || ::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      if (fd_ >= 0) ::close(fd_);
      throw Failure{REGLAT_ERR_IO, "run directory " + dir.string() + " is in use by another process"};
    }
  }
  ~RunLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

// --- options --------------------------------------------------------------------------------------

fs::path runs_root() {
  const char* env = std::getenv("REGLAT_RUNS");
  return env && *env ? fs::path(env) : fs::path("runs");
}

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  bool force = false;
  bool quiet = false;
  std::string run = (runs_root() / "default").string();
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app->add_option("--config", c.config, "JSON file with option values (flags take precedence)");
  app->add_flag("--force", c.force, "Overwrite existing outputs");
  app->add_flag("-q,--quiet", c.quiet, "Suppress progress messages");
  app->add_option("--run", c.run, "Run directory (default $REGLAT_RUNS/default)")->capture_default_str();
}

std::string scalar_string(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number() || v.is_null()) return v.dump();
  throw Failure{REGLAT_ERR_INVALID_ARGUMENT, "config values must be scalars or arrays of scalars"};
}

/// Fills options absent from the command line with values from the config file.
void apply_config(CLI::App* app, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw Failure{REGLAT_ERR_IO, "cannot read config file " + path};
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Failure{REGLAT_ERR_INVALID_ARGUMENT, path + " is not a JSON object"};
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = app->get_option_no_throw("--" + name);
    if (opt == nullptr || name == "config" || name == "help")
      throw Failure{REGLAT_ERR_INVALID_ARGUMENT, "unknown config key '" + key + "' for " + app->get_name()};
    if (opt->count() > 0) continue;
    opt->clear();
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(scalar_string(v));
    } else {
      opt->add_result(scalar_string(value));
    }
    opt->run_callback();
  }
}

void print_config(const std::string& command, const Common& c, Json extra) {
  extra["seed"] = c.seed;
  extra["force"] = c.force;
  extra["run"] = c.run;
  if (!c.config.empty()) extra["config_file"] = c.config;
  std::cerr << "reglat " << command << " " << extra.dump() << "\n";
}

void print(const Json& j) { std::cout << j.dump(2) << "\n"; }

std::string or_default(const std::string& v, const fs::path& fallback) { return v.empty() ? fallback.string() : v; }

// --- commands ------------------------------------------------------------------------------------

struct PhantomArgs {
  std::string out;
  std::string preset = "translation";
  std::string spec;
  int size = 0, subjects = 0, val = -1;
  double noise = -1;
};

int cmd_phantom(const Common& c, PhantomArgs a) {
  a.out = or_default(a.out, runs_root() / "data");
  Json spec;
  if (!a.spec.empty()) {
    std::ifstream in(a.spec);
    if (!in) throw Failure{REGLAT_ERR_IO, "cannot read phantom spec " + a.spec};
    spec = Json::parse(in);
  } else if (a.preset == "translation") {
    char* s = nullptr;
    check(reglat_phantom_benchmark_spec(c.seed, &s));
    spec = take_json(s);
  } else if (a.preset == "plain") {
    spec = Json::object();
  } else {
    throw Failure{REGLAT_ERR_INVALID_ARGUMENT, "unknown preset '" + a.preset + "' (translation or plain)"};
  }
  spec["seed"] = c.seed;
  if (a.size > 0) {
    spec["size"] = a.size;
    spec.erase("structures");
  }
  if (a.subjects > 0) spec["n_subjects"] = a.subjects;
  if (a.val >= 0) spec["n_val"] = a.val;
  if (a.noise >= 0) spec["noise_sigma"] = a.noise;
  print_config("phantom", c, {{"out", a.out}, {"preset", a.preset}, {"spec", spec}});

  RunLock lock(a.out);
  reglat_dataset* d = nullptr;
  check(reglat_phantom_generate(spec.dump().c_str(), a.out.c_str(), c.force, &d));
  Dataset ds(d);
  char* info = nullptr;
  check(reglat_dataset_info(ds.get(), &info));
  Json j = take_json(info);
  std::size_t n_val = 0;
  for (const auto& s : j["subjects"]) n_val += s["split"] == "val";
  print({{"manifest", (fs::path(a.out) / "manifest.json").string()},
         {"subjects", j["subjects"].size()},
         {"val", n_val},
         {"shape", j["shape"]},
         {"num_labels", j["num_labels"]}});
  return 0;
}

struct TrainArgs {
  std::string data;
  int epochs = 100, batch = 4, eval_every = 0, threads = 1;
  double lr = 1e-4, alpha = 0.1, beta = 1.0;
  int ncc_window = 0;
  bool augment = true;
  int base_channels = 8, downsamplings = 3;
  bool skip = false;
  std::string norm = "instance";
};

int cmd_train(const Common& c, TrainArgs a) {
  a.data = or_default(a.data, runs_root() / "data");
  const Json train = {{"lr", a.lr},
                      {"batch_size", a.batch},
                      {"epochs", a.epochs},
                      {"weights", {{"alpha", a.alpha}, {"beta", a.beta}, {"ncc_window", a.ncc_window}}},
                      {"augment", {{"enabled", a.augment}}},
                      {"seed", c.seed},
                      {"eval_every", a.eval_every},
                      {"threads", a.threads}};
  const Json arch = {{"base_channels", a.base_channels},
                     {"n_downsamplings", a.downsamplings},
                     {"skip_connections", a.skip},
                     {"norm", a.norm}};
  print_config("train", c, {{"data", a.data}, {"train", train}, {"arch", arch}});
  RunLock lock(c.run);
  Dataset ds = open_dataset(a.data);
  char* out = nullptr;
  check(reglat_train(ds.get(), train.dump().c_str(), arch.dump().c_str(), c.run.c_str(), c.force, &out));
  Json r = take_json(out);
  const Json& e = r.at("eval");
  print({{"checkpoint", r.at("checkpoint")},
         {"epochs", r.at("epochs")},
         {"steps", r.at("steps")},
         {"model_fingerprint", r.at("model_fingerprint")},
         {"val_dice_before", e.at("dice_before").at("mean")},
         {"val_dice_after", e.at("dice_after").at("mean")},
         {"folding_mean", e.at("folding_fraction").at("mean")}});
  return 0;
}

struct EvalArgs {
  std::string data, checkpoint, split = "val", out;
};

int cmd_eval(const Common& c, EvalArgs a) {
  a.data = or_default(a.data, runs_root() / "data");
  a.out = or_default(a.out, fs::path(c.run) / ("eval_" + a.split + ".json"));
  print_config("eval", c, {{"data", a.data}, {"checkpoint", a.checkpoint}, {"split", a.split}, {"out", a.out}});
  RunLock lock(c.run);
  if (fs::exists(a.out) && !c.force) throw Failure{REGLAT_ERR_INVALID_ARGUMENT, a.out + " exists; pass --force"};
  Dataset ds = open_dataset(a.data);
  Model m = open_model(a.checkpoint, c.run);
  char* out = nullptr;
  check(reglat_evaluate(m.get(), ds.get(), a.split.c_str(), &out));
  const Json r = take_json(out);
  std::ofstream(a.out) << r.dump(2) << "\n";
  print({{"report", a.out},
         {"pairs", r.at("pairs").size()},
         {"dice_before", r.at("dice_before").at("mean")},
         {"dice_after", r.at("dice_after").at("mean")},
         {"folding_mean", r.at("folding_fraction").at("mean")},
         {"folding_max", r.at("folding_fraction").at("max")}});
  return 0;
}

struct LatentsArgs {
  std::string data, checkpoint, split = "train", out;
};

int cmd_latents(const Common& c, LatentsArgs a) {
  a.data = or_default(a.data, runs_root() / "data");
  a.out = or_default(a.out, fs::path(c.run) / ("latents_" + a.split + ".bin"));
  print_config("latents", c, {{"data", a.data}, {"checkpoint", a.checkpoint}, {"split", a.split}, {"out", a.out}});
  RunLock lock(c.run);
  if (fs::exists(a.out) && !c.force) throw Failure{REGLAT_ERR_INVALID_ARGUMENT, a.out + " exists; pass --force"};
  Dataset ds = open_dataset(a.data);
  Model m = open_model(a.checkpoint, c.run);
  char* out = nullptr;
  check(reglat_latents_collect(m.get(), ds.get(), a.split.c_str(), a.out.c_str(), &out));
  Json r = take_json(out);
  r.erase("subjects");
  print(r);
  return 0;
}

struct PcaArgs {
  std::string latents, out;
  int k = 32;
  bool center = false;
  std::vector<std::string> project;
};

int cmd_pca(const Common& c, PcaArgs a) {
  a.latents = or_default(a.latents, fs::path(c.run) / "latents_train.bin");
  a.out = or_default(a.out, fs::path(c.run) / "basis");
  print_config("pca", c, {{"latents", a.latents}, {"k", a.k}, {"center", a.center}, {"out", a.out}, {"project", a.project}});
  RunLock lock(c.run);
  reglat_basis* b = nullptr;
  check(reglat_pca_fit(a.latents.c_str(), a.k, a.center, a.out.c_str(), c.force, &b));
  Basis basis(b);
  std::vector<std::string> coeffs{(fs::path(a.out) / "coeffs.csv").string()};
  for (const auto& p : a.project) {
    const std::string csv = (fs::path(a.out) / ("coeffs_" + fs::path(p).stem().string() + ".csv")).string();
    check(reglat_project_latents(basis.get(), p.c_str(), csv.c_str()));
    coeffs.push_back(csv);
  }
  char* out = nullptr;
  check(reglat_basis_info(basis.get(), &out));
  const Json info = take_json(out);
  std::printf("component  evr        cumulative\n");
  for (std::size_t j = 0; j < info["evr"].size(); ++j)
    std::printf("%9zu  %.6f   %.6f\n", j + 1, info["evr"][j].get<double>(), info["cumulative_evr"][j].get<double>());
  std::printf("cumulative EVR at K=%d: %.6f\n", info["K"].get<int>(), info["cumulative_evr"].back().get<double>());
  print({{"basis", a.out}, {"coefficients", coeffs}, {"center", info["center"]}, {"model_fingerprint", info["model_fingerprint"]}});
  return 0;
}

struct ModelBasisArgs {
  std::string data, checkpoint, basis, subject;
};

void resolve(const Common& c, ModelBasisArgs& a) {
  a.data = or_default(a.data, runs_root() / "data");
  a.basis = or_default(a.basis, fs::path(c.run) / "basis");
}

Json model_basis_json(const ModelBasisArgs& a) {
  return {{"data", a.data}, {"checkpoint", a.checkpoint}, {"basis", a.basis}, {"subject", a.subject}};
}

struct ComponentArgs {
  ModelBasisArgs mb;
  int j = 1, axis = 0;
  double lambda = 100;
  std::int64_t index = -1;
  std::string out;
};

int cmd_component(const Common& c, ComponentArgs a) {
  resolve(c, a.mb);
  char name[64];
  std::snprintf(name, sizeof name, "j%d_lambda%g", a.j, a.lambda);
  a.out = or_default(a.out, fs::path(c.run) / "components" / name);
  Json cfg = model_basis_json(a.mb);
  cfg.update({{"j", a.j}, {"lambda", a.lambda}, {"axis", a.axis}, {"index", a.index}, {"out", a.out}});
  print_config("component", c, cfg);
  RunLock lock(c.run);
  Dataset ds = open_dataset(a.mb.data);
  Model m = open_model(a.mb.checkpoint, c.run);
  Basis b = open_basis(a.mb.basis);
  char* out = nullptr;
  check(reglat_component(m.get(), b.get(), ds.get(), a.mb.subject.empty() ? nullptr : a.mb.subject.c_str(), a.j,
                         a.lambda, a.axis, a.index, a.out.c_str(), c.force, &out));
  const Json p = take_json(out);
  print({{"out", a.out},
         {"subject", p["subject"]},
         {"axis", p["axis"]},
         {"index", p["index"]},
         {"jacobian_stats", p["jacobian_stats"]}});
  return 0;
}

struct SweepArgs {
  ModelBasisArgs mb;
  int j = 1;
  std::vector<double> lambdas{-200, -100, 0, 100, 200};
  std::vector<std::int64_t> slices{-1, -1, -1};
  std::string out;
};

int cmd_sweep(const Common& c, SweepArgs a) {
  resolve(c, a.mb);
  a.out = or_default(a.out, fs::path(c.run) / "sweeps" / ("j" + std::to_string(a.j)));
  if (a.slices.size() != 3) throw Failure{REGLAT_ERR_INVALID_ARGUMENT, "--slices takes three plane indices"};
  Json cfg = model_basis_json(a.mb);
  cfg.update({{"j", a.j}, {"lambdas", a.lambdas}, {"slices", a.slices}, {"out", a.out}});
  print_config("sweep", c, cfg);
  RunLock lock(c.run);
  Dataset ds = open_dataset(a.mb.data);
  Model m = open_model(a.mb.checkpoint, c.run);
  Basis b = open_basis(a.mb.basis);
  char* out = nullptr;
  check(reglat_sweep(m.get(), b.get(), ds.get(), a.mb.subject.empty() ? nullptr : a.mb.subject.c_str(), a.j,
                     a.lambdas.data(), a.lambdas.size(), a.slices.data(), a.out.c_str(), c.force, &out));
  const Json r = take_json(out);
  print({{"out", a.out}, {"subject", r.at("subject")}, {"images", r.at("images").size()}});
  return 0;
}

struct ProbeArgs {
  ModelBasisArgs mb;
  std::vector<std::string> transforms{"translation:z:10", "rotation:z:20", "scaling:0.2"};
  std::string split = "val", out;
  std::string compare_run, compare_checkpoint, compare_basis;
};

int cmd_probe(const Common& c, ProbeArgs a) {
  resolve(c, a.mb);
  a.out = or_default(a.out, fs::path(c.run) / "probes");
  const bool compare = !a.compare_run.empty() || !a.compare_checkpoint.empty();
  if (compare) a.compare_basis = or_default(a.compare_basis, fs::path(a.compare_run) / "basis");
  Json cfg = model_basis_json(a.mb);
  cfg.update({{"transform", a.transforms}, {"split", a.split}, {"out", a.out}});
  if (compare)
    cfg.update({{"compare_run", a.compare_run}, {"compare_checkpoint", a.compare_checkpoint}, {"compare_basis", a.compare_basis}});
  print_config("probe", c, cfg);
  RunLock lock(c.run);
  fs::create_directories(a.out);
  Dataset ds = open_dataset(a.mb.data);
  Model m = open_model(a.mb.checkpoint, c.run);
  Basis b = open_basis(a.mb.basis);
  Model other;
  Basis other_basis;
  if (compare) {
    other = open_model(a.compare_checkpoint, a.compare_run);
    other_basis = open_basis(a.compare_basis);
  }
  Json results = Json::array();
  for (const auto& t : a.transforms) {
    char* out = nullptr;
    check(reglat_probe_describe(t.c_str(), &out));
    const fs::path csv = fs::path(a.out) / take_json(out)["file"].get<std::string>();
    if (fs::exists(csv) && !c.force) throw Failure{REGLAT_ERR_INVALID_ARGUMENT, csv.string() + " exists; pass --force"};
    check(reglat_probe(m.get(), b.get(), ds.get(), a.split.c_str(), t.c_str(), a.out.c_str(), &out));
    Json s = take_json(out);
    Json row = {{"transform", s["transform"]},
                {"csv", s["csv"]},
                {"dominance_ratio", s["dominance_ratio"]},
                {"uniform_baseline", s["uniform_baseline"]},
                {"activation_count", s["activation_count"]}};
    if (compare) {
      // The checkpoint under --run is the no-skip model.
      check(reglat_probe_compare(m.get(), b.get(), other.get(), other_basis.get(), ds.get(), a.split.c_str(), t.c_str(),
                                 a.out.c_str(), &out));
      const Json r = take_json(out);
      row["activation_count_noskip"] = r.at("activation_count_noskip");
      row["activation_count_skip"] = r.at("activation_count_skip");
      row["comparison_csv"] = r.at("csv");
    }
    results.push_back(row);
  }
  print(results);
  return 0;
}

struct FieldPcaArgs {
  std::string data, checkpoint, reference, out;
  int k = 32;
  bool center = false;
};

int cmd_fieldpca(const Common& c, FieldPcaArgs a) {
  a.data = or_default(a.data, runs_root() / "data");
  a.out = or_default(a.out, fs::path(c.run) / "fieldpca");
  print_config("fieldpca", c,
               {{"data", a.data}, {"checkpoint", a.checkpoint}, {"reference", a.reference}, {"k", a.k},
                {"center", a.center}, {"out", a.out}});
  RunLock lock(c.run);
  Dataset ds = open_dataset(a.data);
  Model m = open_model(a.checkpoint, c.run);
  char* out = nullptr;
  check(reglat_fieldpca(m.get(), ds.get(), a.reference.empty() ? nullptr : a.reference.c_str(), a.k, a.center,
                        a.out.c_str(), c.force, &out));
  const Json r = take_json(out);
  print({{"basis", a.out},
         {"reference", r.at("reference")},
         {"rows", r.at("rows")},
         {"K", r["K"]},
         {"cumulative_evr", r.at("cumulative_evr").back()}});
  return 0;
}

struct ServeArgs {
  ModelBasisArgs mb;
  std::string probes, host = "127.0.0.1", cors_origin = "*";
  int port = 8080;
};

reglat_service* g_service = nullptr;

extern "C" void on_signal(int) {
  if (g_service != nullptr) reglat_service_stop(g_service);
}

int cmd_serve(const Common& c, ServeArgs a) {
  resolve(c, a.mb);
  a.probes = or_default(a.probes, fs::path(c.run) / "probes");
  std::string checkpoint = a.mb.checkpoint;
  if (checkpoint.empty()) {
    // Resolve the latest checkpoint once so the service sees a fixed file.
    int best = -1;
    if (fs::is_directory(c.run))
      for (const auto& e : fs::directory_iterator(c.run)) {
        int epoch = 0;
        const std::string f = e.path().filename().string();
        if (std::sscanf(f.c_str(), "checkpoint_%d.bin", &epoch) == 1 && epoch > best) {
          best = epoch;
          checkpoint = e.path().string();
        }
      }
    if (checkpoint.empty()) throw Failure{REGLAT_ERR_IO, "no checkpoint in " + c.run};
  }
  Json cfg = model_basis_json(a.mb);
  cfg.update({{"checkpoint", checkpoint}, {"probes", a.probes}, {"host", a.host}, {"port", a.port}, {"cors_origin", a.cors_origin}});
  print_config("serve", c, cfg);

  reglat_service* raw = nullptr;
  check(reglat_service_create(a.cors_origin.c_str(), &raw));
  ServicePtr svc(raw);
  int port = 0;
  check(reglat_service_bind(svc.get(), a.host.c_str(), a.port, &port));
  std::cerr << "listening on http://" << a.host << ":" << port << "\n";
  g_service = svc.get();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  // Requests answer 503 until the model, basis and dataset are loaded.
  Failure init_error{0, ""};
  std::thread loader([&] {
    const reglat_status s = reglat_service_initialize(svc.get(), checkpoint.c_str(), a.mb.basis.c_str(),
                                                      a.mb.data.c_str(), a.probes.c_str());
    if (s != REGLAT_OK) {
      init_error = {static_cast<int>(s), reglat_last_error()};
      reglat_service_stop(svc.get());
    } else {
      std::cerr << "service ready\n";
    }
  });
  const reglat_status s = reglat_service_listen(svc.get());
  loader.join();
  g_service = nullptr;
  if (init_error.code != 0) throw init_error;
  check(s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reglat: latent-space deformable registration toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", reglat_version());

  std::vector<std::pair<CLI::App*, Common>> commons;
  commons.reserve(16);
  auto sub = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    commons.emplace_back(s, Common{});
    add_common(s, commons.back().second);
    return s;
  };
  auto common_of = [&](CLI::App* s) -> const Common& {
    for (auto& [a, c] : commons)
      if (a == s) return c;
    throw Failure{REGLAT_ERR_INTERNAL, "no common options"};
  };
  auto data_opt = [](CLI::App* s, std::string& v) {
    s->add_option("--data", v, "Dataset manifest or directory (default $REGLAT_RUNS/data)");
  };
  auto ckpt_opt = [](CLI::App* s, std::string& v) {
    s->add_option("--checkpoint", v, "Checkpoint file (default: latest in --run)");
  };
  auto mb_opts = [&](CLI::App* s, ModelBasisArgs& mb, bool subject) {
    data_opt(s, mb.data);
    ckpt_opt(s, mb.checkpoint);
    s->add_option("--basis", mb.basis, "Basis directory (default <run>/basis)");
    if (subject) s->add_option("--subject", mb.subject, "Subject id (default: first validation subject)");
  };

  PhantomArgs phantom;
  CLI::App* p = sub("phantom", "Generate a synthetic phantom dataset");
  p->add_option("--out", phantom.out, "Output directory (default $REGLAT_RUNS/data)");
  p->add_option("--preset", phantom.preset, "translation or plain (no pose jitter)")->capture_default_str();
  p->add_option("--spec", phantom.spec, "Full phantom specification as a JSON file");
  p->add_option("--size", phantom.size, "Volume edge length");
  p->add_option("--subjects", phantom.subjects, "Number of subjects");
  p->add_option("--val", phantom.val, "Number of validation subjects");
  p->add_option("--noise", phantom.noise, "Gaussian noise sigma");

  TrainArgs train;
  CLI::App* t = sub("train", "Train the registration network");
  data_opt(t, train.data);
  t->add_option("--epochs", train.epochs, "Epochs (0 writes the initialization checkpoint only)")->capture_default_str();
  t->add_option("--lr", train.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--batch", train.batch, "Pairs per step")->capture_default_str();
  t->add_option("--alpha", train.alpha, "Smoothness weight")->capture_default_str();
  t->add_option("--beta", train.beta, "Jacobian penalty weight")->capture_default_str();
  t->add_option("--ncc-window", train.ncc_window, "Local NCC window (0 = global)")->capture_default_str();
  t->add_flag("--augment,!--no-augment", train.augment, "Random affine augmentation")->capture_default_str();
  t->add_option("--eval-every", train.eval_every, "Epochs between checkpoints (0 = end only)")->capture_default_str();
  t->add_option("--threads", train.threads, "Worker threads")->capture_default_str();
  t->add_option("--base-channels", train.base_channels, "Channels at full resolution")->capture_default_str();
  t->add_option("--downsamplings", train.downsamplings, "Encoder downsampling steps")->capture_default_str();
  t->add_flag("--skip", train.skip, "Enable skip connections");
  t->add_option("--norm", train.norm, "instance or none")->capture_default_str();

  EvalArgs eval;
  CLI::App* e = sub("eval", "Evaluate registration Dice and folding");
  data_opt(e, eval.data);
  ckpt_opt(e, eval.checkpoint);
  e->add_option("--split", eval.split, "train or val")->capture_default_str();
  e->add_option("--out", eval.out, "Report path (default <run>/eval_<split>.json)");

  LatentsArgs latents;
  CLI::App* l = sub("latents", "Encode a split into a latent matrix");
  data_opt(l, latents.data);
  ckpt_opt(l, latents.checkpoint);
  l->add_option("--split", latents.split, "train or val")->capture_default_str();
  l->add_option("--out", latents.out, "Output file (default <run>/latents_<split>.bin)");

  PcaArgs pca;
  CLI::App* pc = sub("pca", "Fit the principal basis of a latent matrix");
  pc->add_option("--latents", pca.latents, "Latent matrix (default <run>/latents_train.bin)");
  pc->add_option("--k", pca.k, "Number of components")->capture_default_str();
  pc->add_flag("--center", pca.center, "Subtract the mean before the decomposition");
  pc->add_option("--out", pca.out, "Basis directory (default <run>/basis)");
  pc->add_option("--project", pca.project, "Further latent matrices to project into coefficient files");

  ComponentArgs component;
  CLI::App* co = sub("component", "Decode lambda * u_j and warp a subject");
  mb_opts(co, component.mb, true);
  co->add_option("--j", component.j, "Component index (1-based)")->capture_default_str();
  co->add_option("--lambda", component.lambda, "Scale of the principal vector")->capture_default_str();
  co->add_option("--axis", component.axis, "Slice axis (0 = z)")->capture_default_str();
  co->add_option("--index", component.index, "Slice index (-1 = center)")->capture_default_str();
  co->add_option("--out", component.out, "Output directory (default <run>/components/j<j>_lambda<lambda>)");

  SweepArgs sweep;
  CLI::App* sw = sub("sweep", "Export slices over a range of lambda");
  mb_opts(sw, sweep.mb, true);
  sw->add_option("--j", sweep.j, "Component index (1-based)")->capture_default_str();
  sw->add_option("--lambdas", sweep.lambdas, "Lambda values")->delimiter(',')->capture_default_str();
  sw->add_option("--slices", sweep.slices, "Plane index per axis (-1 = center)")->delimiter(',')->capture_default_str();
  sw->add_option("--out", sweep.out, "Output directory (default <run>/sweeps/j<j>)");

  ProbeArgs probe;
  CLI::App* pr = sub("probe", "Affine-perturbation probe of the latent basis");
  mb_opts(pr, probe.mb, false);
  pr->add_option("--transform", probe.transforms, "kind[:axis[:amount]]; repeatable")->capture_default_str();
  pr->add_option("--split", probe.split, "train or val")->capture_default_str();
  pr->add_option("--out", probe.out, "Output directory (default <run>/probes)");
  pr->add_option("--compare-run", probe.compare_run, "Run directory of a skip-connection model to compare against");
  pr->add_option("--compare-checkpoint", probe.compare_checkpoint, "Checkpoint of the comparison model");
  pr->add_option("--compare-basis", probe.compare_basis, "Basis of the comparison model (default <compare-run>/basis)");

  FieldPcaArgs fieldpca;
  CLI::App* f = sub("fieldpca", "PCA applied directly to deformation fields");
  data_opt(f, fieldpca.data);
  ckpt_opt(f, fieldpca.checkpoint);
  f->add_option("--reference", fieldpca.reference, "Fixed subject (default: first validation subject)");
  f->add_option("--k", fieldpca.k, "Number of components")->capture_default_str();
  f->add_flag("--center", fieldpca.center, "Subtract the mean field");
  f->add_option("--out", fieldpca.out, "Basis directory (default <run>/fieldpca)");

  ServeArgs serve;
  CLI::App* sv = sub("serve", "Serve the read-only HTTP API");
  mb_opts(sv, serve.mb, false);
  sv->add_option("--probes", serve.probes, "Directory of probe CSVs (default <run>/probes)");
  sv->add_option("--host", serve.host, "Bind address")->capture_default_str();
  sv->add_option("--port", serve.port, "TCP port")->capture_default_str();
  sv->add_option("--cors-origin", serve.cors_origin, "Access-Control-Allow-Origin value")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : REGLAT_ERR_INVALID_ARGUMENT;
  }

  try {
    CLI::App* chosen = app.get_subcommands().front();
    const Common& c = common_of(chosen);
    try {
      apply_config(chosen, c.config);
    } catch (const CLI::Error& err) {
      throw Failure{REGLAT_ERR_INVALID_ARGUMENT, std::string("config: ") + err.what()};
    }
    reglat_set_verbose(!c.quiet);
    if (chosen == p) return cmd_phantom(c, phantom);
    if (chosen == t) return cmd_train(c, train);
    if (chosen == e) return cmd_eval(c, eval);
    if (chosen == l) return cmd_latents(c, latents);
    if (chosen == pc) return cmd_pca(c, pca);
    if (chosen == co) return cmd_component(c, component);
    if (chosen == sw) return cmd_sweep(c, sweep);
    if (chosen == pr) return cmd_probe(c, probe);
    if (chosen == f) return cmd_fieldpca(c, fieldpca);
    if (chosen == sv) return cmd_serve(c, serve);
    throw Failure{REGLAT_ERR_INTERNAL, "unhandled command"};
  } catch (const Failure& err) {
    std::cerr << "reglat: " << err.message << "\n";
    return err.code;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "reglat: " << err.what() << "\n";
    return REGLAT_ERR_IO;
  } catch (const Json::exception& err) {
    std::cerr << "reglat: " << err.what() << "\n";
    return REGLAT_ERR_FORMAT;
  } catch (const std::exception& err) {
    std::cerr << "reglat: " << err.what() << "\n";
    return REGLAT_ERR_INTERNAL;
  }
}
