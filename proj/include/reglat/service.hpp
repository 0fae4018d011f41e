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

// Read-only HTTP API over a checkpoint, its PCA basis and a dataset.
//
// Routes:
//   GET  /api/meta
//   GET  /api/subject/{id}/slice?axis=&index=
//   POST /api/deform        {subject_id, coefficients[K], axis, slice_index}
//   GET  /api/probe/{transform}
//
// Requests are dispatched by Service::handle, which the HTTP layer wraps, so
// handlers can be exercised in process.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "reglat/latent.hpp"
#include "reglat/probes.hpp"

namespace reglat::service {

inline constexpr int kApiVersion = 1;

struct ServiceConfig {
  std::filesystem::path checkpoint;
  std::filesystem::path basis_dir;
  std::filesystem::path manifest;
  std::filesystem::path probe_dir;  // holds <transform>.csv files; may be empty
};

/// Immutable state shared by all handlers.
struct Model {
  RegNet<float> net;
  PCABasis basis;
  std::map<std::string, Subject> subjects;  // every manifest subject
  std::vector<std::string> subject_order;   // manifest order
  std::filesystem::path probe_dir;
  std::string basis_fingerprint;

  /// Throws kFingerprintMismatch when basis and checkpoint disagree.
  static std::shared_ptr<const Model> load(const ServiceConfig& cfg);
};

/// Fingerprint over the stored (float32) components and mean.
std::string basis_fingerprint(const PCABasis& basis);

/// Probe CSV name for a transform, e.g. "translation_z_10.csv".
std::string probe_file_name(const ProbeSpec& spec);

std::string base64_encode(const std::string& bytes);

/// {api_version, subject, axis, index, rows, cols, image, contours}.
nlohmann::json slice_payload(const Subject& s, int axis, std::int64_t index);

/// Warped slice for grid = integrate(decode(sum_j a_j u_j)), with original
/// and deformed contours and Jacobian statistics. Shared by POST /api/deform
/// and the component command.
nlohmann::json deform_payload(const RegNet<float>& net, const PCABasis& basis, const Subject& s,
                              const std::vector<double>& coefficients, int axis,
                              std::int64_t index);

struct Response {
  int status = 200;
  nlohmann::json body;
};

class Service {
 public:
  explicit Service(std::string cors_origin = "*");
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void initialize(std::shared_ptr<const Model> model);
  bool ready() const;
  const std::string& cors_origin() const { return cors_origin_; }

  Response handle(const std::string& method, const std::string& path,
                  const std::multimap<std::string, std::string>& query,
                  const std::string& body) const;

  /// Binds to `host`; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Requires bind().
  void listen();
  void stop();

 private:
  std::shared_ptr<const Model> model() const;

  std::string cors_origin_;
  mutable std::mutex mu_;
  std::shared_ptr<const Model> model_;
  struct Http;
  std::unique_ptr<Http> http_;
};

}  // namespace reglat::service
